//! Run manifests. Every command writes one describing its fully
//! resolved configuration plus input and output digests, so any run can
//! be re-executed later and verified byte-for-byte.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use scout_core::analysis::GridSpec;
use scout_core::driver::{EndpointConfig, ProbeProtocolConfig, ProblemRequest};
use scout_core::policy::PolicyConfig;
use scout_core::sim::SimConfig;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: ResolvedCommand,
    /// Input path to content digest; verified before a replay runs.
    pub input_digests: BTreeMap<String, String>,
    /// Output file name to content digest; compared after a replay.
    pub outputs: BTreeMap<String, String>,
}

/// A command with every default materialized. Replays execute this
/// record directly, bypassing flag parsing.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "subcommand", rename_all = "kebab-case")]
pub enum ResolvedCommand {
    Validate {
        pool: PathBuf,
    },
    Simulate {
        pool: PathBuf,
        configs: Vec<SimConfig>,
        compare: bool,
    },
    Analyze {
        pool: PathBuf,
        mode: AnalyzeMode,
    },
    ProbeOnline {
        endpoint: EndpointConfig,
        protocol: ProbeProtocolConfig,
        problem: ProblemRequest,
        mode: OnlineMode,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnalyzeMode {
    Surface { grid: GridSpec },
    Onset,
    Scaling { sweep: Vec<SimConfig> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OnlineMode {
    Collect,
    Live { policy: PolicyConfig },
}

pub fn bytes_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn file_digest(path: &Path) -> std::io::Result<String> {
    Ok(bytes_digest(&fs::read(path)?))
}

/// Creates a fresh run directory under `parent`, named by timestamp and
/// command label. Only the directory name carries the wall clock; files
/// inside stay byte-reproducible.
pub fn create_run_dir(parent: &Path, label: &str) -> std::io::Result<PathBuf> {
    fs::create_dir_all(parent)?;
    let millis = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0);
    for attempt in 0u64.. {
        let name = if attempt == 0 {
            format!("{millis}-{label}")
        } else {
            format!("{millis}-{label}-{attempt}")
        };
        let dir = parent.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e),
        }
    }
    unreachable!("directory creation either returns or errors")
}

pub fn write_output(
    dir: &Path,
    name: &str,
    contents: &str,
    outputs: &mut BTreeMap<String, String>,
) -> std::io::Result<()> {
    fs::write(dir.join(name), contents)?;
    outputs.insert(name.to_string(), bytes_digest(contents.as_bytes()));
    Ok(())
}

pub fn write_manifest(dir: &Path, manifest: &RunManifest) -> std::io::Result<()> {
    let json = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    fs::write(dir.join(MANIFEST_FILE), json)
}

pub fn load_manifest(path: &Path) -> Result<RunManifest, String> {
    let bytes = fs::read(path)
        .map_err(|e| format!("cannot read manifest {}: {e}", path.display()))?;
    serde_json::from_slice(&bytes).map_err(|e| format!("cannot parse manifest: {e}"))
}
