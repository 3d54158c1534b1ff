//! Command-line front end: pool validation, policy replay simulation,
//! convergence analysis, live collection, and manifest replay.

mod manifest;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use scout_core::analysis::{
    onset_csv, onset_distribution, scaling_csv, scaling_curve, surface_csv, width_depth_surface,
    AnalysisError, GridSpec,
};
use scout_core::driver::{
    collect_pool, run_live, DriverError, EndpointConfig, HttpTransport, ProbeProtocolConfig,
    ProblemRequest, SamplingConfig, API_KEY_VAR,
};
use scout_core::pool::{load_pools, pool_digest, save_pools, PoolError, PoolSet};
use scout_core::sim::{
    compare, comparison_csv, format_k, report_records, simulate, PolicySpec, SimConfig, SimError,
};
use scout_core::{answer::canonicalize, policy::PolicyConfig};

use manifest::{
    create_run_dir, file_digest, load_manifest, write_manifest, write_output, AnalyzeMode,
    OnlineMode, ResolvedCommand, RunManifest,
};

#[derive(Parser)]
#[command(
    name = "scout",
    version,
    about = "Consensus-controlled parallel sampling toolkit: validate candidate pools, \
             replay control policies over them, analyze convergence, and drive live collection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a pool file against every structural invariant
    Validate(ValidateArgs),
    /// Replay control policies over a pool with seeded resampling
    Simulate(SimulateArgs),
    /// Accuracy surfaces, convergence onsets, and scaling curves
    Analyze(AnalyzeArgs),
    /// Collect probed trajectories from a generation endpoint, or run
    /// live consensus control against it
    ProbeOnline(ProbeOnlineArgs),
    /// Re-execute a recorded manifest and verify byte-identical outputs
    Replay(ReplayArgs),
}

#[derive(Args)]
struct ValidateArgs {
    /// Pool file (line-delimited JSON, one problem per line)
    #[arg(long)]
    pool: PathBuf,
    /// Parent directory for run outputs
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// Pool file to replay against
    #[arg(long)]
    pool: PathBuf,
    /// Policy to run: parallel-probe, sc, asc, esc, or sac. Repeat the
    /// flag with --compare to run several on identical draws.
    #[arg(long = "policy", required = true)]
    policies: Vec<String>,
    /// Branches drawn per repeat
    #[arg(long, default_value_t = 64)]
    width: usize,
    /// Resampling repeats per problem
    #[arg(long, default_value_t = 64)]
    repeats: usize,
    /// Base seed for all draws
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Consecutive identical consensus steps required to stop
    /// (parallel-probe)
    #[arg(long)]
    u: Option<usize>,
    /// Consecutive consensus deviations before a branch is pruned
    /// (parallel-probe)
    #[arg(long)]
    k: Option<usize>,
    /// Warmup steps before stopping or pruning may trigger; 0 disables
    /// warmup (parallel-probe)
    #[arg(long)]
    warmup: Option<usize>,
    /// Hard cap on probe steps (parallel-probe)
    #[arg(long)]
    max_steps: Option<usize>,
    /// Disable deviation-based branch pruning (parallel-probe)
    #[arg(long)]
    no_prune: bool,
    /// Disable consensus-based early stopping (parallel-probe)
    #[arg(long)]
    no_stop: bool,
    /// Disable the warmup stage (parallel-probe)
    #[arg(long)]
    no_warmup: bool,
    /// Round size for chunked unanimity stopping (esc)
    #[arg(long)]
    esc_chunk: Option<usize>,
    /// Posterior mass required to stop one-at-a-time sampling (asc)
    #[arg(long)]
    asc_threshold: Option<f64>,
    /// Monte Carlo draws behind the posterior estimate (asc)
    #[arg(long)]
    asc_draws: Option<usize>,
    /// Per-branch self-agreement window (sac)
    #[arg(long)]
    sac_window: Option<usize>,
    /// Charge recorded forced-answer overhead to token counts
    #[arg(long)]
    include_probe_overhead: bool,
    /// Enumerate every width-subset instead of sampling repeats
    #[arg(long)]
    exhaustive: bool,
    /// Refuse exhaustive enumeration above this many subsets
    #[arg(long, default_value_t = 100_000)]
    exhaustive_cap: u64,
    /// Worker threads; output bytes never depend on this
    #[arg(long)]
    jobs: Option<usize>,
    /// Emit a comparison table across the given policies
    #[arg(long)]
    compare: bool,
    /// Parent directory for run outputs
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Pool file to analyze
    #[arg(long)]
    pool: PathBuf,
    /// Compute the width-by-depth accuracy surface
    #[arg(long)]
    surface: bool,
    /// Compute per-problem consensus-onset records
    #[arg(long)]
    onset: bool,
    /// Compute an accuracy-versus-token scaling curve
    #[arg(long)]
    scaling: bool,
    /// Surface widths, comma separated
    #[arg(long, value_delimiter = ',')]
    widths: Vec<usize>,
    /// Surface depths in tokens, comma separated
    #[arg(long, value_delimiter = ',')]
    depths: Vec<u64>,
    /// Minimum covered problems for a surface cell to count as stable
    #[arg(long, default_value_t = 1)]
    coverage_threshold: usize,
    /// Policy swept by --scaling
    #[arg(long, default_value = "sc")]
    scaling_policy: String,
    /// Widths swept by --scaling, comma separated
    #[arg(long, value_delimiter = ',')]
    scaling_widths: Vec<usize>,
    /// Subsample repeats per cell or sweep point
    #[arg(long, default_value_t = 64)]
    repeats: usize,
    /// Base seed for all draws
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads; output bytes never depend on this
    #[arg(long)]
    jobs: Option<usize>,
    /// Parent directory for run outputs
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct ProbeOnlineArgs {
    /// Base URL of the generation service
    #[arg(long)]
    endpoint: String,
    /// Model name passed through to the service
    #[arg(long)]
    model: String,
    /// Collect full trajectories into a pool file
    #[arg(long)]
    collect: bool,
    /// Run live consensus control instead of plain collection
    #[arg(long)]
    live: bool,
    /// Identifier recorded in the pool
    #[arg(long)]
    problem_id: String,
    /// Problem prompt text
    #[arg(long)]
    prompt: Option<String>,
    /// File containing the problem prompt
    #[arg(long)]
    prompt_file: Option<PathBuf>,
    /// Gold answer, when known
    #[arg(long)]
    gold: Option<String>,
    /// Branches to sample
    #[arg(long, default_value_t = 128)]
    branches: usize,
    /// Tokens between forced-answer probes
    #[arg(long, default_value_t = 500)]
    interval: u64,
    /// Base sampling seed; branch seeds are seed + branch id
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Text appended to a prefix copy to force an answer
    #[arg(long, default_value = "</think> The final answer is")]
    forcing_suffix: String,
    /// Token cap for each forced answer
    #[arg(long, default_value_t = 32)]
    answer_max_tokens: u64,
    /// Stop sequence for forced answers; repeatable
    #[arg(long, default_value = "\n")]
    answer_stop: Vec<String>,
    /// Per-branch trajectory token ceiling
    #[arg(long, default_value_t = 30_000)]
    max_branch_tokens: u64,
    /// Sampling temperature
    #[arg(long, default_value_t = 0.6)]
    temperature: f64,
    /// Nucleus sampling mass
    #[arg(long, default_value_t = 0.95)]
    top_p: f64,
    /// In-flight request cap
    #[arg(long, default_value_t = 16)]
    max_concurrent: usize,
    /// Per-request timeout in seconds
    #[arg(long, default_value_t = 120)]
    timeout_secs: u64,
    /// Transport attempts per request, including the first
    #[arg(long, default_value_t = 3)]
    max_attempts: u32,
    /// Live branch count; defaults to --branches
    #[arg(long)]
    width: Option<usize>,
    /// Consecutive identical consensus steps required to stop (live)
    #[arg(long)]
    u: Option<usize>,
    /// Consecutive consensus deviations before a branch is pruned (live)
    #[arg(long)]
    k: Option<usize>,
    /// Warmup steps; 0 disables warmup (live)
    #[arg(long)]
    warmup: Option<usize>,
    /// Hard cap on probe steps (live)
    #[arg(long)]
    max_steps: Option<usize>,
    /// Disable deviation-based branch pruning (live)
    #[arg(long)]
    no_prune: bool,
    /// Disable consensus-based early stopping (live)
    #[arg(long)]
    no_stop: bool,
    /// Disable the warmup stage (live)
    #[arg(long)]
    no_warmup: bool,
    /// Parent directory for run outputs
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct ReplayArgs {
    /// Manifest written by a previous run
    #[arg(long)]
    manifest: PathBuf,
    /// Parent directory for the replayed outputs
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

enum CliError {
    Usage(String),
    Runtime(String),
}

fn usage(message: impl Into<String>) -> CliError {
    CliError::Usage(message.into())
}

fn runtime(message: impl Into<String>) -> CliError {
    CliError::Runtime(message.into())
}

fn pool_error(e: PoolError) -> CliError {
    match e {
        PoolError::Io(_) => runtime(e.to_string()),
        _ => usage(e.to_string()),
    }
}

fn sim_error(e: SimError) -> CliError {
    match e {
        SimError::Pool(p) => pool_error(p),
        other => usage(other.to_string()),
    }
}

fn analysis_error(e: AnalysisError) -> CliError {
    match e {
        AnalysisError::Pool(p) => pool_error(p),
        AnalysisError::Sim(s) => sim_error(*s),
        other => usage(other.to_string()),
    }
}

fn driver_error(e: DriverError) -> CliError {
    match e {
        DriverError::MissingCredential | DriverError::InvalidConfig { .. } => {
            usage(e.to_string())
        }
        DriverError::Policy(_) => usage(e.to_string()),
        DriverError::Pool(p) => pool_error(p),
        DriverError::BranchFailed { .. } | DriverError::AllBranchesFailed { .. } => {
            runtime(e.to_string())
        }
    }
}

fn io_error(context: &str, e: std::io::Error) -> CliError {
    runtime(format!("{context}: {e}"))
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                std::process::exit(0);
            }
            eprint!("{e}");
            std::process::exit(1);
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default()).try_init();
    let code = match run(cli) {
        Ok(()) => 0,
        Err(CliError::Usage(message)) => {
            eprintln!("error: {message}");
            1
        }
        Err(CliError::Runtime(message)) => {
            eprintln!("error: {message}");
            2
        }
    };
    std::process::exit(code);
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Validate(args) => {
            let resolved = ResolvedCommand::Validate {
                pool: args.pool.clone(),
            };
            run_command(&resolved, &args.out, "validate")
        }
        Command::Simulate(args) => {
            let resolved = resolve_simulate(&args)?;
            run_command(&resolved, &args.out, "simulate")
        }
        Command::Analyze(args) => {
            let resolved = resolve_analyze(&args)?;
            run_command(&resolved, &args.out, "analyze")
        }
        Command::ProbeOnline(args) => {
            let resolved = resolve_probe_online(&args)?;
            run_command(&resolved, &args.out, "probe-online")
        }
        Command::Replay(args) => cmd_replay(&args),
    }
}

/// Executes a resolved command into a fresh run directory and writes
/// its manifest.
fn run_command(resolved: &ResolvedCommand, out: &Path, label: &str) -> Result<(), CliError> {
    let run_dir =
        create_run_dir(out, label).map_err(|e| io_error("cannot create run directory", e))?;
    let (input_digests, outputs) = execute(resolved, &run_dir)?;
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        command: resolved.clone(),
        input_digests,
        outputs,
    };
    write_manifest(&run_dir, &manifest).map_err(|e| io_error("cannot write manifest", e))?;
    println!("run dir: {}", run_dir.display());
    Ok(())
}

type Digests = BTreeMap<String, String>;

/// Runs one resolved command, returning (input digests, output digests).
fn execute(resolved: &ResolvedCommand, run_dir: &Path) -> Result<(Digests, Digests), CliError> {
    match resolved {
        ResolvedCommand::Validate { pool } => execute_validate(pool, run_dir),
        ResolvedCommand::Simulate {
            pool,
            configs,
            compare,
        } => execute_simulate(pool, configs, *compare, run_dir),
        ResolvedCommand::Analyze { pool, mode } => execute_analyze(pool, mode, run_dir),
        ResolvedCommand::ProbeOnline {
            endpoint,
            protocol,
            problem,
            mode,
        } => execute_probe_online(endpoint, protocol, problem, mode, run_dir),
    }
}

fn load_input(pool: &Path) -> Result<(PoolSet, Digests), CliError> {
    let digest = file_digest(pool)
        .map_err(|e| io_error(&format!("cannot read pool {}", pool.display()), e))?;
    let set = load_pools(pool).map_err(pool_error)?;
    let mut inputs = Digests::new();
    inputs.insert(pool.display().to_string(), digest);
    Ok((set, inputs))
}

fn execute_validate(pool: &Path, run_dir: &Path) -> Result<(Digests, Digests), CliError> {
    let (set, inputs) = load_input(pool)?;
    let branches: usize = set.pools.iter().map(|p| p.width()).sum();
    let summary = if set.pools.is_empty() {
        "0 pools (empty file)\n".to_string()
    } else {
        format!(
            "{} pools, {} branches, digest {}\n",
            set.pools.len(),
            branches,
            pool_digest(&set)
        )
    };
    print!("{summary}");
    let mut outputs = Digests::new();
    write_output(run_dir, "validation.txt", &summary, &mut outputs)
        .map_err(|e| io_error("cannot write validation report", e))?;
    Ok((inputs, outputs))
}

fn execute_simulate(
    pool: &Path,
    configs: &[SimConfig],
    with_compare: bool,
    run_dir: &Path,
) -> Result<(Digests, Digests), CliError> {
    let (set, inputs) = load_input(pool)?;
    let mut outputs = Digests::new();
    let mut reports = Vec::with_capacity(configs.len());
    for config in configs {
        let report = simulate(&set, config).map_err(sim_error)?;
        let name = format!("report-{}.jsonl", report.policy);
        write_output(run_dir, &name, &report_records(&report), &mut outputs)
            .map_err(|e| io_error("cannot write report", e))?;
        let accuracy = report
            .aggregate
            .accuracy_pct
            .map_or("n/a".to_string(), |a| format!("{a:.2}%"));
        println!(
            "{:<15} accuracy {:>7}  seq {:>8}  total {:>8}",
            report.policy,
            accuracy,
            format_k(report.aggregate.mean_seq_tokens),
            format_k(report.aggregate.mean_total_tokens)
        );
        reports.push(report);
    }
    if with_compare {
        let rows = compare(&reports).map_err(sim_error)?;
        let table = comparison_csv(&rows);
        write_output(run_dir, "table.csv", &table, &mut outputs)
            .map_err(|e| io_error("cannot write comparison table", e))?;
        print!("{table}");
    }
    Ok((inputs, outputs))
}

fn execute_analyze(
    pool: &Path,
    mode: &AnalyzeMode,
    run_dir: &Path,
) -> Result<(Digests, Digests), CliError> {
    let (set, inputs) = load_input(pool)?;
    let mut outputs = Digests::new();
    match mode {
        AnalyzeMode::Surface { grid } => {
            let cells = width_depth_surface(&set, grid).map_err(analysis_error)?;
            let stable = cells.iter().filter(|c| c.stable).count();
            write_output(run_dir, "surface.csv", &surface_csv(&cells), &mut outputs)
                .map_err(|e| io_error("cannot write surface", e))?;
            println!("surface: {} cells, {} stable", cells.len(), stable);
        }
        AnalyzeMode::Onset => {
            let dist = onset_distribution(&set).map_err(analysis_error)?;
            write_output(run_dir, "onset.csv", &onset_csv(&dist), &mut outputs)
                .map_err(|e| io_error("cannot write onset records", e))?;
            println!(
                "mean onset ratio {:.4} over {} problems",
                dist.mean_ratio,
                dist.records.len()
            );
        }
        AnalyzeMode::Scaling { sweep } => {
            let points = scaling_curve(&set, sweep).map_err(analysis_error)?;
            write_output(run_dir, "scaling.csv", &scaling_csv(&points), &mut outputs)
                .map_err(|e| io_error("cannot write scaling curve", e))?;
            for point in &points {
                let accuracy = point
                    .accuracy_pct
                    .map_or("n/a".to_string(), |a| format!("{a:.2}%"));
                println!(
                    "{} width {:>3}: {:>8} tokens, accuracy {}",
                    point.policy,
                    point.width,
                    format_k(point.mean_total_tokens),
                    accuracy
                );
            }
        }
    }
    Ok((inputs, outputs))
}

fn execute_probe_online(
    endpoint: &EndpointConfig,
    protocol: &ProbeProtocolConfig,
    problem: &ProblemRequest,
    mode: &OnlineMode,
    run_dir: &Path,
) -> Result<(Digests, Digests), CliError> {
    let mut endpoint = endpoint.clone();
    if endpoint.api_key.trim().is_empty() {
        endpoint.api_key = std::env::var(API_KEY_VAR)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| usage(DriverError::MissingCredential.to_string()))?;
    }
    let transport = HttpTransport::new(&endpoint).map_err(driver_error)?;
    let mut outputs = Digests::new();
    match mode {
        OnlineMode::Collect => {
            let collected =
                collect_pool(problem, &endpoint, protocol, &transport).map_err(driver_error)?;
            if collected.approximate_token_counts {
                log::warn!("service reported no usage; token counts were approximated");
            }
            let set = PoolSet::new(vec![collected.pool]);
            let path = run_dir.join("pool.jsonl");
            save_pools(&set, &path).map_err(pool_error)?;
            let digest = file_digest(&path).map_err(|e| io_error("cannot digest pool", e))?;
            outputs.insert("pool.jsonl".to_string(), digest);
            println!(
                "collected {} branches for {} -> pool.jsonl",
                set.pools[0].width(),
                problem.problem_id
            );
        }
        OnlineMode::Live { policy } => {
            let outcome =
                run_live(problem, &endpoint, protocol, policy, &transport).map_err(driver_error)?;
            let json =
                serde_json::to_string_pretty(&outcome).expect("outcome serializes");
            write_output(run_dir, "outcome.json", &json, &mut outputs)
                .map_err(|e| io_error("cannot write outcome", e))?;
            println!(
                "predicted {} at step {} ({:?}); seq {} total {}",
                outcome.predicted.raw(),
                outcome.stop_step,
                outcome.stop_reason,
                format_k(outcome.seq_tokens as f64),
                format_k(outcome.total_tokens as f64)
            );
        }
    }
    Ok((Digests::new(), outputs))
}

fn cmd_replay(args: &ReplayArgs) -> Result<(), CliError> {
    let manifest = load_manifest(&args.manifest).map_err(runtime)?;
    for (path, digest) in &manifest.input_digests {
        let now = file_digest(Path::new(path))
            .map_err(|e| io_error(&format!("cannot read input {path}"), e))?;
        if now != *digest {
            return Err(runtime(format!(
                "input {path} changed since the original run"
            )));
        }
    }
    let run_dir = create_run_dir(&args.out, "replay")
        .map_err(|e| io_error("cannot create run directory", e))?;
    let (input_digests, outputs) = execute(&manifest.command, &run_dir)?;
    let mut mismatched: Vec<&String> = Vec::new();
    for (name, digest) in &manifest.outputs {
        if outputs.get(name) != Some(digest) {
            mismatched.push(name);
        }
    }
    let extra: Vec<&String> = outputs
        .keys()
        .filter(|name| !manifest.outputs.contains_key(*name))
        .collect();
    if !mismatched.is_empty() || !extra.is_empty() {
        return Err(runtime(format!(
            "replay diverged; mismatched outputs: {mismatched:?}, unexpected outputs: {extra:?}"
        )));
    }
    let replayed = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        command: manifest.command,
        input_digests,
        outputs,
    };
    write_manifest(&run_dir, &replayed).map_err(|e| io_error("cannot write manifest", e))?;
    println!(
        "replay ok: {} outputs reproduced byte-for-byte",
        replayed.outputs.len()
    );
    println!("run dir: {}", run_dir.display());
    Ok(())
}

const POLICY_NAMES: [&str; 5] = ["parallel-probe", "sc", "asc", "esc", "sac"];

fn resolve_simulate(args: &SimulateArgs) -> Result<ResolvedCommand, CliError> {
    let names: Vec<&str> = args.policies.iter().map(String::as_str).collect();
    for name in &names {
        if !POLICY_NAMES.contains(name) {
            return Err(usage(format!(
                "unknown policy {name}; expected one of {}",
                POLICY_NAMES.join(", ")
            )));
        }
    }
    let distinct: BTreeSet<&str> = names.iter().copied().collect();
    if distinct.len() != names.len() {
        return Err(usage("each policy may be given at most once"));
    }
    if args.compare && names.len() < 2 {
        return Err(usage("--compare needs at least two --policy flags"));
    }
    if !args.compare && names.len() > 1 {
        return Err(usage("multiple --policy flags require --compare"));
    }
    let has = |name: &str| distinct.contains(name);
    let probe_flags_given = args.u.is_some()
        || args.k.is_some()
        || args.warmup.is_some()
        || args.max_steps.is_some()
        || args.no_prune
        || args.no_stop
        || args.no_warmup;
    if probe_flags_given && !has("parallel-probe") {
        return Err(usage(
            "--u/--k/--warmup/--max-steps/--no-prune/--no-stop/--no-warmup require --policy parallel-probe",
        ));
    }
    if args.esc_chunk.is_some() && !has("esc") {
        return Err(usage("--esc-chunk requires --policy esc"));
    }
    if (args.asc_threshold.is_some() || args.asc_draws.is_some()) && !has("asc") {
        return Err(usage("--asc-threshold/--asc-draws require --policy asc"));
    }
    if args.sac_window.is_some() && !has("sac") {
        return Err(usage("--sac-window requires --policy sac"));
    }
    if args.jobs == Some(0) {
        return Err(usage("--jobs must be at least 1"));
    }

    let configs = names
        .iter()
        .map(|name| SimConfig {
            policy: build_policy(name, args),
            width: args.width,
            repeats: args.repeats,
            base_seed: args.seed,
            include_probe_overhead: args.include_probe_overhead,
            exhaustive: args.exhaustive,
            exhaustive_cap: args.exhaustive_cap,
            jobs: args.jobs,
        })
        .collect();
    Ok(ResolvedCommand::Simulate {
        pool: args.pool.clone(),
        configs,
        compare: args.compare,
    })
}

fn build_policy(name: &str, args: &SimulateArgs) -> PolicySpec {
    match name {
        "parallel-probe" => {
            let defaults = PolicyConfig::new(1);
            PolicySpec::ParallelProbe {
                stability_window: args.u.unwrap_or(defaults.stability_window),
                prune_lookback: args.k.unwrap_or(defaults.prune_lookback),
                warmup_steps: match args.warmup {
                    Some(0) | None => defaults.warmup_steps,
                    Some(w) => w,
                },
                max_steps: args.max_steps,
                enable_pruning: !args.no_prune,
                enable_stopping: !args.no_stop,
                enable_warmup: !args.no_warmup && args.warmup != Some(0),
            }
        }
        "sc" => PolicySpec::Sc,
        "asc" => PolicySpec::Asc {
            threshold: args.asc_threshold.unwrap_or(0.95),
            mc_draws: args.asc_draws.unwrap_or(4000),
        },
        "esc" => PolicySpec::Esc {
            chunk_size: args.esc_chunk.unwrap_or(8),
        },
        "sac" => PolicySpec::Sac {
            local_window: args.sac_window.unwrap_or(16),
        },
        other => unreachable!("policy {other} was validated"),
    }
}

fn default_policy_spec(name: &str) -> Result<PolicySpec, CliError> {
    match name {
        "parallel-probe" => Ok(PolicySpec::parallel_probe_defaults()),
        "sc" => Ok(PolicySpec::Sc),
        "asc" => Ok(PolicySpec::Asc {
            threshold: 0.95,
            mc_draws: 4000,
        }),
        "esc" => Ok(PolicySpec::Esc { chunk_size: 8 }),
        "sac" => Ok(PolicySpec::Sac { local_window: 16 }),
        other => Err(usage(format!(
            "unknown policy {other}; expected one of {}",
            POLICY_NAMES.join(", ")
        ))),
    }
}

fn resolve_analyze(args: &AnalyzeArgs) -> Result<ResolvedCommand, CliError> {
    let modes = [args.surface, args.onset, args.scaling]
        .iter()
        .filter(|&&m| m)
        .count();
    if modes != 1 {
        return Err(usage(
            "exactly one of --surface, --onset, --scaling is required",
        ));
    }
    if args.jobs == Some(0) {
        return Err(usage("--jobs must be at least 1"));
    }
    let mode = if args.surface {
        if args.widths.is_empty() || args.depths.is_empty() {
            return Err(usage("--surface requires --widths and --depths"));
        }
        AnalyzeMode::Surface {
            grid: GridSpec {
                widths: args.widths.clone(),
                depths: args.depths.clone(),
                repeats: args.repeats,
                base_seed: args.seed,
                coverage_threshold: args.coverage_threshold,
            },
        }
    } else if args.onset {
        AnalyzeMode::Onset
    } else {
        if args.scaling_widths.is_empty() {
            return Err(usage("--scaling requires --scaling-widths"));
        }
        let policy = default_policy_spec(&args.scaling_policy)?;
        let sweep = args
            .scaling_widths
            .iter()
            .map(|&width| SimConfig {
                policy: policy.clone(),
                width,
                repeats: args.repeats,
                base_seed: args.seed,
                include_probe_overhead: false,
                exhaustive: false,
                exhaustive_cap: 100_000,
                jobs: args.jobs,
            })
            .collect();
        AnalyzeMode::Scaling { sweep }
    };
    Ok(ResolvedCommand::Analyze {
        pool: args.pool.clone(),
        mode,
    })
}

fn resolve_probe_online(args: &ProbeOnlineArgs) -> Result<ResolvedCommand, CliError> {
    if args.collect == args.live {
        return Err(usage("exactly one of --collect or --live is required"));
    }
    let prompt = match (&args.prompt, &args.prompt_file) {
        (Some(text), None) => text.clone(),
        (None, Some(path)) => std::fs::read_to_string(path)
            .map_err(|e| io_error(&format!("cannot read prompt file {}", path.display()), e))?,
        _ => return Err(usage("exactly one of --prompt or --prompt-file is required")),
    };
    let width = args.width.unwrap_or(args.branches);
    let endpoint = EndpointConfig {
        base_url: args.endpoint.clone(),
        model_name: args.model.clone(),
        api_key: String::new(),
        max_concurrent_requests: args.max_concurrent,
        request_timeout_secs: args.timeout_secs,
        sampling: SamplingConfig {
            temperature: args.temperature,
            top_p: args.top_p,
            max_new_tokens: args.max_branch_tokens,
        },
        max_attempts: args.max_attempts,
        retry_initial_backoff_ms: 200,
    };
    let protocol = ProbeProtocolConfig {
        probe_interval_tokens: args.interval,
        branches: if args.live { width } else { args.branches },
        answer_forcing_suffix: args.forcing_suffix.clone(),
        answer_max_tokens: args.answer_max_tokens,
        stop_sequences: args.answer_stop.clone(),
        base_seed: args.seed,
    };
    endpoint.validate().map_err(driver_error)?;
    protocol.validate().map_err(driver_error)?;
    let mode = if args.collect {
        OnlineMode::Collect
    } else {
        let defaults = PolicyConfig::new(width);
        let policy = PolicyConfig {
            width,
            stability_window: args.u.unwrap_or(defaults.stability_window),
            prune_lookback: args.k.unwrap_or(defaults.prune_lookback),
            warmup_steps: match args.warmup {
                Some(0) | None => defaults.warmup_steps,
                Some(w) => w,
            },
            max_steps: args.max_steps,
            enable_pruning: !args.no_prune,
            enable_stopping: !args.no_stop,
            enable_warmup: !args.no_warmup && args.warmup != Some(0),
        };
        policy.validate().map_err(|e| usage(e.to_string()))?;
        OnlineMode::Live { policy }
    };
    Ok(ResolvedCommand::ProbeOnline {
        endpoint,
        protocol,
        problem: ProblemRequest {
            problem_id: args.problem_id.clone(),
            prompt,
            gold_answer: args.gold.as_deref().map(canonicalize),
        },
        mode,
    })
}
