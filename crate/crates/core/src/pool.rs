//! Candidate pools: frozen per-problem branch traces with persistence,
//! validation, and seeded subsampling.
//!
//! A pool freezes everything a sampling run produced for one problem,
//! meaning every branch's per-step probe answers, token grid, and final
//! answer, so control policies can later be replayed against it offline. Pools
//! are stored as line-delimited JSON, one problem per line; answers are
//! stored raw and canonicalized on load.

use std::collections::BTreeMap;
use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answer::{canonicalize, Answer};

/// One sampled reasoning branch: per-probe-step intermediate answers,
/// the cumulative token grid, and the natural termination point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BranchTrace {
    pub branch_id: u32,
    /// Entry `t - 1` is the branch's forced answer at probe step `t`.
    pub probe_answers: Vec<Answer>,
    /// Tokens generated by the end of each probe step; strictly
    /// increasing, last entry at most `natural_length_tokens`.
    pub cumulative_tokens: Vec<u64>,
    /// Answer produced at natural termination.
    pub final_answer: Answer,
    pub natural_length_tokens: u64,
    /// Tokens spent on forced-answer probes, tracked separately from the
    /// reasoning stream and excluded from token metrics by default.
    pub probe_overhead_tokens: Option<u64>,
}

impl BranchTrace {
    /// Number of recorded probe steps.
    pub fn probe_steps(&self) -> usize {
        self.probe_answers.len()
    }

    /// Probe step at which the branch naturally terminates:
    /// `ceil(natural_length_tokens / delta)`.
    pub fn natural_steps(&self, delta: u64) -> usize {
        (self.natural_length_tokens.div_ceil(delta)) as usize
    }
}

/// All sampled branches for one problem, plus the gold answer when the
/// problem is labeled and the probe interval Δ the pool was built at.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProblemPool {
    pub problem_id: String,
    pub gold_answer: Option<Answer>,
    pub probe_interval_tokens: u64,
    pub branches: Vec<BranchTrace>,
}

impl ProblemPool {
    pub fn width(&self) -> usize {
        self.branches.len()
    }
}

/// A set of problem pools with free-form metadata.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PoolSet {
    pub pools: Vec<ProblemPool>,
    pub metadata: BTreeMap<String, String>,
}

impl PoolSet {
    pub fn new(pools: Vec<ProblemPool>) -> Self {
        PoolSet {
            pools,
            metadata: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Error)]
pub enum PoolError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("problem {problem_id} branch {branch_id}: {violation}")]
    Validation {
        problem_id: String,
        branch_id: i64,
        violation: String,
    },
    #[error("subsample width {width} exceeds pool size {available} for problem {problem_id}")]
    WidthExceedsPool {
        problem_id: String,
        width: usize,
        available: usize,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

// Wire records: field names are part of the file format.

#[derive(Serialize, Deserialize)]
struct BranchRecord {
    branch_id: u32,
    probe_answers: Vec<String>,
    cumulative_tokens: Vec<u64>,
    final_answer: String,
    natural_length_tokens: u64,
    #[serde(default)]
    probe_overhead_tokens: Option<u64>,
}

#[derive(Serialize, Deserialize)]
struct ProblemRecord {
    problem_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gold_answer: Option<String>,
    probe_interval_tokens: u64,
    branches: Vec<BranchRecord>,
}

/// Loads and validates a pool file (line-delimited JSON, one problem per
/// line). Every branch invariant is checked; the first violation aborts
/// the load with the offending problem and branch named.
pub fn load_pools(path: impl AsRef<Path>) -> Result<PoolSet, PoolError> {
    let file = fs::File::open(path.as_ref())?;
    let reader = BufReader::new(file);
    let mut pools = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ProblemRecord =
            serde_json::from_str(&line).map_err(|e| PoolError::Parse {
                line: idx + 1,
                reason: e.to_string(),
            })?;
        pools.push(pool_from_record(record)?);
    }
    let set = PoolSet::new(pools);
    validate_set(&set)?;
    Ok(set)
}

/// Writes a pool set in the line-delimited format read by
/// [`load_pools`]. Answers are written raw; a save/load round trip is
/// the identity up to structural equality.
pub fn save_pools(set: &PoolSet, path: impl AsRef<Path>) -> Result<(), PoolError> {
    let mut out = fs::File::create(path.as_ref())?;
    for pool in &set.pools {
        let record = record_from_pool(pool);
        let line = serde_json::to_string(&record).expect("pool record serializes");
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

fn pool_from_record(record: ProblemRecord) -> Result<ProblemPool, PoolError> {
    let pool = ProblemPool {
        problem_id: record.problem_id,
        gold_answer: record.gold_answer.as_deref().map(canonicalize),
        probe_interval_tokens: record.probe_interval_tokens,
        branches: record
            .branches
            .into_iter()
            .map(|b| BranchTrace {
                branch_id: b.branch_id,
                probe_answers: b.probe_answers.iter().map(|s| canonicalize(s)).collect(),
                cumulative_tokens: b.cumulative_tokens,
                final_answer: canonicalize(&b.final_answer),
                natural_length_tokens: b.natural_length_tokens,
                probe_overhead_tokens: b.probe_overhead_tokens,
            })
            .collect(),
    };
    validate_pool(&pool)?;
    Ok(pool)
}

fn record_from_pool(pool: &ProblemPool) -> ProblemRecord {
    ProblemRecord {
        problem_id: pool.problem_id.clone(),
        gold_answer: pool.gold_answer.as_ref().map(|a| a.raw().to_string()),
        probe_interval_tokens: pool.probe_interval_tokens,
        branches: pool
            .branches
            .iter()
            .map(|b| BranchRecord {
                branch_id: b.branch_id,
                probe_answers: b.probe_answers.iter().map(|a| a.raw().to_string()).collect(),
                cumulative_tokens: b.cumulative_tokens.clone(),
                final_answer: b.final_answer.raw().to_string(),
                natural_length_tokens: b.natural_length_tokens,
                probe_overhead_tokens: b.probe_overhead_tokens,
            })
            .collect(),
    }
}

/// Hex SHA-256 over the canonical line serialization of the set; equal
/// for any two structurally equal pool sets regardless of the bytes
/// they were loaded from.
pub fn pool_digest(set: &PoolSet) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    for pool in &set.pools {
        let record = record_from_pool(pool);
        hasher.update(serde_json::to_string(&record).expect("pool record serializes"));
        hasher.update(b"\n");
    }
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Checks every pool invariant. Exposed so callers building pools in
/// memory (collection drivers, generators) can validate before saving.
pub fn validate_pool(pool: &ProblemPool) -> Result<(), PoolError> {
    let err = |branch_id: i64, violation: &str| PoolError::Validation {
        problem_id: pool.problem_id.clone(),
        branch_id,
        violation: violation.to_string(),
    };
    if pool.probe_interval_tokens == 0 {
        return Err(err(-1, "probe_interval_tokens must be positive"));
    }
    if pool.branches.is_empty() {
        return Err(err(-1, "pool has no branches"));
    }
    let delta = pool.probe_interval_tokens;
    for (idx, branch) in pool.branches.iter().enumerate() {
        let id = branch.branch_id as i64;
        if branch.branch_id as usize != idx {
            return Err(err(id, "branch_ids must be contiguous from 0"));
        }
        if branch.natural_length_tokens == 0 {
            return Err(err(id, "natural_length_tokens must be positive"));
        }
        if branch.probe_answers.len() != branch.cumulative_tokens.len() {
            return Err(err(id, "probe_answers and cumulative_tokens lengths differ"));
        }
        let mut prev = 0u64;
        for (t, &tokens) in branch.cumulative_tokens.iter().enumerate() {
            if t > 0 && tokens <= prev {
                return Err(err(id, "non-increasing cumulative tokens"));
            }
            let expected = (delta * (t as u64 + 1)).min(branch.natural_length_tokens);
            if tokens != expected {
                return Err(err(
                    id,
                    "cumulative tokens do not follow the pool's probe interval",
                ));
            }
            prev = tokens;
        }
        if let Some(&last) = branch.cumulative_tokens.last() {
            if last > branch.natural_length_tokens {
                return Err(err(id, "cumulative tokens exceed natural length"));
            }
        }
    }
    Ok(())
}

/// Validates every pool plus cross-pool identifier uniqueness.
pub fn validate_set(set: &PoolSet) -> Result<(), PoolError> {
    let mut seen = HashSet::new();
    for pool in &set.pools {
        validate_pool(pool)?;
        if !seen.insert(pool.problem_id.as_str()) {
            return Err(PoolError::Validation {
                problem_id: pool.problem_id.clone(),
                branch_id: -1,
                violation: "duplicate problem_id in set".to_string(),
            });
        }
    }
    Ok(())
}

/// Deterministic choice of `width` distinct branch indices (uniform,
/// without replacement). The order of the returned indices is part of
/// the contract: policies that consume branches sequentially see the
/// sampled order.
pub fn subsample_indices(pool_width: usize, width: usize, rng_seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    rand::seq::index::sample(&mut rng, pool_width, width).into_vec()
}

/// Uniform sample of `width` distinct branches without replacement,
/// re-indexed `0..width`. Deterministic for a fixed seed.
pub fn subsample(pool: &ProblemPool, width: usize, rng_seed: u64) -> Result<ProblemPool, PoolError> {
    if width > pool.branches.len() {
        return Err(PoolError::WidthExceedsPool {
            problem_id: pool.problem_id.clone(),
            width,
            available: pool.branches.len(),
        });
    }
    let indices = subsample_indices(pool.branches.len(), width, rng_seed);
    let branches = indices
        .iter()
        .enumerate()
        .map(|(new_id, &i)| {
            let mut b = pool.branches[i].clone();
            b.branch_id = new_id as u32;
            b
        })
        .collect();
    Ok(ProblemPool {
        problem_id: pool.problem_id.clone(),
        gold_answer: pool.gold_answer.clone(),
        probe_interval_tokens: pool.probe_interval_tokens,
        branches,
    })
}
