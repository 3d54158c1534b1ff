//! Seeded resampling simulation over candidate pools.
//!
//! Each (problem, repeat) pair draws a width-`N` branch subset with a
//! seed derived only from (base_seed, problem_id, repeat), so every
//! policy evaluated under the same base seed replays the identical
//! draws. Reports are deterministic functions of (config, pools):
//! work may be scheduled across threads but reduction is ordered.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::answer::Answer;
use crate::matrix::ProbeMatrix;
use crate::policy::{
    run_asc, run_esc, run_parallel_probe, run_sac, run_sc, PolicyConfig, PolicyError, RunOutcome,
};
use crate::pool::{pool_digest, PoolError, PoolSet, ProblemPool};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Pool(#[from] PoolError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("exhaustive mode needs {count} subsets for problem {problem_id}, cap is {cap}")]
    ExhaustiveTooLarge {
        problem_id: String,
        count: u128,
        cap: u64,
    },
    #[error("config mismatch across compared reports: {0}")]
    ConfigMismatch(String),
    #[error("no reports to compare")]
    NothingToCompare,
}

/// Which policy to run per (problem, repeat), with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum PolicySpec {
    ParallelProbe {
        stability_window: usize,
        prune_lookback: usize,
        warmup_steps: usize,
        max_steps: Option<usize>,
        enable_pruning: bool,
        enable_stopping: bool,
        enable_warmup: bool,
    },
    Sc,
    Asc {
        threshold: f64,
        mc_draws: usize,
    },
    Esc {
        chunk_size: usize,
    },
    Sac {
        local_window: usize,
    },
}

impl PolicySpec {
    pub fn parallel_probe_defaults() -> Self {
        let d = PolicyConfig::new(1);
        PolicySpec::ParallelProbe {
            stability_window: d.stability_window,
            prune_lookback: d.prune_lookback,
            warmup_steps: d.warmup_steps,
            max_steps: d.max_steps,
            enable_pruning: d.enable_pruning,
            enable_stopping: d.enable_stopping,
            enable_warmup: d.enable_warmup,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PolicySpec::ParallelProbe { .. } => "parallel-probe",
            PolicySpec::Sc => "sc",
            PolicySpec::Asc { .. } => "asc",
            PolicySpec::Esc { .. } => "esc",
            PolicySpec::Sac { .. } => "sac",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub policy: PolicySpec,
    pub width: usize,
    pub repeats: usize,
    pub base_seed: u64,
    pub include_probe_overhead: bool,
    /// Enumerate every width-subset of each pool instead of sampling;
    /// refused above `exhaustive_cap` subsets.
    pub exhaustive: bool,
    pub exhaustive_cap: u64,
    /// Worker thread count; `None` uses the process-wide pool. Output
    /// bytes never depend on this.
    pub jobs: Option<usize>,
}

impl SimConfig {
    pub fn new(policy: PolicySpec) -> Self {
        SimConfig {
            policy,
            width: 64,
            repeats: 64,
            base_seed: 0,
            include_probe_overhead: false,
            exhaustive: false,
            exhaustive_cap: 100_000,
            jobs: None,
        }
    }
}

/// Stable per-(problem, repeat) seed; `domain` separates independent
/// random streams drawn for the same pair.
pub fn derive_seed(base_seed: u64, problem_id: &str, repeat: u64, domain: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base_seed.to_le_bytes());
    hasher.update((problem_id.len() as u64).to_le_bytes());
    hasher.update(problem_id.as_bytes());
    hasher.update(repeat.to_le_bytes());
    hasher.update(domain.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is long enough"))
}

fn combination_count(n: usize, r: usize) -> u128 {
    if r > n {
        return 0;
    }
    let r = r.min(n - r);
    let mut acc: u128 = 1;
    for i in 0..r {
        acc = acc.saturating_mul((n - i) as u128) / (i as u128 + 1);
    }
    acc
}

fn combinations(n: usize, r: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current: Vec<usize> = (0..r).collect();
    if r == 0 || r > n {
        return out;
    }
    loop {
        out.push(current.clone());
        // Advance the rightmost index that can still move.
        let mut i = r;
        while i > 0 {
            i -= 1;
            if current[i] < n - r + i {
                current[i] += 1;
                for j in i + 1..r {
                    current[j] = current[j - 1] + 1;
                }
                break;
            }
            if i == 0 {
                return out;
            }
        }
    }
}

/// The exact branch index sets one problem will be replayed on, in
/// repeat order. Depends only on (base_seed, problem_id, repeats,
/// width), never on the policy.
pub fn subsample_plan(pool: &ProblemPool, cfg: &SimConfig) -> Result<Vec<Vec<usize>>, SimError> {
    if cfg.width > pool.width() {
        return Err(SimError::Pool(PoolError::WidthExceedsPool {
            problem_id: pool.problem_id.clone(),
            width: cfg.width,
            available: pool.width(),
        }));
    }
    if cfg.exhaustive {
        let count = combination_count(pool.width(), cfg.width);
        if count > cfg.exhaustive_cap as u128 {
            return Err(SimError::ExhaustiveTooLarge {
                problem_id: pool.problem_id.clone(),
                count,
                cap: cfg.exhaustive_cap,
            });
        }
        return Ok(combinations(pool.width(), cfg.width));
    }
    Ok((0..cfg.repeats)
        .map(|r| {
            let seed = derive_seed(cfg.base_seed, &pool.problem_id, r as u64, "subsample");
            crate::pool::subsample_indices(pool.width(), cfg.width, seed)
        })
        .collect())
}

fn plan_digest(plans: &[(String, Vec<Vec<usize>>)]) -> String {
    let mut hasher = Sha256::new();
    for (problem_id, plan) in plans {
        hasher.update((problem_id.len() as u64).to_le_bytes());
        hasher.update(problem_id.as_bytes());
        for subset in plan {
            hasher.update((subset.len() as u64).to_le_bytes());
            for &i in subset {
                hasher.update((i as u64).to_le_bytes());
            }
        }
    }
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// One policy execution on one drawn subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub problem_id: String,
    pub repeat: usize,
    pub subsample: Vec<usize>,
    pub outcome: RunOutcome,
    pub correct: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSummary {
    pub problem_id: String,
    /// Mean over repeats, in [0,1]; absent without a gold answer.
    pub mean_accuracy: Option<f64>,
    pub mean_seq_tokens: f64,
    pub mean_total_tokens: f64,
    pub mean_stop_step: f64,
    pub repeats: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    /// Unweighted mean over gold-bearing problems, in percent.
    pub accuracy_pct: Option<f64>,
    pub scored_problems: usize,
    pub mean_seq_tokens: f64,
    pub mean_total_tokens: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config: SimConfig,
    pub pool_digest: String,
    pub subsample_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub policy: String,
    pub per_problem: Vec<ProblemSummary>,
    pub aggregate: Aggregate,
    pub provenance: Provenance,
    /// Full per-run data; kept in memory for downstream analysis, not
    /// part of the serialized report.
    #[serde(skip)]
    pub runs: Vec<RunRecord>,
}

fn run_policy(
    matrix: &ProbeMatrix,
    spec: &PolicySpec,
    width: usize,
    policy_seed: u64,
) -> Result<RunOutcome, PolicyError> {
    match spec {
        PolicySpec::ParallelProbe {
            stability_window,
            prune_lookback,
            warmup_steps,
            max_steps,
            enable_pruning,
            enable_stopping,
            enable_warmup,
        } => run_parallel_probe(
            matrix,
            &PolicyConfig {
                width,
                stability_window: *stability_window,
                prune_lookback: *prune_lookback,
                warmup_steps: *warmup_steps,
                max_steps: *max_steps,
                enable_pruning: *enable_pruning,
                enable_stopping: *enable_stopping,
                enable_warmup: *enable_warmup,
            },
        ),
        PolicySpec::Sc => run_sc(matrix, width),
        PolicySpec::Asc { threshold, mc_draws } => {
            run_asc(matrix, width, *threshold, *mc_draws, policy_seed)
        }
        PolicySpec::Esc { chunk_size } => run_esc(matrix, *chunk_size, width),
        PolicySpec::Sac { local_window } => run_sac(matrix, width, *local_window),
    }
}

/// Folds forced-answer probe cost into an outcome's token counts.
/// Overhead is attributed proportionally over a branch's probe events
/// (its recorded probes plus the terminal answer), so a branch cut at
/// step `e` is charged only the probes it actually triggered.
fn apply_probe_overhead(outcome: &mut RunOutcome, pool: &ProblemPool, sequential: bool) {
    let delta = pool.probe_interval_tokens;
    let mut extra_total = 0u64;
    for (i, consumed) in outcome.consumed_tokens.iter_mut().enumerate() {
        let branch = &pool.branches[i];
        let Some(overhead) = branch.probe_overhead_tokens else {
            continue;
        };
        if *consumed == 0 {
            continue;
        }
        let probes = branch.probe_steps() as u64;
        let events_total = probes + 1;
        let events_used = if *consumed >= branch.natural_length_tokens {
            events_total
        } else {
            (*consumed / delta).min(probes)
        };
        let extra = (overhead * events_used + events_total / 2) / events_total;
        *consumed += extra;
        extra_total += extra;
    }
    outcome.total_tokens += extra_total;
    if sequential {
        outcome.seq_tokens += extra_total;
    } else {
        outcome.seq_tokens = outcome.consumed_tokens.iter().copied().max().unwrap_or(0);
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

/// Runs one policy over every (problem, repeat) draw and aggregates.
pub fn simulate(set: &PoolSet, cfg: &SimConfig) -> Result<SimReport, SimError> {
    let plans: Vec<(String, Vec<Vec<usize>>)> = set
        .pools
        .iter()
        .map(|p| Ok((p.problem_id.clone(), subsample_plan(p, cfg)?)))
        .collect::<Result<_, SimError>>()?;

    let tasks: Vec<(usize, usize)> = plans
        .iter()
        .enumerate()
        .flat_map(|(pi, (_, plan))| (0..plan.len()).map(move |r| (pi, r)))
        .collect();

    let execute = || -> Result<Vec<RunRecord>, SimError> {
        tasks
            .par_iter()
            .map(|&(pi, repeat)| {
                let pool = &set.pools[pi];
                let indices = &plans[pi].1[repeat];
                let drawn = resample(pool, indices);
                let matrix = ProbeMatrix::from_pool(&drawn);
                let policy_seed =
                    derive_seed(cfg.base_seed, &pool.problem_id, repeat as u64, "policy");
                let mut outcome = run_policy(&matrix, &cfg.policy, cfg.width, policy_seed)?;
                if cfg.include_probe_overhead {
                    let sequential = matches!(cfg.policy, PolicySpec::Asc { .. });
                    apply_probe_overhead(&mut outcome, &drawn, sequential);
                }
                let correct = pool
                    .gold_answer
                    .as_ref()
                    .map(|gold| outcome.predicted.key() == gold.key());
                Ok(RunRecord {
                    problem_id: pool.problem_id.clone(),
                    repeat,
                    subsample: indices.clone(),
                    outcome,
                    correct,
                })
            })
            .collect()
    };

    // Collection preserves task order, so the fold below is ordered
    // regardless of worker count.
    let runs = match cfg.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .expect("thread pool")
            .install(execute),
        None => execute(),
    }?;

    let mut per_problem = Vec::with_capacity(set.pools.len());
    let mut cursor = 0;
    for (pi, (problem_id, plan)) in plans.iter().enumerate() {
        let n = plan.len();
        let slice = &runs[cursor..cursor + n];
        cursor += n;
        let mean_accuracy = set.pools[pi].gold_answer.as_ref().map(|_| {
            slice
                .iter()
                .map(|r| f64::from(u8::from(r.correct == Some(true))))
                .sum::<f64>()
                / n as f64
        });
        per_problem.push(ProblemSummary {
            problem_id: problem_id.clone(),
            mean_accuracy,
            mean_seq_tokens: slice.iter().map(|r| r.outcome.seq_tokens as f64).sum::<f64>()
                / n as f64,
            mean_total_tokens: slice.iter().map(|r| r.outcome.total_tokens as f64).sum::<f64>()
                / n as f64,
            mean_stop_step: slice.iter().map(|r| r.outcome.stop_step as f64).sum::<f64>()
                / n as f64,
            repeats: n,
        });
    }

    let scored: Vec<f64> = per_problem
        .iter()
        .filter_map(|p| p.mean_accuracy)
        .collect();
    let aggregate = Aggregate {
        accuracy_pct: mean(scored.iter().copied()).map(|a| a * 100.0),
        scored_problems: scored.len(),
        mean_seq_tokens: mean(per_problem.iter().map(|p| p.mean_seq_tokens)).unwrap_or(0.0),
        mean_total_tokens: mean(per_problem.iter().map(|p| p.mean_total_tokens)).unwrap_or(0.0),
    };

    Ok(SimReport {
        policy: cfg.policy.name().to_string(),
        per_problem,
        aggregate,
        provenance: Provenance {
            config: cfg.clone(),
            pool_digest: pool_digest(set),
            subsample_digest: plan_digest(&plans),
        },
        runs,
    })
}

fn resample(pool: &ProblemPool, indices: &[usize]) -> ProblemPool {
    let branches = indices
        .iter()
        .enumerate()
        .map(|(new_id, &i)| {
            let mut b = pool.branches[i].clone();
            b.branch_id = new_id as u32;
            b
        })
        .collect();
    ProblemPool {
        problem_id: pool.problem_id.clone(),
        gold_answer: pool.gold_answer.clone(),
        probe_interval_tokens: pool.probe_interval_tokens,
        branches,
    }
}

/// One row of a policy comparison; delta columns are relative change
/// vs the designated baseline and absent on the baseline row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub policy: String,
    pub accuracy_pct: Option<f64>,
    pub seq_tokens_mean: f64,
    pub total_tokens_mean: f64,
    pub seq_delta_pct: Option<f64>,
    pub total_delta_pct: Option<f64>,
}

/// Builds the comparison table; the first report is the baseline. All
/// reports must come from the same pools, width, repeats, and seed so
/// their draws are pairwise identical.
pub fn compare(reports: &[SimReport]) -> Result<Vec<ComparisonRow>, SimError> {
    let baseline = reports.first().ok_or(SimError::NothingToCompare)?;
    for report in &reports[1..] {
        let a = &baseline.provenance;
        let b = &report.provenance;
        let mismatch = |field: &str| {
            Err(SimError::ConfigMismatch(format!(
                "{field} differs between {} and {}",
                baseline.policy, report.policy
            )))
        };
        if a.pool_digest != b.pool_digest {
            return mismatch("pool");
        }
        if a.config.width != b.config.width {
            return mismatch("width");
        }
        if a.config.repeats != b.config.repeats {
            return mismatch("repeats");
        }
        if a.config.base_seed != b.config.base_seed {
            return mismatch("base_seed");
        }
        if a.subsample_digest != b.subsample_digest {
            return mismatch("subsample plan");
        }
    }
    let pct = |value: f64, base: f64| (base != 0.0).then(|| (value - base) / base * 100.0);
    Ok(reports
        .iter()
        .enumerate()
        .map(|(idx, r)| ComparisonRow {
            policy: r.policy.clone(),
            accuracy_pct: r.aggregate.accuracy_pct,
            seq_tokens_mean: r.aggregate.mean_seq_tokens,
            total_tokens_mean: r.aggregate.mean_total_tokens,
            seq_delta_pct: (idx > 0)
                .then(|| pct(r.aggregate.mean_seq_tokens, baseline.aggregate.mean_seq_tokens))
                .flatten(),
            total_delta_pct: (idx > 0)
                .then(|| pct(r.aggregate.mean_total_tokens, baseline.aggregate.mean_total_tokens))
                .flatten(),
        })
        .collect())
}

/// `12345.0 → "12.3k"`; sub-thousand values keep one decimal.
pub fn format_k(tokens: f64) -> String {
    if tokens >= 1000.0 {
        format!("{:.1}k", tokens / 1000.0)
    } else {
        format!("{tokens:.1}")
    }
}

/// Signed percent with one decimal, e.g. `-35.8%`.
pub fn format_delta_pct(delta: f64) -> String {
    format!("{delta:+.1}%")
}

/// Serializes the machine-readable records stream: one line per
/// problem, then one aggregate line.
pub fn report_records(report: &SimReport) -> String {
    #[derive(Serialize)]
    struct AggregateLine<'a> {
        record: &'static str,
        policy: &'a str,
        #[serde(flatten)]
        aggregate: &'a Aggregate,
    }
    #[derive(Serialize)]
    struct ProblemLine<'a> {
        record: &'static str,
        #[serde(flatten)]
        summary: &'a ProblemSummary,
    }
    let mut out = String::new();
    for summary in &report.per_problem {
        let line = ProblemLine {
            record: "problem",
            summary,
        };
        out.push_str(&serde_json::to_string(&line).expect("summary serializes"));
        out.push('\n');
    }
    let line = AggregateLine {
        record: "aggregate",
        policy: &report.policy,
        aggregate: &report.aggregate,
    };
    out.push_str(&serde_json::to_string(&line).expect("aggregate serializes"));
    out.push('\n');
    out
}

/// Serializes the comparison table as CSV.
pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut out =
        String::from("policy,accuracy_pct,seq_tokens_mean,total_tokens_mean,seq_delta_pct,total_delta_pct\n");
    for row in rows {
        let acc = row
            .accuracy_pct
            .map_or(String::new(), |a| format!("{a:.2}"));
        let seq_d = row
            .seq_delta_pct
            .map_or(String::new(), format_delta_pct);
        let total_d = row
            .total_delta_pct
            .map_or(String::new(), format_delta_pct);
        out.push_str(&format!(
            "{},{},{:.2},{:.2},{},{}\n",
            row.policy, acc, row.seq_tokens_mean, row.total_tokens_mean, seq_d, total_d
        ));
    }
    out
}

/// Gold-aware correctness of a single prediction.
pub fn is_correct(predicted: &Answer, gold: &Answer) -> bool {
    predicted.key() == gold.key()
}
