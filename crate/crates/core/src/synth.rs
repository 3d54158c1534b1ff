//! Synthetic pool generators with planted, exactly known statistics.
//! They exist so pipeline-level checks can compare measured quantities
//! against ground truth that no real model run could provide.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::answer::canonicalize;
use crate::pool::{BranchTrace, PoolSet, ProblemPool};
use crate::sim::derive_seed;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid generator spec: {reason}")]
    InvalidSpec { reason: String },
}

fn invalid(reason: &str) -> SynthError {
    SynthError::InvalidSpec {
        reason: reason.to_string(),
    }
}

/// Plan for pools whose consensus-onset ratio is known by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedOnsetSpec {
    pub problems: usize,
    /// Branches per problem; at least 3 so a strict majority and a
    /// dissenting minority both exist.
    pub width: usize,
    /// Probe steps per branch; every natural length is steps * delta.
    pub steps: usize,
    pub delta: u64,
    /// Desired onset ratio, in (0, 1].
    pub target_ratio: f64,
    /// Maximum per-problem deviation from the target ratio.
    pub jitter: f64,
    pub base_seed: u64,
}

impl Default for PlantedOnsetSpec {
    fn default() -> Self {
        PlantedOnsetSpec {
            problems: 16,
            width: 9,
            steps: 50,
            delta: 500,
            target_ratio: 0.3,
            jitter: 0.02,
            base_seed: 0,
        }
    }
}

/// Generated pools plus the exact ratios that were planted.
#[derive(Debug, Clone)]
pub struct PlantedOnsetPools {
    pub set: PoolSet,
    /// Per-problem planted ratio, onset_step / steps.
    pub planted_ratios: Vec<f64>,
    pub planted_mean: f64,
}

fn validate_onset_spec(spec: &PlantedOnsetSpec) -> Result<(), SynthError> {
    if spec.problems == 0 {
        return Err(invalid("problems must be at least 1"));
    }
    if spec.width < 3 {
        return Err(invalid("width must be at least 3"));
    }
    if spec.steps < 2 {
        return Err(invalid("steps must be at least 2"));
    }
    if spec.delta == 0 {
        return Err(invalid("delta must be at least 1"));
    }
    if !(spec.target_ratio > 0.0 && spec.target_ratio <= 1.0) {
        return Err(invalid("target_ratio must lie in (0, 1]"));
    }
    if !(0.0..1.0).contains(&spec.jitter) {
        return Err(invalid("jitter must lie in [0, 1)"));
    }
    Ok(())
}

/// Builds one problem whose all-branch consensus settles exactly at
/// `onset`. A strict majority answers a wrong value before the onset
/// step and the gold value from it on; the minority dissents with a
/// third value throughout, so the consensus flips exactly once.
fn planted_onset_problem(
    problem_id: &str,
    spec: &PlantedOnsetSpec,
    onset: usize,
) -> ProblemPool {
    let natural = spec.steps as u64 * spec.delta;
    let probe_count = spec.steps - 1;
    let majority = spec.width / 2 + 1;
    let branches = (0..spec.width)
        .map(|i| {
            let values: Vec<&str> = (1..=probe_count)
                .map(|t| {
                    if i < majority {
                        if t < onset {
                            "w"
                        } else {
                            "g"
                        }
                    } else {
                        "h"
                    }
                })
                .collect();
            BranchTrace {
                branch_id: i as u32,
                probe_answers: values.iter().map(|v| canonicalize(v)).collect(),
                cumulative_tokens: (1..=probe_count as u64).map(|t| t * spec.delta).collect(),
                final_answer: canonicalize(if i < majority { "g" } else { "h" }),
                natural_length_tokens: natural,
                probe_overhead_tokens: None,
            }
        })
        .collect();
    ProblemPool {
        problem_id: problem_id.to_string(),
        gold_answer: Some(canonicalize("g")),
        probe_interval_tokens: spec.delta,
        branches,
    }
}

/// Pools whose measured onset-ratio distribution is known exactly: the
/// per-problem onset step is drawn from the steps whose ratio lies
/// within `jitter` of `target_ratio`.
pub fn planted_onset_pools(spec: &PlantedOnsetSpec) -> Result<PlantedOnsetPools, SynthError> {
    validate_onset_spec(spec)?;
    let candidates: Vec<usize> = (1..=spec.steps)
        .filter(|&o| (o as f64 / spec.steps as f64 - spec.target_ratio).abs() <= spec.jitter)
        .collect();
    let fallback = ((spec.target_ratio * spec.steps as f64).round() as usize)
        .clamp(1, spec.steps);
    let mut pools = Vec::with_capacity(spec.problems);
    let mut planted_ratios = Vec::with_capacity(spec.problems);
    for p in 0..spec.problems {
        let problem_id = format!("planted-{p:04}");
        let seed = derive_seed(spec.base_seed, &problem_id, 0, "planted-onset");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let onset = *candidates.choose(&mut rng).unwrap_or(&fallback);
        planted_ratios.push(onset as f64 / spec.steps as f64);
        pools.push(planted_onset_problem(&problem_id, spec, onset));
    }
    let planted_mean = planted_ratios.iter().sum::<f64>() / planted_ratios.len() as f64;
    Ok(PlantedOnsetPools {
        set: PoolSet::new(pools),
        planted_ratios,
        planted_mean,
    })
}

/// Plan for pools with mixed answer quality and staggered lengths,
/// sized for end-to-end throughput and comparison runs.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedPoolSpec {
    pub problems: usize,
    pub width: usize,
    pub delta: u64,
    /// Natural lengths are drawn between these probe-step counts.
    pub min_steps: usize,
    pub max_steps: usize,
    /// Probability that a branch's final answer matches gold.
    pub correct_rate: f64,
    /// Fraction of a branch's length after which its probes settle on
    /// its final answer.
    pub settle_fraction: f64,
    /// Probability that a pre-settle probe records no parseable answer.
    pub abstain_rate: f64,
    pub base_seed: u64,
}

impl Default for MixedPoolSpec {
    fn default() -> Self {
        MixedPoolSpec {
            problems: 30,
            width: 128,
            delta: 500,
            min_steps: 8,
            max_steps: 40,
            correct_rate: 0.7,
            settle_fraction: 0.5,
            abstain_rate: 0.02,
            base_seed: 0,
        }
    }
}

fn validate_mixed_spec(spec: &MixedPoolSpec) -> Result<(), SynthError> {
    if spec.problems == 0 {
        return Err(invalid("problems must be at least 1"));
    }
    if spec.width == 0 {
        return Err(invalid("width must be at least 1"));
    }
    if spec.delta == 0 {
        return Err(invalid("delta must be at least 1"));
    }
    if spec.min_steps < 1 || spec.min_steps > spec.max_steps {
        return Err(invalid("step range must satisfy 1 <= min_steps <= max_steps"));
    }
    if !(0.0..=1.0).contains(&spec.correct_rate) {
        return Err(invalid("correct_rate must lie in [0, 1]"));
    }
    if !(0.0..=1.0).contains(&spec.settle_fraction) {
        return Err(invalid("settle_fraction must lie in [0, 1]"));
    }
    if !(0.0..=1.0).contains(&spec.abstain_rate) {
        return Err(invalid("abstain_rate must lie in [0, 1]"));
    }
    Ok(())
}

const MIXED_WRONG: [&str; 3] = ["x", "y", "z"];
const MIXED_NOISE: [&str; 4] = ["g", "x", "y", "z"];

/// Pools where each branch wanders through noise answers, settles on
/// its final answer partway along, and is correct with the configured
/// rate.
pub fn mixed_pools(spec: &MixedPoolSpec) -> Result<PoolSet, SynthError> {
    validate_mixed_spec(spec)?;
    let mut pools = Vec::with_capacity(spec.problems);
    for p in 0..spec.problems {
        let problem_id = format!("synthetic-{p:04}");
        let seed = derive_seed(spec.base_seed, &problem_id, 0, "mixed-pool");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let branches = (0..spec.width)
            .map(|i| {
                let steps = rng.gen_range(spec.min_steps..=spec.max_steps);
                let natural = steps as u64 * spec.delta - rng.gen_range(0..spec.delta);
                let probe_count = ((natural - 1) / spec.delta) as usize;
                let final_value = if rng.gen_bool(spec.correct_rate) {
                    "g"
                } else {
                    MIXED_WRONG[rng.gen_range(0..MIXED_WRONG.len())]
                };
                let settle = ((steps as f64 * spec.settle_fraction).round() as usize).max(1);
                let probe_answers = (1..=probe_count)
                    .map(|t| {
                        if t >= settle {
                            canonicalize(final_value)
                        } else if rng.gen_bool(spec.abstain_rate) {
                            canonicalize("")
                        } else {
                            canonicalize(MIXED_NOISE[rng.gen_range(0..MIXED_NOISE.len())])
                        }
                    })
                    .collect();
                BranchTrace {
                    branch_id: i as u32,
                    probe_answers,
                    cumulative_tokens: (1..=probe_count as u64)
                        .map(|t| t * spec.delta)
                        .collect(),
                    final_answer: canonicalize(final_value),
                    natural_length_tokens: natural,
                    probe_overhead_tokens: None,
                }
            })
            .collect();
        pools.push(ProblemPool {
            problem_id,
            gold_answer: Some(canonicalize("g")),
            probe_interval_tokens: spec.delta,
            branches,
        });
    }
    Ok(PoolSet::new(pools))
}
