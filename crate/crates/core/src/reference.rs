//! Naive reference controller and randomized pool generators.
//!
//! The reference re-derives every control rule directly from its
//! definition: plain string answers, its own majority vote, and full
//! window re-scans instead of incremental streaks. It exists to be
//! compared against the optimized path, so it deliberately shares no
//! code with [`crate::policy::run_parallel_probe`] beyond the config
//! and outcome types.

use std::collections::BTreeMap;

use rand::Rng;

use crate::answer::{Answer, AnswerKey};
use crate::policy::{PolicyConfig, RunOutcome, StopReason};
use crate::pool::{BranchTrace, ProblemPool};

/// Reference result plus the internal series the optimized path does
/// not expose: the realized consensus history and the active set at
/// entry to each step.
#[derive(Debug, Clone)]
pub struct NaiveOutcome {
    pub outcome: RunOutcome,
    /// Canonical consensus value per executed step; `None` is abstain.
    pub d_history: Vec<Option<String>>,
    /// Branches active when each step began.
    pub active_per_step: Vec<Vec<usize>>,
}

fn naive_cell(branch: &BranchTrace, t: usize) -> Option<String> {
    let answer = if t <= branch.probe_answers.len() {
        &branch.probe_answers[t - 1]
    } else {
        &branch.final_answer
    };
    match answer.key() {
        AnswerKey::Abstain => None,
        AnswerKey::Value(v) => Some(v.clone()),
    }
}

fn naive_mode<'a>(votes: impl Iterator<Item = &'a Option<String>>) -> Option<String> {
    let mut counts: Vec<(String, usize)> = Vec::new();
    for vote in votes.flatten() {
        match counts.iter_mut().find(|(v, _)| v == vote) {
            Some((_, c)) => *c += 1,
            None => counts.push((vote.clone(), 1)),
        }
    }
    counts.sort_by(|(va, ca), (vb, cb)| cb.cmp(ca).then(va.cmp(vb)));
    counts.into_iter().next().map(|(v, _)| v)
}

fn to_answer(value: &Option<String>) -> Answer {
    match value {
        None => Answer::abstain(),
        Some(v) => Answer::from_key(AnswerKey::Value(v.clone())),
    }
}

/// Step-by-step re-derivation of the consensus controller on a pool's
/// first `cfg.width` branches.
pub fn naive_run(pool: &ProblemPool, cfg: &PolicyConfig) -> NaiveOutcome {
    cfg.validate().expect("valid config");
    let width = cfg.width;
    assert!(width >= 1 && width <= pool.branches.len());
    let delta = pool.probe_interval_tokens;
    let branches = &pool.branches[..width];
    let steps: Vec<usize> = branches.iter().map(|b| b.natural_steps(delta)).collect();
    let horizon = *steps.iter().max().expect("width >= 1");
    let end_step = match cfg.max_steps {
        Some(m) => m.min(horizon),
        None => horizon,
    };

    let mut active = vec![true; width];
    let mut pruned_at: BTreeMap<usize, usize> = BTreeMap::new();
    let mut guard_steps = Vec::new();
    let mut d_history: Vec<Option<String>> = Vec::new();
    let mut active_per_step = Vec::new();
    let mut stopped: Option<(usize, Option<String>)> = None;

    for t in 1..=end_step {
        active_per_step.push(
            (0..width).filter(|&i| active[i]).collect::<Vec<_>>(),
        );
        let cells: Vec<Option<String>> = branches.iter().map(|b| naive_cell(b, t)).collect();
        let d_t = naive_mode((0..width).filter(|&i| active[i]).map(|i| &cells[i]));
        d_history.push(d_t);

        let past_warmup = !cfg.enable_warmup || t >= cfg.warmup_steps;

        if cfg.enable_pruning && past_warmup && t >= cfg.prune_lookback {
            let k = cfg.prune_lookback;
            let mut candidates: Vec<usize> = (0..width)
                .filter(|&i| {
                    active[i]
                        && (t - k + 1..=t)
                            .all(|s| naive_cell(&branches[i], s) != d_history[s - 1])
                })
                .collect();
            let active_count = active.iter().filter(|&&a| a).count();
            if candidates.len() == active_count {
                let retained = candidates.remove(0);
                guard_steps.push(t);
                log::warn!(
                    "reference step {t}: pruning would empty the active set; retaining {retained}"
                );
            }
            for &i in &candidates {
                active[i] = false;
                pruned_at.insert(i, t);
            }
        }

        if cfg.enable_stopping && past_warmup && t >= cfg.stability_window {
            let u = cfg.stability_window;
            let window = &d_history[t - u..t];
            if window.iter().all(|d| *d == window[0]) {
                stopped = Some((t, d_history[t - 1].clone()));
                break;
            }
        }
    }

    let (stop_step, stop_reason, predicted) = match stopped {
        Some((t, d)) => (t, StopReason::ConsensusStable, to_answer(&d)),
        None => {
            let finals: Vec<Option<String>> = (0..width)
                .filter(|&i| active[i])
                .map(|i| match branches[i].final_answer.key() {
                    AnswerKey::Abstain => None,
                    AnswerKey::Value(v) => Some(v.clone()),
                })
                .collect();
            let winner = naive_mode(finals.iter());
            let all_finished = (0..width)
                .filter(|&i| active[i])
                .all(|i| steps[i] <= end_step);
            let reason = if all_finished {
                StopReason::AllBranchesFinished
            } else {
                StopReason::BudgetExhausted
            };
            (end_step, reason, to_answer(&winner))
        }
    };

    let consumed_tokens: Vec<u64> = (0..width)
        .map(|i| {
            let exit = pruned_at.get(&i).copied().unwrap_or(stop_step);
            branches[i].natural_length_tokens.min(exit as u64 * delta)
        })
        .collect();

    NaiveOutcome {
        outcome: RunOutcome {
            predicted,
            stop_step,
            stop_reason,
            seq_tokens: consumed_tokens.iter().copied().max().unwrap_or(0),
            total_tokens: consumed_tokens.iter().sum(),
            consumed_tokens,
            pruned_at,
            guard_steps,
        },
        d_history,
        active_per_step,
    }
}

/// Checks the pruning rule against a finished run: every recorded
/// prune must satisfy the k-consecutive-deviation predicate at its
/// step, and no active branch may ever pass the predicate at an
/// eligible step without being pruned there.
pub fn check_prune_exactness(
    pool: &ProblemPool,
    cfg: &PolicyConfig,
    naive: &NaiveOutcome,
) -> Result<(), String> {
    let k = cfg.prune_lookback;
    let branches = &pool.branches[..cfg.width];
    let eligible = |t: usize| {
        t >= k && (!cfg.enable_warmup || t >= cfg.warmup_steps)
    };
    let deviated_window = |i: usize, t: usize| {
        (t - k + 1..=t).all(|s| naive_cell(&branches[i], s) != naive.d_history[s - 1])
    };
    for (&i, &t) in &naive.outcome.pruned_at {
        if !eligible(t) {
            return Err(format!("branch {i} pruned at ineligible step {t}"));
        }
        if !deviated_window(i, t) {
            return Err(format!("branch {i} pruned at {t} without a full deviation window"));
        }
    }
    if !cfg.enable_pruning {
        if !naive.outcome.pruned_at.is_empty() {
            return Err("pruning disabled but branches were pruned".into());
        }
        return Ok(());
    }
    for (idx, active) in naive.active_per_step.iter().enumerate() {
        let t = idx + 1;
        if !eligible(t) {
            continue;
        }
        for &i in active {
            let should_prune = deviated_window(i, t);
            let was_pruned = naive.outcome.pruned_at.get(&i) == Some(&t);
            let guarded = naive.outcome.guard_steps.contains(&t);
            if should_prune && !was_pruned && !guarded {
                return Err(format!("branch {i} met the prune predicate at {t} but survived"));
            }
        }
    }
    Ok(())
}

/// Shape of the randomized pool corpus.
#[derive(Debug, Clone)]
pub struct FuzzSpec {
    pub min_width: usize,
    pub max_width: usize,
    pub min_horizon: usize,
    pub max_horizon: usize,
    pub min_vocab: usize,
    pub max_vocab: usize,
    pub abstain_rate: f64,
    pub delta: u64,
}

impl Default for FuzzSpec {
    fn default() -> Self {
        FuzzSpec {
            min_width: 2,
            max_width: 64,
            min_horizon: 2,
            max_horizon: 200,
            min_vocab: 2,
            max_vocab: 6,
            abstain_rate: 0.05,
            delta: 500,
        }
    }
}

const FUZZ_VOCAB: [&str; 6] = ["a", "b", "c", "d", "e", "f"];

/// Random valid pool. The first branch always spans the drawn horizon
/// so the corpus covers the requested horizon range exactly.
pub fn random_problem(spec: &FuzzSpec, rng: &mut impl Rng) -> ProblemPool {
    let width = rng.gen_range(spec.min_width..=spec.max_width);
    let horizon = rng.gen_range(spec.min_horizon..=spec.max_horizon);
    let vocab_size = rng.gen_range(spec.min_vocab..=spec.max_vocab);
    let delta = spec.delta;
    let branches = (0..width)
        .map(|i| {
            let steps = if i == 0 {
                horizon
            } else {
                rng.gen_range(1..=horizon)
            };
            let natural = steps as u64 * delta - rng.gen_range(0..delta);
            let probe_count = if rng.gen_bool(0.5) { steps } else { steps - 1 };
            let probe_answers = (0..probe_count)
                .map(|_| {
                    if rng.gen_bool(spec.abstain_rate) {
                        crate::answer::canonicalize("")
                    } else {
                        crate::answer::canonicalize(FUZZ_VOCAB[rng.gen_range(0..vocab_size)])
                    }
                })
                .collect();
            let final_answer = if rng.gen_bool(0.02) {
                crate::answer::canonicalize("")
            } else {
                crate::answer::canonicalize(FUZZ_VOCAB[rng.gen_range(0..vocab_size)])
            };
            BranchTrace {
                branch_id: i as u32,
                probe_answers,
                cumulative_tokens: (1..=probe_count as u64)
                    .map(|t| (t * delta).min(natural))
                    .collect(),
                final_answer,
                natural_length_tokens: natural,
                probe_overhead_tokens: None,
            }
        })
        .collect();
    let pool = ProblemPool {
        problem_id: "fuzz".into(),
        gold_answer: None,
        probe_interval_tokens: delta,
        branches,
    };
    crate::pool::validate_pool(&pool).expect("generator emits valid pools");
    pool
}

/// Random controller config for a pool of the given width.
pub fn random_config(width: usize, rng: &mut impl Rng) -> PolicyConfig {
    let cfg = PolicyConfig {
        width,
        stability_window: rng.gen_range(1..=4),
        prune_lookback: rng.gen_range(1..=4),
        warmup_steps: rng.gen_range(1..=6),
        max_steps: if rng.gen_bool(0.5) {
            None
        } else {
            Some(rng.gen_range(1..=210))
        },
        enable_pruning: rng.gen_bool(0.8),
        enable_stopping: rng.gen_bool(0.8),
        enable_warmup: rng.gen_bool(0.7),
    };
    cfg.validate().expect("generator emits valid configs");
    cfg
}
