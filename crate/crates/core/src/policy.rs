//! Step-wise control policies over a probe matrix: the consensus
//! controller (early stopping, deviation pruning, warmup) and the
//! baseline strategies it is compared against.
//!
//! All policies run on the first `width` branches of a pre-subsampled
//! matrix and report token use under the same accounting: a branch that
//! exits at step `e` consumed `min(natural_length, e * delta)` tokens.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answer::{mode_keys, Answer, AnswerKey};
use crate::matrix::ProbeMatrix;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("invalid policy config: {0}")]
    InvalidConfig(String),
    #[error("policy width {width} exceeds matrix width {available}")]
    WidthExceedsMatrix { width: usize, available: usize },
}

/// Controller parameters.
///
/// `stability_window` is the number of consecutive identical consensus
/// values required to stop; `prune_lookback` the number of consecutive
/// consensus-deviating probes after which a branch is cut;
/// `warmup_steps` the initial steps during which both rules are
/// suppressed. `max_steps` caps the step loop; `None` runs to the
/// matrix horizon.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub width: usize,
    pub stability_window: usize,
    pub prune_lookback: usize,
    pub warmup_steps: usize,
    pub max_steps: Option<usize>,
    pub enable_pruning: bool,
    pub enable_stopping: bool,
    pub enable_warmup: bool,
}

impl PolicyConfig {
    pub fn new(width: usize) -> Self {
        PolicyConfig {
            width,
            stability_window: 3,
            prune_lookback: 10,
            warmup_steps: 12,
            max_steps: None,
            enable_pruning: true,
            enable_stopping: true,
            enable_warmup: true,
        }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        let fail = |m: &str| Err(PolicyError::InvalidConfig(m.to_string()));
        if self.width == 0 {
            return fail("width must be at least 1");
        }
        if self.stability_window == 0 {
            return fail("stability_window must be at least 1");
        }
        if self.prune_lookback == 0 {
            return fail("prune_lookback must be at least 1");
        }
        if self.max_steps == Some(0) {
            return fail("max_steps must be at least 1");
        }
        if self.enable_warmup && self.warmup_steps == 0 {
            return fail("warmup_steps must be at least 1 when warmup is enabled");
        }
        Ok(())
    }
}

/// Why a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    ConsensusStable,
    BudgetExhausted,
    AllBranchesFinished,
}

/// The controller's decision after one probe step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepAction {
    /// Branches to deactivate now; always a subset of the branches
    /// active when the step began.
    pub prune_set: BTreeSet<usize>,
    pub stop: bool,
    /// Present exactly when `stop` is set.
    pub predicted: Option<Answer>,
}

/// Result of one policy run over one problem.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub predicted: Answer,
    /// Probe step at which the run ended. Round-based policies report
    /// their sequential unit here (rounds for chunked runs, trajectory
    /// count for one-at-a-time runs).
    pub stop_step: usize,
    pub stop_reason: StopReason,
    /// Tokens consumed per branch, indexed by branch; branches a
    /// sequential policy never started hold 0.
    pub consumed_tokens: Vec<u64>,
    /// Tokens along the critical path (max over parallel branches, sum
    /// over sequential rounds).
    pub seq_tokens: u64,
    pub total_tokens: u64,
    pub pruned_at: BTreeMap<usize, usize>,
    /// Steps at which pruning would have emptied the active set and the
    /// lowest-indexed branch was retained instead.
    pub guard_steps: Vec<usize>,
}

/// Incremental consensus controller. Feed it one step of answers at a
/// time; it tracks the realized consensus history, deviation streaks,
/// and the active set, and emits the per-step decision. The same object
/// drives offline replay and live collection.
#[derive(Debug, Clone)]
pub struct ConsensusController {
    cfg: PolicyConfig,
    active: Vec<bool>,
    deviation_streak: Vec<usize>,
    d_history: Vec<Answer>,
    pruned_at: BTreeMap<usize, usize>,
    guard_steps: Vec<usize>,
}

impl ConsensusController {
    pub fn new(cfg: &PolicyConfig) -> Result<Self, PolicyError> {
        cfg.validate()?;
        Ok(ConsensusController {
            cfg: cfg.clone(),
            active: vec![true; cfg.width],
            deviation_streak: vec![0; cfg.width],
            d_history: Vec::new(),
            pruned_at: BTreeMap::new(),
            guard_steps: Vec::new(),
        })
    }

    pub fn active(&self) -> &[bool] {
        &self.active
    }

    pub fn step(&self) -> usize {
        self.d_history.len()
    }

    pub fn consensus_history(&self) -> &[Answer] {
        &self.d_history
    }

    pub fn pruned_at(&self) -> &BTreeMap<usize, usize> {
        &self.pruned_at
    }

    pub fn guard_steps(&self) -> &[usize] {
        &self.guard_steps
    }

    /// Removes a branch from the active set without recording a prune;
    /// for branches that can no longer vote (for example a live branch
    /// whose transport failed).
    pub fn retire(&mut self, branch: usize) {
        self.active[branch] = false;
    }

    /// Consumes one probe step. `cells` holds every branch's current
    /// answer (finished branches keep reporting their final answer);
    /// entries for already-pruned branches are ignored.
    pub fn observe_step(&mut self, cells: &[&AnswerKey]) -> StepAction {
        assert_eq!(cells.len(), self.cfg.width, "one cell per branch");
        let t = self.d_history.len() + 1;

        let (d_t, _) = mode_keys(
            (0..self.cfg.width)
                .filter(|&i| self.active[i])
                .map(|i| cells[i]),
        )
        .expect("active set is never empty");

        for i in 0..self.cfg.width {
            if !self.active[i] {
                continue;
            }
            if cells[i] != d_t.key() {
                self.deviation_streak[i] += 1;
            } else {
                self.deviation_streak[i] = 0;
            }
        }

        let past_warmup = !self.cfg.enable_warmup || t >= self.cfg.warmup_steps;

        let mut prune_set = BTreeSet::new();
        if self.cfg.enable_pruning && past_warmup {
            for i in 0..self.cfg.width {
                if self.active[i] && self.deviation_streak[i] >= self.cfg.prune_lookback {
                    prune_set.insert(i);
                }
            }
            let active_count = self.active.iter().filter(|&&a| a).count();
            if prune_set.len() == active_count {
                let retained = *prune_set.iter().next().expect("non-empty prune set");
                prune_set.remove(&retained);
                self.guard_steps.push(t);
                log::warn!(
                    "step {t}: pruning would empty the active set; retaining branch {retained}"
                );
            }
            for &i in &prune_set {
                self.active[i] = false;
                self.pruned_at.insert(i, t);
            }
        }

        self.d_history.push(d_t);

        let u = self.cfg.stability_window;
        let stop = self.cfg.enable_stopping
            && past_warmup
            && t >= u
            && self.d_history[t - u..].iter().all(|d| *d == self.d_history[t - 1]);

        StepAction {
            prune_set,
            stop,
            predicted: stop.then(|| self.d_history[t - 1].clone()),
        }
    }
}

fn check_width(width: usize, matrix: &ProbeMatrix) -> Result<(), PolicyError> {
    if width > matrix.width() {
        return Err(PolicyError::WidthExceedsMatrix {
            width,
            available: matrix.width(),
        });
    }
    if width == 0 {
        return Err(PolicyError::InvalidConfig("width must be at least 1".into()));
    }
    Ok(())
}

/// Runs the consensus controller offline over a recorded matrix.
pub fn run_parallel_probe(matrix: &ProbeMatrix, cfg: &PolicyConfig) -> Result<RunOutcome, PolicyError> {
    check_width(cfg.width, matrix)?;
    let mut controller = ConsensusController::new(cfg)?;
    let horizon = (0..cfg.width)
        .map(|i| matrix.natural_steps(i))
        .max()
        .expect("width >= 1");
    let end_step = cfg.max_steps.map_or(horizon, |m| m.min(horizon));

    let mut stopped: Option<(usize, Answer)> = None;
    for t in 1..=end_step {
        let cells: Vec<&AnswerKey> = (0..cfg.width).map(|i| matrix.cell(i, t)).collect();
        let action = controller.observe_step(&cells);
        if action.stop {
            stopped = Some((t, action.predicted.expect("stop carries a prediction")));
            break;
        }
    }

    let (stop_step, stop_reason, predicted) = match stopped {
        Some((t, predicted)) => (t, StopReason::ConsensusStable, predicted),
        None => {
            let survivors: Vec<usize> =
                (0..cfg.width).filter(|&i| controller.active[i]).collect();
            let (winner, _) = mode_keys(survivors.iter().map(|&i| matrix.key(matrix.final_id(i))))
                .expect("guard keeps at least one survivor");
            let all_finished = survivors
                .iter()
                .all(|&i| matrix.natural_steps(i) <= end_step);
            let reason = if all_finished {
                StopReason::AllBranchesFinished
            } else {
                StopReason::BudgetExhausted
            };
            (end_step, reason, winner)
        }
    };

    let delta = matrix.delta();
    let consumed_tokens: Vec<u64> = (0..cfg.width)
        .map(|i| {
            let exit = controller.pruned_at.get(&i).copied().unwrap_or(stop_step);
            matrix.natural_tokens(i).min(exit as u64 * delta)
        })
        .collect();

    Ok(RunOutcome {
        predicted,
        stop_step,
        stop_reason,
        seq_tokens: consumed_tokens.iter().copied().max().unwrap_or(0),
        total_tokens: consumed_tokens.iter().sum(),
        consumed_tokens,
        pruned_at: controller.pruned_at,
        guard_steps: controller.guard_steps,
    })
}

/// Plain self-consistency: every branch runs to natural termination and
/// the majority over final answers wins.
pub fn run_sc(matrix: &ProbeMatrix, width: usize) -> Result<RunOutcome, PolicyError> {
    check_width(width, matrix)?;
    let (winner, _) = mode_keys((0..width).map(|i| matrix.key(matrix.final_id(i))))
        .expect("width >= 1");
    let consumed_tokens: Vec<u64> = (0..width).map(|i| matrix.natural_tokens(i)).collect();
    let stop_step = (0..width).map(|i| matrix.natural_steps(i)).max().unwrap_or(0);
    Ok(RunOutcome {
        predicted: winner,
        stop_step,
        stop_reason: StopReason::AllBranchesFinished,
        seq_tokens: consumed_tokens.iter().copied().max().unwrap_or(0),
        total_tokens: consumed_tokens.iter().sum(),
        consumed_tokens,
        pruned_at: BTreeMap::new(),
        guard_steps: Vec::new(),
    })
}

/// Per-branch local-convergence stopping: a branch exits early at the
/// first step where its own last `local_window` answers agree, else at
/// natural termination; the majority over exit answers wins.
pub fn run_sac(
    matrix: &ProbeMatrix,
    width: usize,
    local_window: usize,
) -> Result<RunOutcome, PolicyError> {
    check_width(width, matrix)?;
    if local_window < 2 {
        return Err(PolicyError::InvalidConfig("local_window must be at least 2".into()));
    }
    let n = local_window;
    let delta = matrix.delta();
    let mut exit_answers = Vec::with_capacity(width);
    let mut consumed_tokens = Vec::with_capacity(width);
    let mut stop_step = 0;
    for i in 0..width {
        let natural = matrix.natural_steps(i);
        let mut exit = natural;
        for t in n..natural {
            if (t - n + 1..t).all(|s| matrix.cell_id(i, s) == matrix.cell_id(i, t)) {
                exit = t;
                break;
            }
        }
        let answer = if exit < natural {
            Answer::from_key(matrix.cell(i, exit).clone())
        } else {
            Answer::from_key(matrix.key(matrix.final_id(i)).clone())
        };
        exit_answers.push(answer);
        consumed_tokens.push(matrix.natural_tokens(i).min(exit as u64 * delta));
        stop_step = stop_step.max(exit);
    }
    let (winner, _) = crate::answer::mode(&exit_answers).expect("width >= 1");
    Ok(RunOutcome {
        predicted: winner,
        stop_step,
        stop_reason: StopReason::AllBranchesFinished,
        seq_tokens: consumed_tokens.iter().copied().max().unwrap_or(0),
        total_tokens: consumed_tokens.iter().sum(),
        consumed_tokens,
        pruned_at: BTreeMap::new(),
        guard_steps: Vec::new(),
    })
}

/// Chunked early stopping: branches are consumed in sequential rounds
/// of `chunk_size` full trajectories; a unanimous round stops the run.
/// Rounds are sequential while generation within a round is parallel,
/// so `seq_tokens` sums each consumed round's longest trajectory.
pub fn run_esc(
    matrix: &ProbeMatrix,
    chunk_size: usize,
    max_width: usize,
) -> Result<RunOutcome, PolicyError> {
    check_width(max_width, matrix)?;
    if chunk_size == 0 {
        return Err(PolicyError::InvalidConfig("chunk_size must be at least 1".into()));
    }
    let mut consumed_tokens = vec![0u64; max_width];
    let mut seq_tokens = 0u64;
    let mut consumed: Vec<usize> = Vec::new();
    let mut rounds = 0;
    let mut unanimous_stop = false;
    let mut start = 0;
    while start < max_width {
        let end = (start + chunk_size).min(max_width);
        rounds += 1;
        let mut round_max = 0u64;
        for i in start..end {
            consumed_tokens[i] = matrix.natural_tokens(i);
            round_max = round_max.max(consumed_tokens[i]);
            consumed.push(i);
        }
        seq_tokens += round_max;
        let first = matrix.final_id(start);
        if (start..end).all(|i| matrix.final_id(i) == first) {
            unanimous_stop = true;
            break;
        }
        start = end;
    }
    let (winner, _) = mode_keys(consumed.iter().map(|&i| matrix.key(matrix.final_id(i))))
        .expect("at least one round");
    Ok(RunOutcome {
        predicted: winner,
        stop_step: rounds,
        stop_reason: if unanimous_stop {
            StopReason::ConsensusStable
        } else {
            StopReason::AllBranchesFinished
        },
        seq_tokens,
        total_tokens: consumed_tokens.iter().sum(),
        consumed_tokens,
        pruned_at: BTreeMap::new(),
        guard_steps: Vec::new(),
    })
}

/// Monte Carlo probability that the current modal class is the true
/// mode, under a Dirichlet posterior with unit prior over the observed
/// classes plus one unseen class. `counts` holds per-class observation
/// counts; `mode_idx` indexes the class whose dominance is tested.
pub fn posterior_mode_probability(
    counts: &[u64],
    mode_idx: usize,
    draws: usize,
    rng: &mut impl Rng,
) -> f64 {
    let shapes: Vec<u64> = counts.iter().map(|&c| c + 1).chain([1]).collect();
    let mut wins = 0usize;
    let mut sample = vec![0f64; shapes.len()];
    for _ in 0..draws {
        for (slot, &shape) in sample.iter_mut().zip(&shapes) {
            // Gamma(shape, 1) with integer shape: sum of unit exponentials.
            *slot = (0..shape).map(|_| -(1.0 - rng.gen::<f64>()).ln()).sum();
        }
        let modal = sample[mode_idx];
        if sample
            .iter()
            .enumerate()
            .all(|(j, &v)| j == mode_idx || v < modal)
        {
            wins += 1;
        }
    }
    wins as f64 / draws as f64
}

/// Closed form of [`posterior_mode_probability`] when exactly one class
/// has been observed `c` times: the modal share is Beta(c+1, 1), so the
/// dominance probability is `1 - (1/2)^(c+1)`.
pub fn single_class_mode_probability(count: u64) -> f64 {
    1.0 - 0.5f64.powi(count as i32 + 1)
}

/// Adaptive sequential sampling: trajectories are consumed one at a
/// time and the run stops once the posterior probability that the
/// running mode is the true mode reaches `threshold`. Abstaining
/// trajectories are consumed but cast no vote.
pub fn run_asc(
    matrix: &ProbeMatrix,
    max_width: usize,
    threshold: f64,
    mc_draws: usize,
    rng_seed: u64,
) -> Result<RunOutcome, PolicyError> {
    check_width(max_width, matrix)?;
    if !(0.5..1.0).contains(&threshold) || threshold == 0.5 {
        return Err(PolicyError::InvalidConfig(
            "threshold must lie strictly between 0.5 and 1".into(),
        ));
    }
    if mc_draws < 1000 {
        return Err(PolicyError::InvalidConfig("mc_draws must be at least 1000".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    let mut consumed_tokens = vec![0u64; max_width];
    let mut consumed = 0;
    let mut reached = false;
    for i in 0..max_width {
        consumed_tokens[i] = matrix.natural_tokens(i);
        consumed = i + 1;
        if let AnswerKey::Value(v) = matrix.key(matrix.final_id(i)) {
            *counts.entry(v.clone()).or_insert(0) += 1;
        }
        if counts.is_empty() {
            continue;
        }
        let class_counts: Vec<u64> = counts.values().copied().collect();
        let mode_idx = class_counts
            .iter()
            .enumerate()
            .max_by(|(ai, ac), (bi, bc)| ac.cmp(bc).then(bi.cmp(ai)))
            .map(|(idx, _)| idx)
            .expect("non-empty counts");
        let p = posterior_mode_probability(&class_counts, mode_idx, mc_draws, &mut rng);
        if p >= threshold {
            reached = true;
            break;
        }
    }
    let (winner, _) = mode_keys((0..consumed).map(|i| matrix.key(matrix.final_id(i))))
        .expect("at least one trajectory consumed");
    let total: u64 = consumed_tokens.iter().sum();
    Ok(RunOutcome {
        predicted: winner,
        stop_step: consumed,
        stop_reason: if reached {
            StopReason::ConsensusStable
        } else {
            StopReason::AllBranchesFinished
        },
        seq_tokens: total,
        total_tokens: total,
        consumed_tokens,
        pruned_at: BTreeMap::new(),
        guard_steps: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::answer::canonicalize;
    use crate::pool::{load_pools, BranchTrace, ProblemPool};

    fn trace(id: u32, probes: &[&str], final_answer: &str, natural: u64, delta: u64) -> BranchTrace {
        let cumulative = (1..=probes.len() as u64)
            .map(|t| (t * delta).min(natural))
            .collect();
        BranchTrace {
            branch_id: id,
            probe_answers: probes.iter().map(|s| canonicalize(s)).collect(),
            cumulative_tokens: cumulative,
            final_answer: canonicalize(final_answer),
            natural_length_tokens: natural,
            probe_overhead_tokens: None,
        }
    }

    fn pool_of(branches: Vec<BranchTrace>, delta: u64) -> ProblemPool {
        let pool = ProblemPool {
            problem_id: "test".into(),
            gold_answer: None,
            probe_interval_tokens: delta,
            branches,
        };
        crate::pool::validate_pool(&pool).unwrap();
        pool
    }

    fn matrix_of(branches: Vec<BranchTrace>, delta: u64) -> ProbeMatrix {
        ProbeMatrix::from_pool(&pool_of(branches, delta))
    }

    fn cfg(width: usize) -> PolicyConfig {
        PolicyConfig {
            width,
            stability_window: 3,
            prune_lookback: 10,
            warmup_steps: 1,
            max_steps: None,
            enable_pruning: true,
            enable_stopping: true,
            enable_warmup: true,
        }
    }

    fn fixture() -> crate::pool::PoolSet {
        load_pools(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/mini_pool.jsonl")).unwrap()
    }

    #[test]
    fn immediate_consensus_stops_at_stability_window() {
        let branches: Vec<BranchTrace> = (0..4)
            .map(|i| trace(i, &["x", "x", "x", "x", "x"], "x", 2500, 500))
            .collect();
        let m = matrix_of(branches, 500);
        let mut config = cfg(4);
        config.stability_window = 2;
        let out = run_parallel_probe(&m, &config).unwrap();
        assert_eq!(out.stop_step, 2);
        assert_eq!(out.stop_reason, StopReason::ConsensusStable);
        assert_eq!(out.predicted.key(), &AnswerKey::Value("x".into()));
        assert!(out.pruned_at.is_empty());
        assert_eq!(out.consumed_tokens, vec![1000; 4]);
        assert_eq!(out.seq_tokens, 1000);
        assert_eq!(out.total_tokens, 4000);
    }

    #[test]
    fn persistent_deviation_prunes_after_lookback() {
        // Branch 2 answers b while the majority holds a; with lookback 2
        // and stopping disabled it is cut at the second deviating step.
        let branches = vec![
            trace(0, &["a", "a", "a", "a", "a", "a"], "a", 3000, 500),
            trace(1, &["a", "a", "a", "a", "a", "a"], "a", 3000, 500),
            trace(2, &["a", "a", "b", "b", "b", "b"], "b", 3000, 500),
        ];
        let m = matrix_of(branches, 500);
        let mut config = cfg(3);
        config.prune_lookback = 2;
        config.enable_stopping = false;
        let out = run_parallel_probe(&m, &config).unwrap();
        assert_eq!(out.pruned_at.get(&2), Some(&4));
        assert_eq!(out.consumed_tokens[2], 4 * 500);
        assert_eq!(out.consumed_tokens[0], 3000);
        assert_eq!(out.predicted.key(), &AnswerKey::Value("a".into()));
        assert_eq!(out.stop_reason, StopReason::AllBranchesFinished);
    }

    #[test]
    fn warmup_delays_an_already_stable_stop() {
        let branches: Vec<BranchTrace> = (0..4)
            .map(|i| trace(i, &["x", "x", "x", "x", "x"], "x", 2500, 500))
            .collect();
        let m = matrix_of(branches, 500);
        let mut config = cfg(4);
        config.stability_window = 2;
        config.warmup_steps = 3;
        let out = run_parallel_probe(&m, &config).unwrap();
        assert_eq!(out.stop_step, 3);
        assert_eq!(out.stop_reason, StopReason::ConsensusStable);
    }

    #[test]
    fn disabled_warmup_ignores_warmup_steps() {
        let branches: Vec<BranchTrace> = (0..4)
            .map(|i| trace(i, &["x", "x", "x"], "x", 1500, 500))
            .collect();
        let m = matrix_of(branches, 500);
        let mut config = cfg(4);
        config.stability_window = 2;
        config.warmup_steps = 3;
        config.enable_warmup = false;
        let out = run_parallel_probe(&m, &config).unwrap();
        assert_eq!(out.stop_step, 2);
    }

    #[test]
    fn active_set_never_empties_under_aggressive_pruning() {
        // Every realized consensus value has at least one agreeing
        // active branch whose deviation streak resets, so even
        // lookback 1 must leave a survivor.
        let branches = vec![
            trace(0, &["a", "b", "b"], "b", 1500, 500),
            trace(1, &["a", "c", "c"], "c", 1500, 500),
            trace(2, &["b", "a", "c"], "c", 1500, 500),
        ];
        let m = matrix_of(branches, 500);
        let mut config = cfg(3);
        config.prune_lookback = 1;
        config.enable_stopping = false;
        config.enable_warmup = false;
        let out = run_parallel_probe(&m, &config).unwrap();
        assert!(out.pruned_at.len() < 3);
        assert!(out.guard_steps.is_empty());
    }

    #[test]
    fn budget_cap_reports_exhaustion() {
        let branches = vec![
            trace(0, &["a", "b", "a", "b", "a", "b"], "a", 3000, 500),
            trace(1, &["b", "a", "b", "a", "b", "a"], "b", 3000, 500),
        ];
        let m = matrix_of(branches, 500);
        let mut config = cfg(2);
        config.max_steps = Some(3);
        config.enable_pruning = false;
        config.enable_stopping = false;
        let out = run_parallel_probe(&m, &config).unwrap();
        assert_eq!(out.stop_step, 3);
        assert_eq!(out.stop_reason, StopReason::BudgetExhausted);
        assert_eq!(out.consumed_tokens, vec![1500, 1500]);
        // Final vote over survivors' final answers, not step-3 cells.
        assert_eq!(out.predicted.key(), &AnswerKey::Value("a".into()));
    }

    #[test]
    fn sc_votes_finals_and_charges_full_lengths() {
        let branches = vec![
            trace(0, &["a"], "a", 1000, 500),
            trace(1, &["a", "a", "a"], "a", 2000, 500),
            trace(2, &["b", "b", "b", "b", "b"], "b", 3000, 500),
        ];
        let m = matrix_of(branches, 500);
        let out = run_sc(&m, 3).unwrap();
        assert_eq!(out.predicted.key(), &AnswerKey::Value("a".into()));
        assert_eq!(out.seq_tokens, 3000);
        assert_eq!(out.total_tokens, 6000);
        assert_eq!(out.stop_reason, StopReason::AllBranchesFinished);
    }

    #[test]
    fn sc_width_one_returns_that_branch() {
        let branches = vec![
            trace(0, &["q"], "q", 700, 500),
            trace(1, &["z"], "z", 700, 500),
        ];
        let m = matrix_of(branches, 500);
        let out = run_sc(&m, 1).unwrap();
        assert_eq!(out.predicted.key(), &AnswerKey::Value("q".into()));
        assert_eq!(out.total_tokens, 700);
    }

    #[test]
    fn sc_fixture_matches_hand_vote() {
        let set = fixture();
        for (pool, expected) in set.pools.iter().zip(["17", "117", "6"]) {
            let m = ProbeMatrix::from_pool(pool);
            let out = run_sc(&m, 8).unwrap();
            assert_eq!(out.predicted.key(), &AnswerKey::Value(expected.into()));
            let total: u64 = pool.branches.iter().map(|b| b.natural_length_tokens).sum();
            assert_eq!(out.total_tokens, total);
        }
    }

    #[test]
    fn reduction_to_sc_on_fixture() {
        let set = fixture();
        for pool in &set.pools {
            let m = ProbeMatrix::from_pool(pool);
            let mut config = cfg(8);
            config.enable_pruning = false;
            config.enable_stopping = false;
            let pp = run_parallel_probe(&m, &config).unwrap();
            let sc = run_sc(&m, 8).unwrap();
            assert_eq!(pp.predicted, sc.predicted);
            assert_eq!(pp.seq_tokens, sc.seq_tokens);
            assert_eq!(pp.total_tokens, sc.total_tokens);
            assert_eq!(pp.stop_reason, StopReason::AllBranchesFinished);
        }
    }

    #[test]
    fn sac_constant_branch_exits_at_window() {
        let branches = vec![trace(0, &["x", "x", "x", "x", "x", "x", "x"], "x", 4000, 500)];
        let m = matrix_of(branches, 500);
        let out = run_sac(&m, 1, 3).unwrap();
        assert_eq!(out.stop_step, 3);
        assert_eq!(out.predicted.key(), &AnswerKey::Value("x".into()));
        assert_eq!(out.consumed_tokens, vec![1500]);
    }

    #[test]
    fn sac_alternating_branch_runs_to_natural_end() {
        let branches = vec![trace(0, &["x", "y", "x", "y", "x", "y"], "y", 3000, 500)];
        let m = matrix_of(branches, 500);
        let out = run_sac(&m, 1, 3).unwrap();
        assert_eq!(out.stop_step, 6);
        assert_eq!(out.consumed_tokens, vec![3000]);
        assert_eq!(out.predicted.key(), &AnswerKey::Value("y".into()));
    }

    #[test]
    fn sac_fixture_matches_naive_scan() {
        let set = fixture();
        for pool in &set.pools {
            let m = ProbeMatrix::from_pool(pool);
            let n = 2;
            let out = run_sac(&m, 8, n).unwrap();
            for (i, branch) in pool.branches.iter().enumerate() {
                // Naive per-branch scan straight off the trace strings.
                let natural = branch.natural_steps(500);
                let cell = |t: usize| -> &AnswerKey {
                    if t <= branch.probe_answers.len() {
                        branch.probe_answers[t - 1].key()
                    } else {
                        branch.final_answer.key()
                    }
                };
                let mut exit = natural;
                for t in n..natural {
                    if (t - n + 1..=t).map(cell).collect::<Vec<_>>().windows(2).all(|w| w[0] == w[1])
                    {
                        exit = t;
                        break;
                    }
                }
                assert_eq!(
                    out.consumed_tokens[i],
                    branch.natural_length_tokens.min(exit as u64 * 500),
                    "branch {i} of {}",
                    pool.problem_id
                );
            }
        }
    }

    #[test]
    fn esc_unanimous_first_round_stops() {
        let branches = vec![
            trace(0, &["a"], "a", 1000, 500),
            trace(1, &["a", "a"], "a", 1400, 500),
            trace(2, &["b"], "b", 900, 500),
            trace(3, &["b"], "b", 900, 500),
        ];
        let m = matrix_of(branches, 500);
        let out = run_esc(&m, 2, 4).unwrap();
        assert_eq!(out.stop_step, 1);
        assert_eq!(out.stop_reason, StopReason::ConsensusStable);
        assert_eq!(out.seq_tokens, 1400);
        assert_eq!(out.total_tokens, 2400);
        assert_eq!(out.consumed_tokens, vec![1000, 1400, 0, 0]);
    }

    #[test]
    fn esc_without_unanimity_consumes_everything() {
        let branches = vec![
            trace(0, &["a"], "a", 1000, 500),
            trace(1, &["b"], "b", 1200, 500),
            trace(2, &["a"], "a", 800, 500),
            trace(3, &["b"], "b", 600, 500),
        ];
        let m = matrix_of(branches, 500);
        let out = run_esc(&m, 2, 4).unwrap();
        assert_eq!(out.stop_step, 2);
        assert_eq!(out.stop_reason, StopReason::AllBranchesFinished);
        assert_eq!(out.seq_tokens, 1200 + 800);
        assert_eq!(out.total_tokens, 3600);
        assert_eq!(out.predicted.key(), &AnswerKey::Value("a".into()));
    }

    #[test]
    fn esc_fixture_round_trace() {
        // Problem 1, chunk 2: branches 0 and 1 both answer 17, so the
        // run stops after one round.
        let set = fixture();
        let m = ProbeMatrix::from_pool(&set.pools[0]);
        let out = run_esc(&m, 2, 8).unwrap();
        assert_eq!(out.stop_step, 1);
        assert_eq!(out.predicted.key(), &AnswerKey::Value("17".into()));
        assert_eq!(out.seq_tokens, 1700);
        assert_eq!(out.total_tokens, 1700 + 900);

        // Problem 3, chunk 2: rounds (6,8), (8,6), (6,6); the third
        // round is unanimous.
        let m = ProbeMatrix::from_pool(&set.pools[2]);
        let out = run_esc(&m, 2, 8).unwrap();
        assert_eq!(out.stop_step, 3);
        assert_eq!(out.predicted.key(), &AnswerKey::Value("6".into()));
        assert_eq!(out.seq_tokens, 1300 + 2400 + 1800);
        assert_eq!(out.total_tokens, 1100 + 1300 + 900 + 2400 + 500 + 1800);
    }

    #[test]
    fn asc_single_class_closed_form() {
        assert!((single_class_mode_probability(3) - 0.9375).abs() < 1e-12);
        assert!((single_class_mode_probability(4) - 0.96875).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for c in [1u64, 3, 4, 6] {
            let mc = posterior_mode_probability(&[c], 0, 40_000, &mut rng);
            let exact = single_class_mode_probability(c);
            assert!(
                (mc - exact).abs() < 0.01,
                "count {c}: mc {mc:.4} vs exact {exact:.4}"
            );
        }
    }

    #[test]
    fn asc_identical_stream_stops_when_beta_mass_clears_threshold() {
        let branches: Vec<BranchTrace> = (0..8)
            .map(|i| trace(i, &["a"], "a", 600, 500))
            .collect();
        let m = matrix_of(branches, 500);
        let out = run_asc(&m, 8, 0.95, 4000, 7).unwrap();
        // After c identical answers the dominance probability is
        // 1 - (1/2)^(c+1): 0.9375 at c=3, 0.96875 at c=4.
        assert_eq!(out.stop_step, 4);
        assert_eq!(out.stop_reason, StopReason::ConsensusStable);
        assert_eq!(out.total_tokens, 4 * 600);
        assert_eq!(out.seq_tokens, out.total_tokens);
        assert_eq!(out.predicted.key(), &AnswerKey::Value("a".into()));
    }

    #[test]
    fn asc_alternating_stream_never_stops() {
        let branches: Vec<BranchTrace> = (0..8)
            .map(|i| trace(i, &[], if i % 2 == 0 { "a" } else { "b" }, 400, 500))
            .collect();
        let m = matrix_of(branches, 500);
        let out = run_asc(&m, 8, 0.95, 2000, 3).unwrap();
        assert_eq!(out.stop_step, 8);
        assert_eq!(out.stop_reason, StopReason::AllBranchesFinished);
        assert_eq!(out.total_tokens, 8 * 400);
    }

    #[test]
    fn asc_is_deterministic_per_seed() {
        let set = fixture();
        let m = ProbeMatrix::from_pool(&set.pools[2]);
        let a = run_asc(&m, 8, 0.95, 2000, 42).unwrap();
        let b = run_asc(&m, 8, 0.95, 2000, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let m = matrix_of(vec![trace(0, &["a"], "a", 600, 500)], 500);
        let mut c = cfg(1);
        c.stability_window = 0;
        assert!(run_parallel_probe(&m, &c).is_err());
        let mut c = cfg(1);
        c.warmup_steps = 0;
        assert!(run_parallel_probe(&m, &c).is_err());
        assert!(run_sc(&m, 2).is_err());
        assert!(run_sac(&m, 1, 1).is_err());
        assert!(run_esc(&m, 0, 1).is_err());
        assert!(run_asc(&m, 1, 0.4, 2000, 0).is_err());
        assert!(run_asc(&m, 1, 0.95, 10, 0).is_err());
    }
}
