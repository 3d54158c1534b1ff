//! Step-aligned view of a problem pool: a ragged branch-by-step grid of
//! interned answers with carry-forward semantics.
//!
//! Probe steps are 1-based. A branch is alive at step `t` while it has a
//! recorded probe there; afterwards it contributes its final answer to
//! every later step. Answers are interned to small ids so per-step
//! consensus is a counting pass, not a hash of strings.

use std::collections::HashMap;

use crate::answer::{mode_keys, AnswerKey, VoteTally};
use crate::pool::ProblemPool;

/// Reserved id for the abstain answer.
pub const ABSTAIN_ID: u32 = 0;

#[derive(Debug, Clone)]
struct MatrixBranch {
    probe_ids: Vec<u32>,
    final_id: u32,
    natural_tokens: u64,
    natural_steps: usize,
}

/// Interned answer grid for one problem.
#[derive(Debug, Clone)]
pub struct ProbeMatrix {
    delta: u64,
    vocab: Vec<AnswerKey>,
    branches: Vec<MatrixBranch>,
    horizon: usize,
}

impl ProbeMatrix {
    pub fn from_pool(pool: &ProblemPool) -> Self {
        let mut vocab = vec![AnswerKey::Abstain];
        let mut ids: HashMap<AnswerKey, u32> = HashMap::new();
        ids.insert(AnswerKey::Abstain, ABSTAIN_ID);
        let mut intern = |key: &AnswerKey| -> u32 {
            if let Some(&id) = ids.get(key) {
                return id;
            }
            let id = vocab.len() as u32;
            vocab.push(key.clone());
            ids.insert(key.clone(), id);
            id
        };
        let delta = pool.probe_interval_tokens;
        let branches: Vec<MatrixBranch> = pool
            .branches
            .iter()
            .map(|b| MatrixBranch {
                probe_ids: b.probe_answers.iter().map(|a| intern(a.key())).collect(),
                final_id: intern(b.final_answer.key()),
                natural_tokens: b.natural_length_tokens,
                natural_steps: b.natural_steps(delta),
            })
            .collect();
        let horizon = branches.iter().map(|b| b.natural_steps).max().unwrap_or(0);
        ProbeMatrix {
            delta,
            vocab,
            branches,
            horizon,
        }
    }

    pub fn width(&self) -> usize {
        self.branches.len()
    }

    pub fn delta(&self) -> u64 {
        self.delta
    }

    /// Last step at which any branch is still generating:
    /// `max_i ceil(natural_i / delta)`.
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn vocab_len(&self) -> usize {
        self.vocab.len()
    }

    pub fn key(&self, id: u32) -> &AnswerKey {
        &self.vocab[id as usize]
    }

    pub fn probe_steps(&self, branch: usize) -> usize {
        self.branches[branch].probe_ids.len()
    }

    pub fn natural_steps(&self, branch: usize) -> usize {
        self.branches[branch].natural_steps
    }

    pub fn natural_tokens(&self, branch: usize) -> u64 {
        self.branches[branch].natural_tokens
    }

    pub fn final_id(&self, branch: usize) -> u32 {
        self.branches[branch].final_id
    }

    /// True while the branch has a recorded probe at step `t`.
    pub fn alive(&self, branch: usize, t: usize) -> bool {
        t >= 1 && t <= self.branches[branch].probe_ids.len()
    }

    /// Interned answer of `branch` at step `t` (1-based); the final
    /// answer carries forward past the last recorded probe.
    pub fn cell_id(&self, branch: usize, t: usize) -> u32 {
        debug_assert!(t >= 1, "probe steps are 1-based");
        let b = &self.branches[branch];
        if t <= b.probe_ids.len() {
            b.probe_ids[t - 1]
        } else {
            b.final_id
        }
    }

    pub fn cell(&self, branch: usize, t: usize) -> &AnswerKey {
        self.key(self.cell_id(branch, t))
    }

    /// Majority answer at step `t` over the given branches. Abstains do
    /// not vote; ties break to the smallest answer under canonical
    /// ordering; an empty or all-abstain electorate yields abstain.
    pub fn consensus_among<I>(&self, t: usize, branches: I) -> u32
    where
        I: IntoIterator<Item = usize>,
    {
        let mut counts = vec![0u32; self.vocab.len()];
        for i in branches {
            counts[self.cell_id(i, t) as usize] += 1;
        }
        self.winner(&counts)
    }

    fn winner(&self, counts: &[u32]) -> u32 {
        let mut best: Option<(u32, u32)> = None;
        for (id, &count) in counts.iter().enumerate().skip(1) {
            if count == 0 {
                continue;
            }
            let id = id as u32;
            best = Some(match best {
                None => (id, count),
                Some((bid, bc)) => {
                    if count > bc || (count == bc && self.vocab[id as usize] < self.vocab[bid as usize])
                    {
                        (id, count)
                    } else {
                        (bid, bc)
                    }
                }
            });
        }
        best.map_or(ABSTAIN_ID, |(id, _)| id)
    }

    /// Majority answer at step `t` over all branches (carry-forward).
    pub fn consensus_all(&self, t: usize) -> u32 {
        self.consensus_among(t, 0..self.width())
    }

    /// Per-step all-branch consensus for steps `1..=horizon`.
    pub fn consensus_series_all(&self) -> Vec<u32> {
        (1..=self.horizon).map(|t| self.consensus_all(t)).collect()
    }

    /// Earliest step from which the all-branch consensus equals the
    /// final-step consensus at every later step. Always at most the
    /// horizon; `None` only for an empty grid.
    pub fn convergence_onset(&self) -> Option<usize> {
        if self.horizon == 0 {
            return None;
        }
        let series = self.consensus_series_all();
        let settled = *series.last().expect("horizon >= 1");
        let mut onset = self.horizon;
        for t in (1..self.horizon).rev() {
            if series[t - 1] == settled {
                onset = t;
            } else {
                break;
            }
        }
        Some(onset)
    }

    /// Slow recount of one step's vote using the generic tallier; used
    /// to cross-check the counting path.
    pub fn recount_among<I>(&self, t: usize, branches: I) -> (AnswerKey, VoteTally)
    where
        I: IntoIterator<Item = usize>,
    {
        let keys: Vec<&AnswerKey> = branches.into_iter().map(|i| self.cell(i, t)).collect();
        let (winner, tally) = mode_keys(keys.into_iter()).expect("non-empty electorate");
        (winner.key().clone(), tally)
    }
}
