//! Diagnostic summaries over candidate pools: the width-by-depth
//! accuracy surface with per-cell coverage counts, convergence-onset
//! statistics, and accuracy-versus-token scaling curves.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

use crate::answer::{mode_keys, Answer};
use crate::matrix::ProbeMatrix;
use crate::pool::{subsample_indices, BranchTrace, PoolError, PoolSet};
use crate::sim::{derive_seed, is_correct, simulate, SimConfig, SimError};

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("depth {depth_tokens} tokens is below the probe interval {delta}")]
    DepthBelowInterval { depth_tokens: u64, delta: u64 },
    #[error("invalid grid: {reason}")]
    InvalidGrid { reason: String },
    #[error("pool set is empty")]
    EmptySet,
    #[error("no problem in the set carries a gold answer to score against")]
    NoGoldAnswers,
    #[error("scaling sweep is empty")]
    EmptySweep,
    #[error("scaling sweep mixes base seeds; all configs must share one")]
    MixedSeeds,
    #[error(transparent)]
    Pool(#[from] PoolError),
    #[error(transparent)]
    Sim(#[from] Box<SimError>),
}

/// Axes and sampling plan for the width-by-depth accuracy surface.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Branch counts per cell, strictly ascending, each at least 1.
    pub widths: Vec<usize>,
    /// Truncation lengths in tokens, strictly ascending, each at least
    /// one probe interval.
    pub depths: Vec<u64>,
    /// Subsample draws per (problem, width); shared across depths.
    pub repeats: usize,
    pub base_seed: u64,
    /// Minimum covered-problem count for a cell to be marked stable.
    pub coverage_threshold: usize,
}

impl GridSpec {
    pub fn validate(&self) -> Result<(), AnalysisError> {
        let fail = |reason: &str| {
            Err(AnalysisError::InvalidGrid {
                reason: reason.to_string(),
            })
        };
        if self.widths.is_empty() {
            return fail("widths is empty");
        }
        if self.widths[0] < 1 {
            return fail("widths must be at least 1");
        }
        if !self.widths.windows(2).all(|w| w[0] < w[1]) {
            return fail("widths must be strictly ascending");
        }
        if self.depths.is_empty() {
            return fail("depths is empty");
        }
        if !self.depths.windows(2).all(|d| d[0] < d[1]) {
            return fail("depths must be strictly ascending");
        }
        if self.repeats == 0 {
            return fail("repeats must be at least 1");
        }
        Ok(())
    }
}

/// One evaluated grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceCell {
    pub width: usize,
    pub depth_tokens: u64,
    /// Vote accuracy in [0,1], averaged over repeats then over
    /// gold-bearing problems.
    pub accuracy: f64,
    /// Problems where at least `width` branches reach `depth_tokens`
    /// naturally.
    pub coverage_count: usize,
    /// width * depth_tokens.
    pub budget: u64,
    /// coverage_count >= the grid's coverage_threshold.
    pub stable: bool,
}

/// The answer a branch holds after `depth_tokens` tokens: its final
/// answer once the depth covers the whole trajectory, otherwise the
/// probe answer at the last whole interval (carrying the final answer
/// forward past the last recorded probe).
pub fn answer_at_depth(
    branch: &BranchTrace,
    depth_tokens: u64,
    delta: u64,
) -> Result<&Answer, AnalysisError> {
    if depth_tokens < delta {
        return Err(AnalysisError::DepthBelowInterval {
            depth_tokens,
            delta,
        });
    }
    if depth_tokens >= branch.natural_length_tokens {
        return Ok(&branch.final_answer);
    }
    let step = (depth_tokens / delta) as usize;
    if step <= branch.probe_steps() {
        Ok(&branch.probe_answers[step - 1])
    } else {
        Ok(&branch.final_answer)
    }
}

/// Majority-vote accuracy and coverage at every (width, depth) cell.
/// Cells are emitted width-major in grid order. For a fixed width the
/// same subsample draws serve every depth, so the depth axis varies
/// only the truncation point.
pub fn width_depth_surface(
    set: &PoolSet,
    spec: &GridSpec,
) -> Result<Vec<SurfaceCell>, AnalysisError> {
    spec.validate()?;
    if set.pools.is_empty() {
        return Err(AnalysisError::EmptySet);
    }
    let max_width = *spec.widths.last().expect("validated non-empty");
    let min_depth = *spec.depths.first().expect("validated non-empty");
    for pool in &set.pools {
        if max_width > pool.width() {
            return Err(AnalysisError::Pool(PoolError::WidthExceedsPool {
                problem_id: pool.problem_id.clone(),
                width: max_width,
                available: pool.width(),
            }));
        }
        if min_depth < pool.probe_interval_tokens {
            return Err(AnalysisError::DepthBelowInterval {
                depth_tokens: min_depth,
                delta: pool.probe_interval_tokens,
            });
        }
    }
    if !set.pools.iter().any(|p| p.gold_answer.is_some()) {
        return Err(AnalysisError::NoGoldAnswers);
    }

    // plans[problem][width index][repeat] = drawn branch indices.
    let plans: Vec<Vec<Vec<Vec<usize>>>> = set
        .pools
        .iter()
        .map(|pool| {
            spec.widths
                .iter()
                .map(|&w| {
                    (0..spec.repeats)
                        .map(|r| {
                            let seed = derive_seed(
                                spec.base_seed,
                                &pool.problem_id,
                                r as u64,
                                &format!("surface-w{w}"),
                            );
                            subsample_indices(pool.width(), w, seed)
                        })
                        .collect()
                })
                .collect()
        })
        .collect();

    let coords: Vec<(usize, usize)> = (0..spec.widths.len())
        .flat_map(|wi| (0..spec.depths.len()).map(move |di| (wi, di)))
        .collect();

    let cells = coords
        .par_iter()
        .map(|&(wi, di)| {
            let width = spec.widths[wi];
            let depth = spec.depths[di];
            let mut coverage_count = 0usize;
            let mut accuracy_sum = 0.0;
            let mut scored = 0usize;
            for (pi, pool) in set.pools.iter().enumerate() {
                let deep_branches = pool
                    .branches
                    .iter()
                    .filter(|b| b.natural_length_tokens >= depth)
                    .count();
                if deep_branches >= width {
                    coverage_count += 1;
                }
                let Some(gold) = &pool.gold_answer else {
                    continue;
                };
                let mut correct = 0usize;
                for subset in &plans[pi][wi] {
                    let keys = subset.iter().map(|&b| {
                        answer_at_depth(&pool.branches[b], depth, pool.probe_interval_tokens)
                            .expect("depths validated against the probe interval")
                            .key()
                    });
                    let (winner, _) = mode_keys(keys).expect("subset is non-empty");
                    if is_correct(&winner, gold) {
                        correct += 1;
                    }
                }
                accuracy_sum += correct as f64 / spec.repeats as f64;
                scored += 1;
            }
            SurfaceCell {
                width,
                depth_tokens: depth,
                accuracy: accuracy_sum / scored as f64,
                coverage_count,
                budget: width as u64 * depth,
                stable: coverage_count >= spec.coverage_threshold,
            }
        })
        .collect();
    Ok(cells)
}

/// CSV export of a surface, one row per cell.
pub fn surface_csv(cells: &[SurfaceCell]) -> String {
    let mut out = String::from("width,depth_tokens,accuracy,coverage,budget\n");
    for cell in cells {
        writeln!(
            out,
            "{},{},{:.6},{},{}",
            cell.width, cell.depth_tokens, cell.accuracy, cell.coverage_count, cell.budget
        )
        .expect("string write");
    }
    out
}

/// When one problem's all-branch consensus settled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnsetRecord {
    pub problem_id: String,
    /// Earliest probe step from which the running consensus never
    /// changes again.
    pub onset_step: usize,
    /// onset_step * delta over the longest natural length, in [0,1].
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnsetDistribution {
    pub records: Vec<OnsetRecord>,
    pub mean_ratio: f64,
}

/// Consensus-settling point of every problem, over all its branches.
pub fn onset_distribution(set: &PoolSet) -> Result<OnsetDistribution, AnalysisError> {
    if set.pools.is_empty() {
        return Err(AnalysisError::EmptySet);
    }
    let records: Vec<OnsetRecord> = set
        .pools
        .iter()
        .map(|pool| {
            let matrix = ProbeMatrix::from_pool(pool);
            let onset_step = matrix
                .convergence_onset()
                .expect("validated pools have at least one probe step");
            let longest = pool
                .branches
                .iter()
                .map(|b| b.natural_length_tokens)
                .max()
                .expect("validated pools have branches");
            let ratio = ((onset_step as u64 * pool.probe_interval_tokens) as f64
                / longest as f64)
                .clamp(0.0, 1.0);
            OnsetRecord {
                problem_id: pool.problem_id.clone(),
                onset_step,
                ratio,
            }
        })
        .collect();
    let mean_ratio = records.iter().map(|r| r.ratio).sum::<f64>() / records.len() as f64;
    Ok(OnsetDistribution {
        records,
        mean_ratio,
    })
}

/// CSV export of onset records, one row per problem.
pub fn onset_csv(dist: &OnsetDistribution) -> String {
    let mut out = String::from("problem_id,onset_step,ratio\n");
    for record in &dist.records {
        writeln!(
            out,
            "{},{},{:.6}",
            record.problem_id, record.onset_step, record.ratio
        )
        .expect("string write");
    }
    out
}

/// One point on an accuracy-versus-token curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub policy: String,
    pub width: usize,
    pub mean_total_tokens: f64,
    /// Percent over gold-bearing problems; absent when none exist.
    pub accuracy_pct: Option<f64>,
}

/// Runs every sweep config through the simulator and returns one
/// (mean total tokens, accuracy) point each, ascending by tokens.
/// Configs must share one base seed so the points are paired draws.
pub fn scaling_curve(
    set: &PoolSet,
    sweep: &[SimConfig],
) -> Result<Vec<ScalingPoint>, AnalysisError> {
    if sweep.is_empty() {
        return Err(AnalysisError::EmptySweep);
    }
    let base_seed = sweep[0].base_seed;
    if sweep.iter().any(|cfg| cfg.base_seed != base_seed) {
        return Err(AnalysisError::MixedSeeds);
    }
    let mut points = sweep
        .iter()
        .map(|cfg| {
            let report = simulate(set, cfg).map_err(Box::new)?;
            Ok(ScalingPoint {
                policy: report.policy.clone(),
                width: cfg.width,
                mean_total_tokens: report.aggregate.mean_total_tokens,
                accuracy_pct: report.aggregate.accuracy_pct,
            })
        })
        .collect::<Result<Vec<_>, AnalysisError>>()?;
    points.sort_by(|a, b| a.mean_total_tokens.total_cmp(&b.mean_total_tokens));
    Ok(points)
}

/// CSV export of a scaling curve, one row per sweep point.
pub fn scaling_csv(points: &[ScalingPoint]) -> String {
    let mut out = String::from("policy,width,mean_total_tokens,accuracy_pct\n");
    for point in points {
        let acc = point
            .accuracy_pct
            .map_or(String::new(), |a| format!("{a:.2}"));
        writeln!(
            out,
            "{},{},{:.2},{}",
            point.policy, point.width, point.mean_total_tokens, acc
        )
        .expect("string write");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::answer::canonicalize;
    use crate::pool::{load_pools, validate_set, ProblemPool};
    use crate::sim::PolicySpec;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const DELTA: u64 = 500;

    fn branch(id: u32, probes: &[&str], natural: u64, final_answer: &str) -> BranchTrace {
        BranchTrace {
            branch_id: id,
            probe_answers: probes.iter().map(|s| canonicalize(s)).collect(),
            cumulative_tokens: (1..=probes.len() as u64)
                .map(|t| (t * DELTA).min(natural))
                .collect(),
            final_answer: canonicalize(final_answer),
            natural_length_tokens: natural,
            probe_overhead_tokens: None,
        }
    }

    fn uniform_pool(problem_id: &str, gold: &str, value: &str, width: usize) -> ProblemPool {
        let branches = (0..width)
            .map(|i| branch(i as u32, &[value, value, value], 2000, value))
            .collect();
        ProblemPool {
            problem_id: problem_id.to_string(),
            gold_answer: Some(canonicalize(gold)),
            probe_interval_tokens: DELTA,
            branches,
        }
    }

    fn grid(widths: &[usize], depths: &[u64], repeats: usize) -> GridSpec {
        GridSpec {
            widths: widths.to_vec(),
            depths: depths.to_vec(),
            repeats,
            base_seed: 9,
            coverage_threshold: 1,
        }
    }

    #[test]
    fn answer_at_depth_follows_floor_rule() {
        let b = branch(0, &["a", "b", "c", "d"], 2200, "z");
        assert_eq!(answer_at_depth(&b, 2200, DELTA).unwrap().raw(), "z");
        assert_eq!(answer_at_depth(&b, 9999, DELTA).unwrap().raw(), "z");
        assert_eq!(answer_at_depth(&b, 1200, DELTA).unwrap().raw(), "b");
        assert_eq!(answer_at_depth(&b, 500, DELTA).unwrap().raw(), "a");
        assert_eq!(answer_at_depth(&b, 999, DELTA).unwrap().raw(), "a");
        assert!(matches!(
            answer_at_depth(&b, 499, DELTA),
            Err(AnalysisError::DepthBelowInterval {
                depth_tokens: 499,
                delta: DELTA
            })
        ));
    }

    #[test]
    fn answer_at_depth_carries_final_past_missing_probes() {
        let b = branch(0, &["9"], 1200, "17");
        assert_eq!(answer_at_depth(&b, 500, DELTA).unwrap().raw(), "9");
        assert_eq!(answer_at_depth(&b, 1100, DELTA).unwrap().raw(), "17");
        assert_eq!(answer_at_depth(&b, 1200, DELTA).unwrap().raw(), "17");
    }

    #[test]
    fn answer_at_depth_matches_matrix_cells_on_fixture() {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/mini_pool.jsonl");
        let set = load_pools(path).unwrap();
        for pool in &set.pools {
            let matrix = ProbeMatrix::from_pool(pool);
            let delta = pool.probe_interval_tokens;
            for (i, b) in pool.branches.iter().enumerate() {
                let top = matrix.horizon() as u64 * delta + 750;
                let mut depth = delta;
                while depth <= top {
                    let got = answer_at_depth(b, depth, delta).unwrap().key();
                    let expected = if depth >= b.natural_length_tokens {
                        matrix.key(matrix.final_id(i))
                    } else {
                        matrix.cell(i, (depth / delta) as usize)
                    };
                    assert_eq!(got, expected, "branch {i} depth {depth}");
                    depth += 250;
                }
            }
        }
    }

    #[test]
    fn all_correct_pool_scores_one_at_every_cell() {
        let set = PoolSet::new(vec![
            uniform_pool("p1", "7", "7", 4),
            uniform_pool("p2", "3", "3", 4),
        ]);
        validate_set(&set).unwrap();
        let spec = grid(&[1, 2, 4], &[500, 1000, 2000], 3);
        let cells = width_depth_surface(&set, &spec).unwrap();
        assert_eq!(cells.len(), 9);
        for cell in &cells {
            assert_eq!(cell.accuracy, 1.0);
            assert_eq!(cell.budget, cell.width as u64 * cell.depth_tokens);
            assert_eq!(cell.coverage_count, 2);
            assert!(cell.stable);
        }
        let order: Vec<(usize, u64)> = cells.iter().map(|c| (c.width, c.depth_tokens)).collect();
        assert_eq!(
            order,
            vec![
                (1, 500),
                (1, 1000),
                (1, 2000),
                (2, 500),
                (2, 1000),
                (2, 2000),
                (4, 500),
                (4, 1000),
                (4, 2000)
            ]
        );
    }

    #[test]
    fn problem_means_average_unweighted() {
        // One always-right problem and one always-wrong problem pin
        // every cell at exactly one half regardless of the draws.
        let set = PoolSet::new(vec![
            uniform_pool("right", "5", "5", 4),
            uniform_pool("wrong", "1", "9", 4),
        ]);
        let spec = grid(&[1, 3], &[500, 1500], 5);
        let cells = width_depth_surface(&set, &spec).unwrap();
        for cell in cells {
            assert_eq!(cell.accuracy, 0.5);
        }
    }

    #[test]
    fn single_branch_cells_average_final_accuracy() {
        // Within each problem all branches agree, so a width-1 draw is
        // fully determined and deep cells equal final-answer accuracy.
        let set = PoolSet::new(vec![
            uniform_pool("right", "5", "5", 6),
            uniform_pool("wrong", "1", "9", 6),
            uniform_pool("also-right", "4", "4", 6),
        ]);
        let spec = grid(&[1], &[2000], 7);
        let cells = width_depth_surface(&set, &spec).unwrap();
        assert_eq!(cells.len(), 1);
        let expected = (1.0 + 0.0 + 1.0) / 3.0;
        assert!((cells[0].accuracy - expected).abs() < 1e-12);
    }

    #[test]
    fn planted_flip_step_improves_accuracy_along_depth() {
        let branches = (0..4)
            .map(|i| branch(i, &["bad", "bad", "g", "g"], 2200, "g"))
            .collect();
        let set = PoolSet::new(vec![ProblemPool {
            problem_id: "flip".to_string(),
            gold_answer: Some(canonicalize("g")),
            probe_interval_tokens: DELTA,
            branches,
        }]);
        validate_set(&set).unwrap();
        let spec = grid(&[2, 4], &[500, 1000, 1500, 2000, 2500], 4);
        let cells = width_depth_surface(&set, &spec).unwrap();
        for width in [2usize, 4] {
            let along_depth: Vec<f64> = cells
                .iter()
                .filter(|c| c.width == width)
                .map(|c| c.accuracy)
                .collect();
            assert_eq!(along_depth, vec![0.0, 0.0, 1.0, 1.0, 1.0], "width {width}");
            let coverage: Vec<usize> = cells
                .iter()
                .filter(|c| c.width == width)
                .map(|c| c.coverage_count)
                .collect();
            assert_eq!(coverage, vec![1, 1, 1, 1, 0], "width {width}");
            let stable: Vec<bool> = cells
                .iter()
                .filter(|c| c.width == width)
                .map(|c| c.stable)
                .collect();
            assert_eq!(stable, vec![true, true, true, true, false], "width {width}");
        }
        let again = width_depth_surface(&set, &spec).unwrap();
        assert_eq!(cells, again);
    }

    #[test]
    fn grid_validation_rejects_bad_axes() {
        let set = PoolSet::new(vec![uniform_pool("p", "1", "1", 4)]);
        for spec in [
            grid(&[], &[500], 1),
            grid(&[2, 2], &[500], 1),
            grid(&[4, 2], &[500], 1),
            grid(&[0, 2], &[500], 1),
            grid(&[2], &[], 1),
            grid(&[2], &[500, 500], 1),
            grid(&[2], &[500], 0),
        ] {
            assert!(matches!(
                width_depth_surface(&set, &spec),
                Err(AnalysisError::InvalidGrid { .. })
            ));
        }
        assert!(matches!(
            width_depth_surface(&set, &grid(&[8], &[500], 1)),
            Err(AnalysisError::Pool(PoolError::WidthExceedsPool { .. }))
        ));
        assert!(matches!(
            width_depth_surface(&set, &grid(&[2], &[100, 500], 1)),
            Err(AnalysisError::DepthBelowInterval { .. })
        ));
        assert!(matches!(
            width_depth_surface(&PoolSet::new(vec![]), &grid(&[2], &[500], 1)),
            Err(AnalysisError::EmptySet)
        ));
        let mut no_gold = uniform_pool("p", "1", "1", 4);
        no_gold.gold_answer = None;
        assert!(matches!(
            width_depth_surface(&PoolSet::new(vec![no_gold]), &grid(&[2], &[500], 1)),
            Err(AnalysisError::NoGoldAnswers)
        ));
    }

    fn random_gold_pool(problem_id: &str, rng: &mut impl Rng) -> ProblemPool {
        let width = rng.gen_range(2..=5);
        let vocab = ["a", "b", "c"];
        let branches = (0..width)
            .map(|i| {
                let natural = rng.gen_range(300..4000);
                let max_probes = ((natural - 1) / DELTA) as usize;
                let probes = rng.gen_range(0..=max_probes.min(6));
                let values: Vec<&str> = (0..probes)
                    .map(|_| vocab[rng.gen_range(0..vocab.len())])
                    .collect();
                branch(i, &values, natural, vocab[rng.gen_range(0..vocab.len())])
            })
            .collect();
        ProblemPool {
            problem_id: problem_id.to_string(),
            gold_answer: Some(canonicalize("a")),
            probe_interval_tokens: DELTA,
            branches,
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn coverage_is_monotone_and_cells_are_well_formed(
            seed in 0u64..1_000_000,
            n_problems in 1usize..4,
            threshold in 0usize..3,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pools: Vec<ProblemPool> = (0..n_problems)
                .map(|p| random_gold_pool(&format!("p{p}"), &mut rng))
                .collect();
            let set = PoolSet::new(pools);
            validate_set(&set).unwrap();
            let spec = GridSpec {
                widths: vec![1, 2],
                depths: vec![500, 1000, 1700, 2600],
                repeats: 2,
                base_seed: seed,
                coverage_threshold: threshold,
            };
            let cells = width_depth_surface(&set, &spec).unwrap();
            for cell in &cells {
                prop_assert!((0.0..=1.0).contains(&cell.accuracy));
                prop_assert_eq!(cell.budget, cell.width as u64 * cell.depth_tokens);
                prop_assert_eq!(cell.stable, cell.coverage_count >= threshold);
            }
            for width in &spec.widths {
                let row: Vec<usize> = cells
                    .iter()
                    .filter(|c| c.width == *width)
                    .map(|c| c.coverage_count)
                    .collect();
                prop_assert!(row.windows(2).all(|w| w[0] >= w[1]),
                    "coverage must not increase with depth: {:?}", row);
            }
            for depth in &spec.depths {
                let column: Vec<usize> = cells
                    .iter()
                    .filter(|c| c.depth_tokens == *depth)
                    .map(|c| c.coverage_count)
                    .collect();
                prop_assert!(column.windows(2).all(|w| w[0] >= w[1]),
                    "coverage must not increase with width: {:?}", column);
            }
        }
    }

    fn onset_pool(problem_id: &str, early: &[&str], late: &str, steps: usize) -> ProblemPool {
        // Three branches over `steps` probe intervals; two open with the
        // `early` prefix, one answers `late` throughout, so the
        // consensus settles exactly when the prefix ends.
        let natural = steps as u64 * DELTA;
        let probes = steps - 1;
        let make = |id: u32, prefix: &[&str]| {
            let mut values: Vec<&str> = prefix.to_vec();
            while values.len() < probes {
                values.push(late);
            }
            values.truncate(probes);
            branch(id, &values, natural, late)
        };
        ProblemPool {
            problem_id: problem_id.to_string(),
            gold_answer: Some(canonicalize(late)),
            probe_interval_tokens: DELTA,
            branches: vec![make(0, early), make(1, early), make(2, &[])],
        }
    }

    #[test]
    fn onset_fixture_has_exact_ratio() {
        let set = PoolSet::new(vec![onset_pool("p", &["h", "h"], "g", 10)]);
        validate_set(&set).unwrap();
        let dist = onset_distribution(&set).unwrap();
        assert_eq!(dist.records.len(), 1);
        assert_eq!(dist.records[0].onset_step, 3);
        assert_eq!(dist.records[0].ratio, 0.3);
        assert_eq!(dist.mean_ratio, 0.3);
    }

    #[test]
    fn onset_mean_averages_problem_ratios() {
        let set = PoolSet::new(vec![
            onset_pool("fast", &[], "g", 5),
            onset_pool("slow", &["h"], "g", 5),
        ]);
        validate_set(&set).unwrap();
        let dist = onset_distribution(&set).unwrap();
        assert_eq!(dist.records[0].onset_step, 1);
        assert_eq!(dist.records[0].ratio, 0.2);
        assert_eq!(dist.records[1].onset_step, 2);
        assert_eq!(dist.records[1].ratio, 0.4);
        assert!((dist.mean_ratio - 0.3).abs() < 1e-12);
        assert!(matches!(
            onset_distribution(&PoolSet::new(vec![])),
            Err(AnalysisError::EmptySet)
        ));
    }

    #[test]
    fn onset_ratio_stays_within_unit_interval() {
        // Horizon times delta overshoots a natural length that is not
        // an interval multiple; the ratio clamps at one.
        let set = PoolSet::new(vec![ProblemPool {
            problem_id: "ragged".to_string(),
            gold_answer: None,
            probe_interval_tokens: DELTA,
            branches: vec![
                branch(0, &["b", "b"], 1300, "a"),
                branch(1, &["b", "b"], 1300, "a"),
            ],
        }]);
        validate_set(&set).unwrap();
        let dist = onset_distribution(&set).unwrap();
        assert_eq!(dist.records[0].onset_step, 3);
        assert_eq!(dist.records[0].ratio, 1.0);
    }

    #[test]
    fn scaling_sweep_matches_independent_simulations() {
        let set = PoolSet::new(vec![
            uniform_pool("right", "5", "5", 6),
            uniform_pool("wrong", "1", "9", 6),
        ]);
        let mut sweep = Vec::new();
        for width in [4usize, 1, 2] {
            let mut cfg = SimConfig::new(PolicySpec::Sc);
            cfg.width = width;
            cfg.repeats = 3;
            cfg.base_seed = 21;
            sweep.push(cfg);
        }
        let points = scaling_curve(&set, &sweep).unwrap();
        assert_eq!(points.len(), 3);
        let tokens: Vec<f64> = points.iter().map(|p| p.mean_total_tokens).collect();
        assert!(tokens.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(
            points.iter().map(|p| p.width).collect::<Vec<_>>(),
            vec![1, 2, 4]
        );
        for point in &points {
            let cfg = sweep.iter().find(|c| c.width == point.width).unwrap();
            let report = simulate(&set, cfg).unwrap();
            assert_eq!(point.mean_total_tokens, report.aggregate.mean_total_tokens);
            assert_eq!(point.accuracy_pct, report.aggregate.accuracy_pct);
            assert_eq!(point.accuracy_pct, Some(50.0));
        }
    }

    #[test]
    fn scaling_curve_keeps_duplicate_configs_and_rejects_mixed_seeds() {
        let set = PoolSet::new(vec![uniform_pool("p", "5", "5", 4)]);
        let mut cfg = SimConfig::new(PolicySpec::Sc);
        cfg.width = 2;
        cfg.repeats = 2;
        cfg.base_seed = 3;
        let points = scaling_curve(&set, &[cfg.clone(), cfg.clone()]).unwrap();
        assert_eq!(points.len(), 2);
        assert_eq!(points[0], points[1]);
        assert_eq!(points[0].accuracy_pct, Some(100.0));

        let mut other = cfg.clone();
        other.base_seed = 4;
        assert!(matches!(
            scaling_curve(&set, &[cfg, other]),
            Err(AnalysisError::MixedSeeds)
        ));
        assert!(matches!(
            scaling_curve(&set, &[]),
            Err(AnalysisError::EmptySweep)
        ));
    }

    #[test]
    fn csv_exports_match_expected_layout() {
        let cells = vec![SurfaceCell {
            width: 8,
            depth_tokens: 1500,
            accuracy: 0.75,
            coverage_count: 12,
            budget: 12000,
            stable: true,
        }];
        assert_eq!(
            surface_csv(&cells),
            "width,depth_tokens,accuracy,coverage,budget\n8,1500,0.750000,12,12000\n"
        );
        let dist = OnsetDistribution {
            records: vec![OnsetRecord {
                problem_id: "p1".to_string(),
                onset_step: 3,
                ratio: 0.3,
            }],
            mean_ratio: 0.3,
        };
        assert_eq!(
            onset_csv(&dist),
            "problem_id,onset_step,ratio\np1,3,0.300000\n"
        );
        let points = vec![ScalingPoint {
            policy: "sc".to_string(),
            width: 4,
            mean_total_tokens: 31600.0,
            accuracy_pct: Some(82.5),
        }];
        assert_eq!(
            scaling_csv(&points),
            "policy,width,mean_total_tokens,accuracy_pct\nsc,4,31600.00,82.50\n"
        );
    }
}
