//! Control and evaluation toolkit for parallel sampling with periodic
//! answer probes.
//!
//! A run samples `N` reasoning branches in parallel and forces each branch
//! to emit its answer-so-far every `Δ` generated tokens. The resulting
//! branch × step answer grid drives a step-wise controller that stops the
//! whole ensemble once the majority answer is stable and prunes branches
//! that keep deviating from it. Recorded runs are frozen into candidate
//! pools so that control policies can be replayed and compared offline on
//! identical draws, with exact token accounting.
//!
//! Module map:
//!
//! - [`answer`]: canonical answer values and the majority-vote primitive.
//! - [`pool`]: candidate-pool data model, JSONL persistence, validation,
//!   seeded subsampling.
//! - [`matrix`]: the branch × probe-step answer grid with carry-forward
//!   semantics and convergence diagnostics.
//! - [`policy`]: the step-wise consensus controller and the baseline
//!   policies it is compared against.
//! - [`sim`]: seeded resampling simulation over pools, metric aggregation,
//!   paired policy comparison.
//! - [`analysis`]: width–depth accuracy surfaces, coverage, convergence
//!   onset, scaling curves.
//! - [`driver`]: live collection and live control against a
//!   text-generation endpoint.
//! - [`synth`]: synthetic pool generators with planted statistics.
//! - [`reference`]: a naive re-derivation of the controller rules plus a
//!   matrix fuzzer, for differential testing.

pub mod analysis;
pub mod answer;
pub mod driver;
pub mod matrix;
pub mod sim;
pub mod policy;
pub mod pool;
pub mod reference;
pub mod synth;

pub use answer::{Answer, AnswerKey, VoteTally};
pub use matrix::ProbeMatrix;
pub use policy::{PolicyConfig, RunOutcome, StopReason};
pub use pool::{BranchTrace, PoolSet, ProblemPool};
pub use sim::{SimConfig, SimReport};
