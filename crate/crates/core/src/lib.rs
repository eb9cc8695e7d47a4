//! Stochastic-shortest-path toolkit.
//!
//! Models live in [`mdp`]: finite state sets with an implicit absorbing,
//! cost-free termination state, substochastic transition rows, and
//! per-action costs. On top of that sit
//!
//! * [`dp`]: exact Bellman operators, value iteration, policy evaluation
//!   and policy iteration, and a weighted-sup-norm contraction
//!   certificate valid whenever every policy is proper;
//! * [`sim`]: reproducible trajectory simulation with per-episode random
//!   streams, episode costs, and temporal-difference targets;
//! * [`opi`]: optimistic policy iteration driven by sampled episodes,
//!   in a Monte Carlo and a TD(lambda) variant, always acting greedily
//!   with respect to the current value estimate;
//! * [`diagnostics`]: run logs, Bellman residuals, and run summaries for
//!   judging convergence of the stochastic iterations;
//! * [`instances`]: generators for benchmark families plus a JSON file
//!   format with exact round-tripping.

pub mod diagnostics;
pub mod dp;
pub mod instances;
pub mod mdp;
pub mod opi;
pub mod sim;

#[cfg(test)]
pub(crate) mod fixtures;

pub use diagnostics::{RunLog, RunRecord, RunSummary};
pub use dp::{ContractionCertificate, DpError, SolveReport, ValueVector};
pub use mdp::{ActionId, ModelError, Policy, PropernessReport, RawMdp, SspMdp, TrapWitness};
pub use opi::{EvalMethod, OpiConfig, OpiError, OpiState, StepSchedule};
pub use sim::{RngStream, SimError, TrajectorySample};
