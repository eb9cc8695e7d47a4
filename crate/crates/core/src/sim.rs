//! Trajectory simulation with reproducible randomness.
//!
//! Every episode draws from its own counter-based stream, keyed by
//! `(master seed, iteration, start state)`. Streams are therefore
//! independent of thread scheduling and of how many other episodes were
//! sampled before, which is what makes whole runs replayable bit for bit
//! regardless of parallelism.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dp::ValueVector;
use crate::mdp::{Action, ModelError, Policy, SspMdp};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("sample was truncated before termination; its episode statistics are undefined")]
    TruncatedSample,
    #[error("lambda must lie in [0, 1), got {0}")]
    LambdaOutOfRange(f64),
}

/// Random stream for one episode, keyed so that `(seed, iteration, start)`
/// always reproduces the same draws.
pub struct RngStream {
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn for_episode(master_seed: u64, iteration: u64, start_state: usize) -> Self {
        let mut key = [0u8; 32];
        key[0..8].copy_from_slice(&master_seed.to_le_bytes());
        key[8..16].copy_from_slice(&iteration.to_le_bytes());
        key[16..24].copy_from_slice(&(start_state as u64).to_le_bytes());
        key[24..32].copy_from_slice(b"ssp.traj");
        RngStream { rng: ChaCha8Rng::from_seed(key) }
    }

    /// Uniform draw from `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random()
    }
}

/// One simulated episode. `states` starts at the start state and ends at
/// the termination state 0, unless the step cutoff hit first; `costs[k]`
/// is the cost incurred when leaving `states[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySample {
    pub states: Vec<usize>,
    pub costs: Vec<f64>,
    pub truncated: bool,
}

impl TrajectorySample {
    /// Number of transitions taken.
    pub fn steps(&self) -> usize {
        self.costs.len()
    }
}

/// Next state for one transition row, by inverse CDF over the stored
/// transitions in target order, with the termination mass last.
///
/// Rows without termination mass never emit state 0, even if their
/// stored probabilities sum to one only up to rounding: the float gap is
/// folded into the last transition. Termination frequencies therefore
/// match `term_prob` up to one ulp of the row sum.
fn sample_next(action: &Action, u: f64) -> usize {
    let mut cumulative = 0.0;
    for &(target, p) in &action.transitions {
        cumulative += p;
        if u < cumulative {
            return target;
        }
    }
    if action.term_prob > 0.0 {
        0
    } else {
        action.transitions.last().expect("no-termination row has transitions").0
    }
}

/// Simulates the policy from `start` until termination, or until `cutoff`
/// transitions have been taken, whichever comes first. Hitting the cutoff
/// is reported via `truncated`, not as an error: with an improper policy
/// it is an expected outcome.
pub fn sample_trajectory(
    mdp: &SspMdp,
    policy: &Policy,
    start: usize,
    stream: &mut RngStream,
    cutoff: usize,
) -> Result<TrajectorySample, ModelError> {
    assert!(cutoff > 0, "cutoff must be at least one step");
    mdp.check_state(start)?;
    let rows = mdp.resolve_policy(policy)?;

    let mut states = vec![start];
    let mut costs = Vec::new();
    let mut state = start;
    while state != 0 && costs.len() < cutoff {
        let action = rows[state - 1];
        costs.push(action.cost);
        state = sample_next(action, stream.uniform());
        states.push(state);
    }
    Ok(TrajectorySample { states, costs, truncated: state != 0 })
}

/// Total cost of a completed episode.
pub fn trajectory_cost(sample: &TrajectorySample) -> Result<f64, SimError> {
    if sample.truncated {
        return Err(SimError::TruncatedSample);
    }
    Ok(sample.costs.iter().sum())
}

/// Temporal-difference target of a completed episode: the sum over steps
/// of `lambda^k` times the one-step difference
/// `cost_k + j(next_k) - j(state_k)`, with `j` pinned at 0 on state 0.
///
/// Added to `j(start)`, this estimates a geometric-weight average of
/// multi-step backups of `j` under the sampled policy; at `lambda = 0`
/// only the first difference survives, and as `lambda` approaches 1 the
/// target approaches the Monte Carlo correction. `lambda = 1` itself is
/// rejected: use the episode cost directly.
pub fn td_lambda_target(
    sample: &TrajectorySample,
    j: &ValueVector,
    lambda: f64,
) -> Result<f64, SimError> {
    if !(0.0..1.0).contains(&lambda) {
        return Err(SimError::LambdaOutOfRange(lambda));
    }
    if sample.truncated {
        return Err(SimError::TruncatedSample);
    }
    let mut target = 0.0;
    let mut weight = 1.0;
    for k in 0..sample.steps() {
        let difference =
            sample.costs[k] + j.get_or_zero(sample.states[k + 1]) - j.get(sample.states[k]);
        target += weight * difference;
        weight *= lambda;
    }
    Ok(target)
}
