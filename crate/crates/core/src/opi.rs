//! Optimistic policy iteration driven by simulation.
//!
//! The exact method alternates full policy evaluation with greedy
//! improvement. The optimistic variants here replace the evaluation by a
//! single sampled episode per state and a stochastic-approximation
//! update, and improve greedily after every such sweep:
//!
//! * Monte Carlo: mix the episode cost into the estimate,
//!   `J'(i) = (1 - gamma) J(i) + gamma * episode_cost(i)`.
//! * TD(lambda): nudge the estimate by the geometrically weighted sum of
//!   one-step differences, `J'(i) = J(i) + gamma * td_target(i)`.
//!
//! Updates within a sweep are synchronous: every state's target is
//! scored against the same iterate `J`, and the greedy policy for the
//! next sweep is taken from the fully updated vector. Episodes draw from
//! counter-based streams keyed by `(seed, sweep, state)`, making runs
//! reproducible regardless of how the per-state work is scheduled, and
//! every episode must terminate within the configured cutoff; with all
//! policies proper that is almost sure, so hitting the cutoff aborts the
//! run as an assumption violation.
//!
//! Step sizes follow the usual stochastic-approximation schedule
//! `gamma_t = a / (b + t + 1)^p` with `p` in (0.5, 1], which sums to
//! infinity while its squares stay summable.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::diagnostics::{bellman_residual, RunLog, RunRecord};
use crate::dp::{greedy_policy, ValueVector};
use crate::mdp::{ModelError, Policy, SspMdp};
use crate::sim::{sample_trajectory, td_lambda_target, trajectory_cost, RngStream, SimError, TrajectorySample};

/// Episode step cutoff used when a configuration does not set one.
pub const DEFAULT_CUTOFF: usize = 1_000_000;

/// Record cadence used when a configuration does not set one.
pub const DEFAULT_RECORD_EVERY: usize = 100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OpiError {
    #[error("invalid step-size schedule: {0}")]
    InvalidSchedule(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(
        "sweep {iteration}: episode from state {state} exceeded {cutoff} steps; \
         the policy being evaluated appears improper"
    )]
    TruncatedEpisode { iteration: usize, state: usize, cutoff: usize },
    #[error("not every policy is proper; trap states {0:?}")]
    NotAllProper(Vec<usize>),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Step sizes `gamma_t = a / (b + t + 1)^p`.
///
/// Constraints: `a > 0`, `b >= 0`, `p` in (0.5, 1], and `a <= (b + 1)^p`
/// so that every step size lies in (0, 1]. The exponent range makes the
/// steps square-summable but not summable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepSchedule {
    a: f64,
    b: f64,
    p: f64,
}

impl StepSchedule {
    pub fn polynomial(a: f64, b: f64, p: f64) -> Result<Self, OpiError> {
        let fail = |msg: String| Err(OpiError::InvalidSchedule(msg));
        if !(a.is_finite() && a > 0.0) {
            return fail(format!("a must be positive and finite, got {a}"));
        }
        if !(b.is_finite() && b >= 0.0) {
            return fail(format!("b must be nonnegative and finite, got {b}"));
        }
        if !(p > 0.5 && p <= 1.0) {
            return fail(format!("p must lie in (0.5, 1], got {p}"));
        }
        if a > (b + 1.0).powf(p) {
            return fail(format!(
                "a = {a} exceeds (b + 1)^p = {}; the first step size would leave (0, 1]",
                (b + 1.0).powf(p)
            ));
        }
        Ok(StepSchedule { a, b, p })
    }

    /// The classic `1 / (t + 1)` schedule.
    pub fn harmonic() -> Self {
        StepSchedule { a: 1.0, b: 0.0, p: 1.0 }
    }

    pub fn gamma(&self, t: usize) -> f64 {
        self.a / (self.b + t as f64 + 1.0).powf(self.p)
    }
}

/// How sampled episodes are turned into update targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum EvalMethod {
    MonteCarlo,
    TdLambda { lambda: f64 },
}

/// Everything a run needs besides the model and an optional oracle.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OpiConfig {
    pub method: EvalMethod,
    pub schedule: StepSchedule,
    /// Number of sweeps to perform.
    pub iterations: usize,
    pub seed: u64,
    /// Episode step cutoff; exceeding it aborts the run.
    pub cutoff: usize,
    /// Cadence of log records. The states at sweep 0 and after the last
    /// sweep are always recorded.
    pub record_every: usize,
}

impl OpiConfig {
    pub fn validate(&self) -> Result<(), OpiError> {
        if let EvalMethod::TdLambda { lambda } = self.method {
            check_lambda(lambda)?;
        }
        if self.cutoff == 0 {
            return Err(OpiError::InvalidConfig("cutoff must be at least 1".into()));
        }
        if self.record_every == 0 {
            return Err(OpiError::InvalidConfig("record_every must be at least 1".into()));
        }
        Ok(())
    }
}

fn check_lambda(lambda: f64) -> Result<(), OpiError> {
    if lambda == 1.0 {
        return Err(OpiError::InvalidConfig(
            "lambda = 1 weighs the whole episode, which is exactly the monte_carlo method; \
             run that instead"
                .into(),
        ));
    }
    if !(0.0..1.0).contains(&lambda) {
        return Err(OpiError::InvalidConfig(format!("lambda must lie in [0, 1), got {lambda}")));
    }
    Ok(())
}

/// One point of the optimistic iteration: the sweep count, the value
/// estimate, and the policy the next sweep will evaluate. Runs keep the
/// policy greedy with respect to the values.
#[derive(Debug, Clone, PartialEq)]
pub struct OpiState {
    pub t: usize,
    pub value: ValueVector,
    pub policy: Policy,
}

impl OpiState {
    /// Sweep 0: zero values and their greedy policy.
    pub fn initial(mdp: &SspMdp) -> Self {
        let value = ValueVector::zeros(mdp.n());
        let policy = greedy_policy(mdp, &value);
        OpiState { t: 0, value, policy }
    }
}

/// Samples one episode per state under `policy` and scores each with
/// `score`. Episodes are independent across states and sweeps; the order
/// of evaluation cannot affect the result, so the states are processed
/// in parallel. Errors are reported for the smallest offending state.
fn sample_targets<F>(
    mdp: &SspMdp,
    policy: &Policy,
    iteration: usize,
    seed: u64,
    cutoff: usize,
    score: F,
) -> Result<Vec<f64>, OpiError>
where
    F: Fn(&TrajectorySample) -> Result<f64, SimError> + Sync,
{
    mdp.check_policy(policy)?;
    let results: Vec<Result<f64, OpiError>> = (1..=mdp.n())
        .into_par_iter()
        .map(|state| {
            let mut stream = RngStream::for_episode(seed, iteration as u64, state);
            let sample = sample_trajectory(mdp, policy, state, &mut stream, cutoff)?;
            if sample.truncated {
                return Err(OpiError::TruncatedEpisode { iteration, state, cutoff });
            }
            Ok(score(&sample)?)
        })
        .collect();
    results.into_iter().collect()
}

/// One Monte Carlo sweep: per state, mix the sampled episode cost into
/// the estimate with weight `gamma_t`, then act greedily on the result.
pub fn mc_step(
    mdp: &SspMdp,
    state: &OpiState,
    schedule: &StepSchedule,
    seed: u64,
    cutoff: usize,
) -> Result<OpiState, OpiError> {
    let gamma = schedule.gamma(state.t);
    let targets = sample_targets(mdp, &state.policy, state.t, seed, cutoff, trajectory_cost)?;
    let values = state
        .value
        .values()
        .iter()
        .zip(&targets)
        .map(|(&j, &target)| (1.0 - gamma) * j + gamma * target)
        .collect();
    let value = ValueVector::new(values);
    let policy = greedy_policy(mdp, &value);
    Ok(OpiState { t: state.t + 1, value, policy })
}

/// One TD(lambda) sweep: per state, nudge the estimate by `gamma_t` times
/// the episode's temporal-difference target, then act greedily.
pub fn td_step(
    mdp: &SspMdp,
    state: &OpiState,
    lambda: f64,
    schedule: &StepSchedule,
    seed: u64,
    cutoff: usize,
) -> Result<OpiState, OpiError> {
    check_lambda(lambda)?;
    let gamma = schedule.gamma(state.t);
    let current = &state.value;
    let targets = sample_targets(mdp, &state.policy, state.t, seed, cutoff, |sample| {
        td_lambda_target(sample, current, lambda)
    })?;
    let values = current
        .values()
        .iter()
        .zip(&targets)
        .map(|(&j, &target)| j + gamma * target)
        .collect();
    let value = ValueVector::new(values);
    let policy = greedy_policy(mdp, &value);
    Ok(OpiState { t: state.t + 1, value, policy })
}

/// Runs the optimistic iteration from zero values for the configured
/// number of sweeps, recording diagnostics as it goes.
///
/// Requires every policy to be proper, so that any sweep's greedy policy
/// can be evaluated by simulation. When `oracle` holds the optimal
/// values, records track the sup distance to it.
pub fn run(
    mdp: &SspMdp,
    config: &OpiConfig,
    oracle: Option<&ValueVector>,
) -> Result<RunLog, OpiError> {
    config.validate()?;
    if let Some(witness) = mdp.trap_witness() {
        return Err(OpiError::NotAllProper(witness.states()));
    }
    if let Some(oracle) = oracle {
        assert_eq!(oracle.len(), mdp.n(), "oracle does not match the model");
    }

    let mut state = OpiState::initial(mdp);
    let mut records = Vec::new();
    let mut policy_changed = false;
    records.push(make_record(mdp, &state, config, oracle, false));

    for _ in 0..config.iterations {
        let next = match config.method {
            EvalMethod::MonteCarlo => {
                mc_step(mdp, &state, &config.schedule, config.seed, config.cutoff)?
            }
            EvalMethod::TdLambda { lambda } => {
                td_step(mdp, &state, lambda, &config.schedule, config.seed, config.cutoff)?
            }
        };
        if next.policy != state.policy {
            policy_changed = true;
        }
        state = next;
        if state.t.is_multiple_of(config.record_every) || state.t == config.iterations {
            records.push(make_record(mdp, &state, config, oracle, policy_changed));
            policy_changed = false;
        }
    }

    Ok(RunLog {
        config: config.clone(),
        records,
        final_value: state.value,
        final_policy: state.policy,
    })
}

fn make_record(
    mdp: &SspMdp,
    state: &OpiState,
    config: &OpiConfig,
    oracle: Option<&ValueVector>,
    policy_changed: bool,
) -> RunRecord {
    RunRecord {
        t: state.t,
        gamma: config.schedule.gamma(state.t),
        bellman_residual: bellman_residual(mdp, &state.value),
        sup_error: oracle.map(|o| state.value.sup_distance(o)),
        policy_changed,
        sup_value: state.value.sup_norm(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn schedule_validates_its_parameters() {
        let schedule = StepSchedule::polynomial(1.0, 0.0, 1.0).unwrap();
        assert_eq!(schedule.gamma(0), 1.0);
        assert_eq!(schedule.gamma(1), 0.5);
        assert_eq!(schedule.gamma(9), 0.1);
        assert_eq!(schedule, StepSchedule::harmonic());

        // a <= (b+1)^p keeps step sizes within (0, 1].
        let schedule = StepSchedule::polynomial(2.0, 3.0, 1.0).unwrap();
        assert_eq!(schedule.gamma(0), 0.5);
        assert!(StepSchedule::polynomial(2.0, 0.0, 1.0).is_err());
        assert!(StepSchedule::polynomial(1.0, 0.0, 0.5).is_err());
        assert!(StepSchedule::polynomial(1.0, 0.0, 1.1).is_err());
        assert!(StepSchedule::polynomial(0.0, 0.0, 1.0).is_err());
        assert!(StepSchedule::polynomial(f64::NAN, 0.0, 1.0).is_err());
    }

    #[test]
    fn initial_state_is_greedy_for_zero() {
        let state = OpiState::initial(&fixtures::twoact());
        assert_eq!(state.t, 0);
        assert_eq!(state.value, ValueVector::zeros(1));
        // At zero values the cheap looping action wins over the exit.
        assert_eq!(state.policy, Policy::new(vec![1]));
    }

    #[test]
    fn mc_step_on_a_deterministic_chain_hits_the_exact_values() {
        let mdp = fixtures::chain2();
        let state = OpiState::initial(&mdp);
        // gamma_0 = 1 and the chain's episode costs are deterministic.
        let next = mc_step(&mdp, &state, &StepSchedule::harmonic(), 0, 1000).unwrap();
        assert_eq!(next.t, 1);
        assert_eq!(next.value.values(), &[1.0, 2.0]);
        assert_eq!(next.policy, Policy::new(vec![0, 0]));
    }

    #[test]
    fn td_step_accumulates_discounted_differences() {
        let mdp = fixtures::chain2();
        let state = OpiState::initial(&mdp);
        let next = td_step(&mdp, &state, 0.5, &StepSchedule::harmonic(), 0, 1000).unwrap();
        // From zero values every step's difference is the cost 1, so the
        // targets are 1 and 1 + 0.5.
        assert_eq!(next.value.values(), &[1.0, 1.5]);
    }

    #[test]
    fn sweeps_score_every_state_against_the_same_iterate() {
        let mdp = fixtures::chain2();
        let state = OpiState {
            t: 5,
            value: ValueVector::new(vec![0.5, 1.0]),
            policy: Policy::new(vec![0, 0]),
        };
        let next = td_step(&mdp, &state, 0.5, &StepSchedule::harmonic(), 0, 1000).unwrap();
        // State 2's episode is 2 -> 1 -> 0. Scored against the unmodified
        // iterate: (1 + 0.5 - 1.0) + 0.5 * (1 + 0 - 0.5) = 0.75. A sweep
        // that leaked state 1's update into the scoring would see a
        // different first difference.
        let gamma = 1.0 / 6.0;
        assert!((next.value.get(2) - (1.0 + gamma * 0.75)).abs() <= 1e-15);
        assert!((next.value.get(1) - (0.5 + gamma * 0.5)).abs() <= 1e-15);
    }

    #[test]
    fn truncated_episode_aborts_the_sweep() {
        let mdp = fixtures::trap();
        let state = OpiState {
            t: 0,
            value: ValueVector::zeros(2),
            policy: Policy::new(vec![0, 0]),
        };
        let err = mc_step(&mdp, &state, &StepSchedule::harmonic(), 0, 10).unwrap_err();
        assert_eq!(err, OpiError::TruncatedEpisode { iteration: 0, state: 2, cutoff: 10 });
    }

    #[test]
    fn lambda_one_is_redirected_to_monte_carlo() {
        let mdp = fixtures::chain2();
        let state = OpiState::initial(&mdp);
        let err = td_step(&mdp, &state, 1.0, &StepSchedule::harmonic(), 0, 1000).unwrap_err();
        match err {
            OpiError::InvalidConfig(msg) => assert!(msg.contains("monte_carlo")),
            other => panic!("unexpected error {other:?}"),
        }
        assert!(td_step(&mdp, &state, -0.1, &StepSchedule::harmonic(), 0, 1000).is_err());
    }

    #[test]
    fn run_records_on_schedule_and_keeps_the_policy_greedy() {
        let mdp = fixtures::twoact();
        let config = OpiConfig {
            method: EvalMethod::MonteCarlo,
            schedule: StepSchedule::harmonic(),
            iterations: 55,
            seed: 42,
            cutoff: DEFAULT_CUTOFF,
            record_every: 10,
        };
        let log = run(&mdp, &config, None).unwrap();
        let ts: Vec<usize> = log.records.iter().map(|r| r.t).collect();
        assert_eq!(ts, vec![0, 10, 20, 30, 40, 50, 55]);
        assert_eq!(log.records[0].gamma, 1.0);
        assert_eq!(log.final_policy, greedy_policy(&mdp, &log.final_value));
        assert!(log.records.iter().all(|r| r.sup_error.is_none()));

        // Identical configuration, identical bytes.
        let again = run(&mdp, &config, None).unwrap();
        assert_eq!(log.to_csv(), again.to_csv());
    }

    #[test]
    fn run_requires_all_policies_proper() {
        let config = OpiConfig {
            method: EvalMethod::MonteCarlo,
            schedule: StepSchedule::harmonic(),
            iterations: 5,
            seed: 0,
            cutoff: 100,
            record_every: 1,
        };
        let err = run(&fixtures::trap(), &config, None).unwrap_err();
        assert_eq!(err, OpiError::NotAllProper(vec![2]));
    }

    #[test]
    fn run_tracks_oracle_distance_when_given() {
        let mdp = fixtures::chain2();
        let oracle = ValueVector::new(vec![1.0, 2.0]);
        let config = OpiConfig {
            method: EvalMethod::TdLambda { lambda: 0.0 },
            schedule: StepSchedule::harmonic(),
            iterations: 3,
            seed: 0,
            cutoff: 100,
            record_every: 1,
        };
        let log = run(&mdp, &config, Some(&oracle)).unwrap();
        assert_eq!(log.records[0].sup_error, Some(2.0));
        let last = log.records.last().unwrap();
        assert!(last.sup_error.unwrap() < 2.0);
    }
}
