//! Exact dynamic programming on stochastic-shortest-path models.
//!
//! The central objects are the one-step backup operators. For a value
//! vector `J` over the non-terminal states (the termination state is
//! pinned at value 0),
//!
//! * the optimal backup takes `min` over actions of
//!   `cost + sum_j p(j) J(j)`,
//! * the policy backup applies the same map with the policy's action.
//!
//! Both are monotone, and when every policy is proper the optimal backup
//! is a contraction in a weighted sup norm whose weights are the
//! worst-case expected times to termination; [`contraction_certificate`]
//! computes those weights and the contraction modulus. Fixed points:
//! the optimal backup's fixed point is the optimal value vector, the
//! policy backup's fixed point is that policy's value vector, and the
//! latter solves a linear system, which [`exact_policy_value`] does
//! directly.

use nalgebra::{DMatrix, DVector};

use crate::mdp::{Action, ModelError, Policy, SspMdp};
use thiserror::Error;

/// Sup-norm tolerance at which value iteration declares convergence,
/// unless the caller picks another.
pub const DEFAULT_VI_TOL: f64 = 1e-10;

/// Iteration cap for fixed-point loops.
pub const DEFAULT_MAX_ITER: usize = 1_000_000;

/// Largest model for which dense linear solves are attempted.
pub const DENSE_SOLVE_LIMIT: usize = 2000;

/// Sweep cap for policy iteration; reached only if floating-point ties
/// make the greedy step cycle, which the strict-improvement tie-break
/// prevents.
const PI_SWEEP_CAP: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DpError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("policy is improper; termination unreachable from states {0:?}")]
    ImproperPolicy(Vec<usize>),
    #[error("not every policy is proper; trap states {0:?}")]
    NotAllProper(Vec<usize>),
    #[error("linear system is numerically singular")]
    SingularSystem,
    #[error("no convergence within {max_iter} iterations; last residual {residual}")]
    MaxIterExceeded { max_iter: usize, residual: f64 },
    #[error("dense solves are limited to {limit} states, model has {n}")]
    TooLarge { n: usize, limit: usize },
    #[error("weight vector has nonpositive entry at state {0}")]
    NonpositiveWeight(usize),
}

/// Value vector over states `1..=n`. Entries are always finite; the
/// termination state is implicit with value 0.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
#[serde(transparent)]
pub struct ValueVector {
    values: Vec<f64>,
}

impl ValueVector {
    /// # Panics
    ///
    /// Panics if any entry is not finite.
    pub fn new(values: Vec<f64>) -> Self {
        assert!(values.iter().all(|v| v.is_finite()), "value vector entries must be finite");
        ValueVector { values }
    }

    pub fn zeros(n: usize) -> Self {
        ValueVector { values: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Value at a non-terminal state (1-based).
    pub fn get(&self, state: usize) -> f64 {
        self.values[state - 1]
    }

    /// Value at any state, with the termination state pinned at 0.
    pub fn get_or_zero(&self, state: usize) -> f64 {
        if state == 0 {
            0.0
        } else {
            self.values[state - 1]
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    /// Sup-norm distance. Panics on length mismatch.
    pub fn sup_distance(&self, other: &ValueVector) -> f64 {
        assert_eq!(self.len(), other.len(), "value vectors differ in length");
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |acc, (a, b)| acc.max((a - b).abs()))
    }
}

/// Result of an iterative solve.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub value: ValueVector,
    pub iterations: usize,
    /// Sup-norm change of the final iteration.
    pub residual: f64,
}

/// Result of policy iteration.
#[derive(Debug, Clone)]
pub struct PolicyIterationReport {
    pub policy: Policy,
    pub value: ValueVector,
    /// Evaluation-improvement sweeps performed, including the one that
    /// confirmed stability.
    pub sweeps: usize,
}

/// Weights and modulus certifying that the optimal backup contracts.
///
/// `xi[i]` is the worst-case (over policies) expected number of steps to
/// termination from state `i + 1`, and both backup operators satisfy
/// `max_i |TJ(i) - TJ'(i)| / xi(i) <= beta * max_i |J(i) - J'(i)| / xi(i)`
/// with `beta = max_i (xi(i) - 1) / xi(i) < 1`.
#[derive(Debug, Clone)]
pub struct ContractionCertificate {
    pub xi: Vec<f64>,
    pub beta: f64,
}

fn q_value(action: &Action, j: &ValueVector) -> f64 {
    let future: f64 = action
        .transitions
        .iter()
        .map(|&(target, p)| p * j.get(target))
        .sum();
    action.cost + future
}

/// Optimal backup: per state, the best one-step cost-to-go under `j`.
pub fn bellman_operator(mdp: &SspMdp, j: &ValueVector) -> ValueVector {
    assert_eq!(j.len(), mdp.n(), "value vector does not match the model");
    let values = (1..=mdp.n())
        .map(|state| {
            mdp.actions(state)
                .iter()
                .map(|a| q_value(a, j))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    ValueVector::new(values)
}

/// Policy backup: one-step cost-to-go under `j` with the policy's action.
pub fn policy_operator(
    mdp: &SspMdp,
    policy: &Policy,
    j: &ValueVector,
) -> Result<ValueVector, DpError> {
    assert_eq!(j.len(), mdp.n(), "value vector does not match the model");
    let rows = mdp.resolve_policy(policy)?;
    Ok(ValueVector::new(rows.iter().map(|a| q_value(a, j)).collect()))
}

/// The policy backup applied `k` times.
pub fn policy_operator_k(
    mdp: &SspMdp,
    policy: &Policy,
    j: &ValueVector,
    k: usize,
) -> Result<ValueVector, DpError> {
    assert_eq!(j.len(), mdp.n(), "value vector does not match the model");
    let rows = mdp.resolve_policy(policy)?;
    let mut current = j.clone();
    for _ in 0..k {
        current = ValueVector::new(rows.iter().map(|a| q_value(a, &current)).collect());
    }
    Ok(current)
}

/// Policy selecting, per state, the action minimizing the one-step
/// cost-to-go under `j`. Ties go to the smallest action id.
pub fn greedy_policy(mdp: &SspMdp, j: &ValueVector) -> Policy {
    assert_eq!(j.len(), mdp.n(), "value vector does not match the model");
    let choices = (1..=mdp.n())
        .map(|state| {
            let actions = mdp.actions(state);
            let mut best = &actions[0];
            let mut best_q = q_value(best, j);
            for action in &actions[1..] {
                let q = q_value(action, j);
                if q < best_q {
                    best = action;
                    best_q = q;
                }
            }
            best.id
        })
        .collect();
    Policy::new(choices)
}

/// Iterates the optimal backup from `j0` until the sup-norm change drops
/// below `tol`.
pub fn value_iteration(
    mdp: &SspMdp,
    j0: &ValueVector,
    tol: f64,
    max_iter: usize,
) -> Result<SolveReport, DpError> {
    assert!(tol > 0.0, "tolerance must be positive");
    let mut value = j0.clone();
    let mut residual = f64::INFINITY;
    for iterations in 1..=max_iter {
        let next = bellman_operator(mdp, &value);
        residual = next.sup_distance(&value);
        value = next;
        if residual < tol {
            return Ok(SolveReport { value, iterations, residual });
        }
    }
    Err(DpError::MaxIterExceeded { max_iter, residual })
}

fn solve_linear(
    mdp: &SspMdp,
    rows: &[&Action],
    rhs: impl Fn(&Action) -> f64,
) -> Result<Vec<f64>, DpError> {
    let n = mdp.n();
    // A = I - P restricted to the selected rows.
    let mut a = DMatrix::<f64>::identity(n, n);
    let mut b = DVector::<f64>::zeros(n);
    for (idx, row) in rows.iter().enumerate() {
        b[idx] = rhs(row);
        for &(target, p) in &row.transitions {
            a[(idx, target - 1)] -= p;
        }
    }
    let solution = a.lu().solve(&b).ok_or(DpError::SingularSystem)?;
    let values: Vec<f64> = solution.iter().copied().collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(DpError::SingularSystem);
    }
    Ok(values)
}

/// Value vector of a proper policy, via a direct solve of the linear
/// fixed-point equation of the policy backup.
pub fn exact_policy_value(mdp: &SspMdp, policy: &Policy) -> Result<ValueVector, DpError> {
    if mdp.n() > DENSE_SOLVE_LIMIT {
        return Err(DpError::TooLarge { n: mdp.n(), limit: DENSE_SOLVE_LIMIT });
    }
    let report = mdp.check_policy_proper(policy)?;
    if !report.proper {
        return Err(DpError::ImproperPolicy(report.unreachable));
    }
    let rows = mdp.resolve_policy(policy)?;
    let value = ValueVector::new(solve_linear(mdp, &rows, |a| a.cost)?);

    // A proper policy's system is nonsingular, so a wildly inconsistent
    // solution can only mean the factorization lost too much precision.
    let backed_up = policy_operator(mdp, policy, &value)?;
    if backed_up.sup_distance(&value) > 1e-6 * (1.0 + value.sup_norm()) {
        return Err(DpError::SingularSystem);
    }
    Ok(value)
}

/// Alternates exact policy evaluation with greedy improvement until the
/// policy stops changing. Requires every encountered policy to be proper,
/// which holds in particular when all policies are.
pub fn policy_iteration(mdp: &SspMdp, mu0: &Policy) -> Result<PolicyIterationReport, DpError> {
    let mut policy = mu0.clone();
    let mut last_value: Option<ValueVector> = None;
    for sweeps in 1..=PI_SWEEP_CAP {
        let value = exact_policy_value(mdp, &policy)?;
        let improved = greedy_policy(mdp, &value);
        if improved == policy {
            return Ok(PolicyIterationReport { policy, value, sweeps });
        }
        let residual = match &last_value {
            Some(prev) => prev.sup_distance(&value),
            None => f64::INFINITY,
        };
        last_value = Some(value);
        policy = improved;
        if sweeps == PI_SWEEP_CAP {
            return Err(DpError::MaxIterExceeded { max_iter: PI_SWEEP_CAP, residual });
        }
    }
    unreachable!("loop returns or errors within the sweep cap");
}

fn max_expected_steps_selection(mdp: &SspMdp, xi: &[f64]) -> Vec<usize> {
    (1..=mdp.n())
        .map(|state| {
            let actions = mdp.actions(state);
            let mut best = 0;
            let mut best_v = f64::NEG_INFINITY;
            for (idx, action) in actions.iter().enumerate() {
                let v: f64 = action
                    .transitions
                    .iter()
                    .map(|&(target, p)| p * xi[target - 1])
                    .sum();
                if v > best_v {
                    best = idx;
                    best_v = v;
                }
            }
            best
        })
        .collect()
}

/// Computes contraction weights and modulus for the backup operators.
///
/// The weights solve `xi(i) = 1 + max_u sum_j p(i,j)(u) xi(j)`, the
/// worst-case expected time to termination. The fixed point is located
/// iteratively, then sharpened by solving the linear system of the
/// maximizing action selection exactly, so the certified inequality
/// holds up to rounding rather than up to the iteration tolerance.
///
/// Fails with [`DpError::NotAllProper`] when a trap exists (no finite
/// weights can exist then).
pub fn contraction_certificate(mdp: &SspMdp) -> Result<ContractionCertificate, DpError> {
    if let Some(witness) = mdp.trap_witness() {
        return Err(DpError::NotAllProper(witness.states()));
    }
    if mdp.n() > DENSE_SOLVE_LIMIT {
        return Err(DpError::TooLarge { n: mdp.n(), limit: DENSE_SOLVE_LIMIT });
    }

    let n = mdp.n();
    let mut xi = vec![1.0; n];
    let mut residual = f64::INFINITY;
    let mut converged = false;
    for _ in 0..DEFAULT_MAX_ITER {
        let mut next = vec![0.0; n];
        for state in 1..=n {
            let worst = mdp
                .actions(state)
                .iter()
                .map(|a| {
                    a.transitions
                        .iter()
                        .map(|&(target, p)| p * xi[target - 1])
                        .sum::<f64>()
                })
                .fold(f64::NEG_INFINITY, f64::max);
            next[state - 1] = 1.0 + worst;
        }
        residual = next
            .iter()
            .zip(&xi)
            .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
        xi = next;
        if residual < DEFAULT_VI_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(DpError::MaxIterExceeded { max_iter: DEFAULT_MAX_ITER, residual });
    }

    // Polish: solve the maximizing selection exactly, re-extract, repeat
    // until the selection is stable. Each switch increases the weights,
    // and there are finitely many selections.
    let mut selection = max_expected_steps_selection(mdp, &xi);
    for _ in 0..PI_SWEEP_CAP {
        let rows: Vec<&Action> = selection
            .iter()
            .enumerate()
            .map(|(idx, &choice)| &mdp.actions(idx + 1)[choice])
            .collect();
        xi = solve_linear(mdp, &rows, |_| 1.0)?;
        let next = max_expected_steps_selection(mdp, &xi);
        if next == selection {
            let beta = xi
                .iter()
                .map(|&x| (x - 1.0) / x)
                .fold(0.0f64, f64::max);
            debug_assert!(xi.iter().all(|&x| x >= 1.0) && beta < 1.0);
            return Ok(ContractionCertificate { xi, beta });
        }
        selection = next;
    }
    Err(DpError::MaxIterExceeded { max_iter: PI_SWEEP_CAP, residual: f64::INFINITY })
}

/// Sup norm rescaled by positive per-state weights:
/// `max_i |j(i)| / weights(i)`.
pub fn weighted_max_norm(j: &ValueVector, weights: &[f64]) -> Result<f64, DpError> {
    assert_eq!(j.len(), weights.len(), "weights do not match the value vector");
    for (idx, &w) in weights.iter().enumerate() {
        if !w.is_finite() || w <= 0.0 {
            return Err(DpError::NonpositiveWeight(idx + 1));
        }
    }
    Ok(j
        .values()
        .iter()
        .zip(weights)
        .fold(0.0, |acc, (v, w)| acc.max(v.abs() / w)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn bellman_operator_on_the_chain() {
        let mdp = fixtures::chain2();
        let j = ValueVector::zeros(2);
        let tj = bellman_operator(&mdp, &j);
        assert_eq!(tj.values(), &[1.0, 1.0]);
        let ttj = bellman_operator(&mdp, &tj);
        assert_eq!(ttj.values(), &[1.0, 2.0]);
    }

    #[test]
    fn policy_operator_matches_manual_backup() {
        let mdp = fixtures::twoact();
        let j = ValueVector::new(vec![4.0]);
        let looping = Policy::new(vec![1]);
        let backed = policy_operator(&mdp, &looping, &j).unwrap();
        assert_eq!(backed.values(), &[1.0 + 0.5 * 4.0]);

        let twice = policy_operator_k(&mdp, &looping, &j, 2).unwrap();
        assert_eq!(twice.values(), &[1.0 + 0.5 * 3.0]);
        let zero_times = policy_operator_k(&mdp, &looping, &j, 0).unwrap();
        assert_eq!(zero_times, j);
    }

    #[test]
    fn greedy_breaks_exact_ties_toward_smaller_ids() {
        let mdp = fixtures::twoact();
        // Exit costs 10; looping costs 1 + 0.5 J. They tie exactly at J = 18.
        assert_eq!(greedy_policy(&mdp, &ValueVector::new(vec![18.0])), Policy::new(vec![0]));
        assert_eq!(greedy_policy(&mdp, &ValueVector::new(vec![17.9])), Policy::new(vec![1]));
        assert_eq!(greedy_policy(&mdp, &ValueVector::new(vec![18.1])), Policy::new(vec![0]));
    }

    #[test]
    fn value_iteration_solves_the_half_loop() {
        let mdp = fixtures::loop_half();
        let report =
            value_iteration(&mdp, &ValueVector::zeros(1), DEFAULT_VI_TOL, DEFAULT_MAX_ITER)
                .unwrap();
        assert!((report.value.get(1) - 2.0).abs() <= 1e-9);
        assert!(report.residual < DEFAULT_VI_TOL);

        let err = value_iteration(&mdp, &ValueVector::zeros(1), 1e-30, 10).unwrap_err();
        assert!(matches!(err, DpError::MaxIterExceeded { max_iter: 10, .. }));
    }

    #[test]
    fn exact_policy_value_solves_the_looping_action() {
        let mdp = fixtures::twoact();
        let value = exact_policy_value(&mdp, &Policy::new(vec![1])).unwrap();
        assert!((value.get(1) - 2.0).abs() <= 1e-12);

        let err = exact_policy_value(&fixtures::trap(), &Policy::new(vec![0, 0])).unwrap_err();
        assert!(matches!(err, DpError::ImproperPolicy(states) if states == vec![2]));
    }

    #[test]
    fn policy_iteration_reaches_the_looping_action_in_two_sweeps() {
        let mdp = fixtures::twoact();
        let report = policy_iteration(&mdp, &Policy::new(vec![0])).unwrap();
        assert_eq!(report.policy, Policy::new(vec![1]));
        assert!((report.value.get(1) - 2.0).abs() <= 1e-12);
        assert_eq!(report.sweeps, 2);
    }

    #[test]
    fn certificate_weights_are_expected_steps() {
        let cert = contraction_certificate(&fixtures::chain2()).unwrap();
        assert!((cert.xi[0] - 1.0).abs() <= 1e-9);
        assert!((cert.xi[1] - 2.0).abs() <= 1e-9);
        assert!((cert.beta - 0.5).abs() <= 1e-12);

        let cert = contraction_certificate(&fixtures::loop_half()).unwrap();
        assert!((cert.xi[0] - 2.0).abs() <= 1e-12);
        assert!((cert.beta - 0.5).abs() <= 1e-12);

        // The weights must cover the worst action, not the greedy one.
        let cert = contraction_certificate(&fixtures::twoact()).unwrap();
        assert!((cert.xi[0] - 2.0).abs() <= 1e-12);
    }

    #[test]
    fn certificate_requires_all_policies_proper() {
        let err = contraction_certificate(&fixtures::trap()).unwrap_err();
        assert!(matches!(err, DpError::NotAllProper(states) if states == vec![2]));
    }

    #[test]
    fn weighted_norm_generalizes_sup_norm() {
        let j = ValueVector::new(vec![3.0, -8.0]);
        assert_eq!(weighted_max_norm(&j, &[1.0, 1.0]).unwrap(), j.sup_norm());
        assert_eq!(weighted_max_norm(&j, &[1.0, 2.0]).unwrap(), 4.0);
        let err = weighted_max_norm(&j, &[1.0, 0.0]).unwrap_err();
        assert!(matches!(err, DpError::NonpositiveWeight(2)));
    }
}
