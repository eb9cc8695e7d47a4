//! Finite stochastic-shortest-path models.
//!
//! A model has non-terminal states `1..=n` plus an implicit termination
//! state `0` that is absorbing and cost-free. Transition rows are stored
//! sparsely over `1..=n`; whatever mass a row does not assign to
//! non-terminal states belongs to the termination state. That deficit is
//! materialized once at validation time, so a row and its termination
//! probability cannot drift apart later.
//!
//! A stationary policy picks one action per state. A policy is *proper*
//! when termination is reached with probability one from every start
//! state, which for a finite chain is equivalent to state `0` being
//! reachable from every state in the support graph of the policy. Most
//! solvers here require properness (of one policy or of all of them) and
//! report the offending states when it fails.

use thiserror::Error;

/// Identifier of an action within a state's action set.
pub type ActionId = u32;

/// Slack allowed on transition-row sums. Rows whose mass exceeds 1 by at
/// most this much are renormalized; larger excess is rejected. Deficits
/// of at most this much are snapped to a termination probability of 0.
pub const PROB_TOLERANCE: f64 = 1e-12;

/// Slack allowed between a stored termination probability and the row
/// deficit it must equal. Looser than [`PROB_TOLERANCE`] so hand-written
/// files with rounded decimals still load.
pub const TERM_CHECK_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("model has no states")]
    EmptyModel,
    #[error("expected {expected} states, found {got}")]
    StateCountMismatch { expected: usize, got: usize },
    #[error("state ids must cover 1..=n exactly once; offending id {id}")]
    BadStateId { id: usize },
    #[error("state {state} is outside 1..={n}")]
    StateOutOfRange { state: usize, n: usize },
    #[error("state {state}: empty action set")]
    EmptyActionSet { state: usize },
    #[error("state {state}: duplicate action id {action}")]
    DuplicateActionId { state: usize, action: ActionId },
    #[error("state {state}, action {action}: cost {cost} is not finite")]
    NonfiniteCost { state: usize, action: ActionId, cost: f64 },
    #[error("state {state}, action {action}: transition to {target} has invalid probability {p}")]
    NegativeProbability {
        state: usize,
        action: ActionId,
        target: usize,
        p: f64,
    },
    #[error("state {state}, action {action}: transition target {target} is outside 1..={n}")]
    TargetOutOfRange {
        state: usize,
        action: ActionId,
        target: usize,
        n: usize,
    },
    #[error("state {state}, action {action}: duplicate transition target {target}")]
    DuplicateTarget {
        state: usize,
        action: ActionId,
        target: usize,
    },
    #[error("state {state}, action {action}: row mass {sum} exceeds 1")]
    RowSumExceedsOne {
        state: usize,
        action: ActionId,
        sum: f64,
    },
    #[error(
        "state {state}, action {action}: stored termination probability {stored} \
         disagrees with the row deficit {derived}"
    )]
    TermProbMismatch {
        state: usize,
        action: ActionId,
        stored: f64,
        derived: f64,
    },
    #[error("policy has {got} entries, model has {expected} states")]
    PolicyLengthMismatch { expected: usize, got: usize },
    #[error("policy selects action {action} at state {state}, which offers no such action")]
    InvalidPolicy { state: usize, action: ActionId },
}

/// One validated action: strictly positive transition probabilities with
/// strictly increasing targets, plus the materialized termination mass.
#[derive(Debug, Clone, PartialEq)]
pub struct Action {
    pub id: ActionId,
    pub cost: f64,
    /// `(target, probability)` pairs, targets strictly increasing in `1..=n`.
    pub transitions: Vec<(usize, f64)>,
    /// Mass on the termination state: `1 - sum of transitions`, snapped to
    /// exactly 0 when the deficit is within [`PROB_TOLERANCE`].
    pub term_prob: f64,
}

/// Unvalidated model description, as read from a file or assembled by a
/// generator. [`SspMdp::validate`] is the only way to turn it into a model.
#[derive(Debug, Clone, Default)]
pub struct RawMdp {
    pub n: usize,
    pub states: Vec<RawState>,
}

#[derive(Debug, Clone)]
pub struct RawState {
    pub id: usize,
    pub actions: Vec<RawAction>,
}

#[derive(Debug, Clone)]
pub struct RawAction {
    pub id: ActionId,
    pub cost: f64,
    pub transitions: Vec<(usize, f64)>,
    /// Stored termination probability to cross-check against the row
    /// deficit, when the source carries one (files do, builders don't).
    pub term_prob: Option<f64>,
}

impl RawMdp {
    /// Description with states `1..=n` and empty action sets.
    pub fn new(n: usize) -> Self {
        RawMdp {
            n,
            states: (1..=n).map(|id| RawState { id, actions: Vec::new() }).collect(),
        }
    }

    /// Appends an action to `state`. Builder for tests and generators.
    pub fn action(
        mut self,
        state: usize,
        id: ActionId,
        cost: f64,
        transitions: &[(usize, f64)],
    ) -> Self {
        self.states[state - 1].actions.push(RawAction {
            id,
            cost,
            transitions: transitions.to_vec(),
            term_prob: None,
        });
        self
    }

    pub fn build(self) -> Result<SspMdp, ModelError> {
        SspMdp::validate(self)
    }
}

/// A validated stochastic-shortest-path model.
#[derive(Debug, Clone, PartialEq)]
pub struct SspMdp {
    n: usize,
    /// `states[i]` holds the actions of state `i + 1`, sorted by id.
    states: Vec<Vec<Action>>,
}

/// Stationary deterministic policy: one action id per state.
#[derive(Debug, Clone, PartialEq, Eq, Hash, serde::Serialize)]
#[serde(transparent)]
pub struct Policy {
    choices: Vec<ActionId>,
}

impl Policy {
    pub fn new(choices: Vec<ActionId>) -> Self {
        Policy { choices }
    }

    /// Action id chosen at `state` (1-based).
    pub fn action(&self, state: usize) -> ActionId {
        self.choices[state - 1]
    }

    pub fn len(&self) -> usize {
        self.choices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.choices.is_empty()
    }

    pub fn choices(&self) -> &[ActionId] {
        &self.choices
    }
}

/// Outcome of a single-policy properness check.
#[derive(Debug, Clone, PartialEq)]
pub struct PropernessReport {
    pub proper: bool,
    /// States from which the termination state is unreachable, ascending.
    pub unreachable: Vec<usize>,
    /// Probability of still being in `1..=n` after `n` steps, maximized
    /// over start states. Strictly below 1 exactly when the policy is
    /// proper; the gap to 1 measures how fast the chain drains.
    pub survival: f64,
}

/// Certificate that some policy is improper: a set of states together
/// with one action per state whose transitions have no termination mass
/// and stay inside the set. Any policy using these actions loops forever.
#[derive(Debug, Clone, PartialEq)]
pub struct TrapWitness {
    /// `(state, action)` pairs, ascending by state.
    pub selection: Vec<(usize, ActionId)>,
}

impl TrapWitness {
    pub fn states(&self) -> Vec<usize> {
        self.selection.iter().map(|&(s, _)| s).collect()
    }
}

impl SspMdp {
    /// Checks a raw description and normalizes it into a model.
    ///
    /// Rows may understate their mass (the deficit becomes termination
    /// probability) but may overstate it only within [`PROB_TOLERANCE`],
    /// in which case they are renormalized. Entries with exactly zero
    /// probability are dropped. Transitions end up sorted by target.
    pub fn validate(raw: RawMdp) -> Result<SspMdp, ModelError> {
        if raw.n == 0 {
            return Err(ModelError::EmptyModel);
        }
        if raw.states.len() != raw.n {
            return Err(ModelError::StateCountMismatch { expected: raw.n, got: raw.states.len() });
        }
        let mut slots: Vec<Option<RawState>> = vec![None; raw.n];
        for state in raw.states {
            let id = state.id;
            if id == 0 || id > raw.n || slots[id - 1].is_some() {
                return Err(ModelError::BadStateId { id });
            }
            slots[id - 1] = Some(state);
        }

        let mut states = Vec::with_capacity(raw.n);
        for slot in slots {
            let raw_state = slot.expect("every slot filled after id checks");
            let state = raw_state.id;
            if raw_state.actions.is_empty() {
                return Err(ModelError::EmptyActionSet { state });
            }
            let mut actions = Vec::with_capacity(raw_state.actions.len());
            for raw_action in raw_state.actions {
                actions.push(validate_action(state, raw_action, raw.n)?);
            }
            actions.sort_by_key(|a| a.id);
            for pair in actions.windows(2) {
                if pair[0].id == pair[1].id {
                    return Err(ModelError::DuplicateActionId { state, action: pair[0].id });
                }
            }
            states.push(actions);
        }
        Ok(SspMdp { n: raw.n, states })
    }

    /// Number of non-terminal states.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Actions of `state` (1-based), sorted by id.
    pub fn actions(&self, state: usize) -> &[Action] {
        &self.states[state - 1]
    }

    /// Looks up one action by id.
    pub fn action(&self, state: usize, id: ActionId) -> Option<&Action> {
        self.states[state - 1].iter().find(|a| a.id == id)
    }

    /// Verifies that `policy` selects an offered action at every state.
    pub fn check_policy(&self, policy: &Policy) -> Result<(), ModelError> {
        self.resolve_policy(policy).map(|_| ())
    }

    /// Resolves a policy into per-state action references, validating it.
    pub(crate) fn resolve_policy<'a>(
        &'a self,
        policy: &Policy,
    ) -> Result<Vec<&'a Action>, ModelError> {
        if policy.len() != self.n {
            return Err(ModelError::PolicyLengthMismatch { expected: self.n, got: policy.len() });
        }
        (1..=self.n)
            .map(|state| {
                let id = policy.action(state);
                self.action(state, id)
                    .ok_or(ModelError::InvalidPolicy { state, action: id })
            })
            .collect()
    }

    /// Decides properness of one policy.
    ///
    /// Properness is decided exactly, by reachability of the termination
    /// state in the support graph. The survival probability is computed
    /// separately and reported as a diagnostic.
    pub fn check_policy_proper(&self, policy: &Policy) -> Result<PropernessReport, ModelError> {
        let rows = self.resolve_policy(policy)?;

        // Backward reachability from the termination state: reverse edges,
        // seed with states that terminate directly.
        let mut reverse: Vec<Vec<usize>> = vec![Vec::new(); self.n + 1];
        let mut stack: Vec<usize> = Vec::new();
        let mut reaches = vec![false; self.n + 1];
        for (idx, row) in rows.iter().enumerate() {
            let state = idx + 1;
            if row.term_prob > 0.0 {
                reaches[state] = true;
                stack.push(state);
            }
            for &(target, _) in &row.transitions {
                reverse[target].push(state);
            }
        }
        while let Some(j) = stack.pop() {
            for &i in &reverse[j] {
                if !reaches[i] {
                    reaches[i] = true;
                    stack.push(i);
                }
            }
        }
        let unreachable: Vec<usize> = (1..=self.n).filter(|&i| !reaches[i]).collect();

        Ok(PropernessReport {
            proper: unreachable.is_empty(),
            unreachable,
            survival: self.n_step_survival_resolved(&rows),
        })
    }

    /// Probability of not having terminated after `n` steps, maximized
    /// over start states.
    pub fn n_step_survival(&self, policy: &Policy) -> Result<f64, ModelError> {
        Ok(self.n_step_survival_resolved(&self.resolve_policy(policy)?))
    }

    fn n_step_survival_resolved(&self, rows: &[&Action]) -> f64 {
        // s_k(i) = P(still alive after k steps from i); s_0 = 1.
        let mut survival = vec![1.0; self.n];
        let mut next = vec![0.0; self.n];
        for _ in 0..self.n {
            for (idx, row) in rows.iter().enumerate() {
                next[idx] = row
                    .transitions
                    .iter()
                    .map(|&(target, p)| p * survival[target - 1])
                    .sum();
            }
            std::mem::swap(&mut survival, &mut next);
        }
        survival.iter().fold(0.0, |acc, &s| acc.max(s))
    }

    /// Searches for a trap: the largest state set on which some action
    /// selection keeps all mass without ever terminating. Returns `None`
    /// exactly when every policy is proper.
    pub fn trap_witness(&self) -> Option<TrapWitness> {
        // Greatest fixed point of Z -> states with an action confined to Z.
        let mut in_set = vec![true; self.n + 1];
        let confined = |action: &Action, in_set: &[bool]| {
            action.term_prob == 0.0
                && action.transitions.iter().all(|&(target, _)| in_set[target])
        };
        loop {
            let mut changed = false;
            for state in 1..=self.n {
                if in_set[state]
                    && !self.states[state - 1].iter().any(|a| confined(a, &in_set))
                {
                    in_set[state] = false;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        let selection: Vec<(usize, ActionId)> = (1..=self.n)
            .filter(|&state| in_set[state])
            .map(|state| {
                let action = self.states[state - 1]
                    .iter()
                    .find(|a| confined(a, &in_set))
                    .expect("fixed point guarantees a confined action");
                (state, action.id)
            })
            .collect();
        if selection.is_empty() {
            None
        } else {
            Some(TrapWitness { selection })
        }
    }

    /// True when every stationary deterministic policy is proper.
    pub fn all_policies_proper(&self) -> bool {
        self.trap_witness().is_none()
    }

    /// Dense transition matrix and cost vector of a policy. Row `i` sums
    /// to `1 - term_prob(i)`.
    pub fn policy_matrices(&self, policy: &Policy) -> Result<(Vec<Vec<f64>>, Vec<f64>), ModelError> {
        let rows = self.resolve_policy(policy)?;
        let mut p = vec![vec![0.0; self.n]; self.n];
        let mut g = vec![0.0; self.n];
        for (idx, row) in rows.iter().enumerate() {
            g[idx] = row.cost;
            for &(target, prob) in &row.transitions {
                p[idx][target - 1] = prob;
            }
        }
        Ok((p, g))
    }

    /// All stationary deterministic policies, in lexicographic order of
    /// action ids. Intended for small models.
    ///
    /// # Panics
    ///
    /// Panics if the model admits more than 2^20 policies.
    pub fn enumerate_policies(&self) -> Vec<Policy> {
        let total: usize = self
            .states
            .iter()
            .map(|actions| actions.len())
            .try_fold(1usize, |acc, k| acc.checked_mul(k))
            .filter(|&t| t <= 1 << 20)
            .expect("policy space too large to enumerate");
        let mut policies = Vec::with_capacity(total);
        let mut current: Vec<usize> = vec![0; self.n];
        loop {
            policies.push(Policy::new(
                current
                    .iter()
                    .enumerate()
                    .map(|(idx, &k)| self.states[idx][k].id)
                    .collect(),
            ));
            // Odometer increment over per-state action indices.
            let mut pos = 0;
            loop {
                if pos == self.n {
                    return policies;
                }
                current[pos] += 1;
                if current[pos] < self.states[pos].len() {
                    break;
                }
                current[pos] = 0;
                pos += 1;
            }
        }
    }

    /// Validates a start state index.
    pub(crate) fn check_state(&self, state: usize) -> Result<(), ModelError> {
        if state == 0 || state > self.n {
            return Err(ModelError::StateOutOfRange { state, n: self.n });
        }
        Ok(())
    }
}

fn validate_action(state: usize, raw: RawAction, n: usize) -> Result<Action, ModelError> {
    let id = raw.id;
    if !raw.cost.is_finite() {
        return Err(ModelError::NonfiniteCost { state, action: id, cost: raw.cost });
    }
    let mut transitions: Vec<(usize, f64)> = Vec::with_capacity(raw.transitions.len());
    for (target, p) in raw.transitions {
        if !(p.is_finite() && p >= 0.0) {
            return Err(ModelError::NegativeProbability { state, action: id, target, p });
        }
        if target == 0 || target > n {
            return Err(ModelError::TargetOutOfRange { state, action: id, target, n });
        }
        if p > 0.0 {
            transitions.push((target, p));
        }
    }
    transitions.sort_by_key(|&(target, _)| target);
    for pair in transitions.windows(2) {
        if pair[0].0 == pair[1].0 {
            return Err(ModelError::DuplicateTarget { state, action: id, target: pair[0].0 });
        }
    }

    let sum: f64 = transitions.iter().map(|&(_, p)| p).sum();
    if sum > 1.0 + PROB_TOLERANCE {
        return Err(ModelError::RowSumExceedsOne { state, action: id, sum });
    }
    if sum > 1.0 {
        // Excess within tolerance: renormalize so the row is stochastic.
        for entry in &mut transitions {
            entry.1 /= sum;
        }
    }
    let effective_sum: f64 = transitions.iter().map(|&(_, p)| p).sum();
    let deficit = 1.0 - effective_sum;
    let term_prob = if deficit <= PROB_TOLERANCE { 0.0 } else { deficit };

    if let Some(stored) = raw.term_prob {
        if !(stored.is_finite() && (stored - term_prob).abs() <= TERM_CHECK_TOLERANCE) {
            return Err(ModelError::TermProbMismatch {
                state,
                action: id,
                stored,
                derived: term_prob,
            });
        }
    }

    Ok(Action { id, cost: raw.cost, transitions, term_prob })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn validate_normalizes_and_sorts() {
        let mdp = RawMdp::new(2)
            .action(1, 1, 1.0, &[(2, 0.25), (1, 0.25)])
            .action(1, 0, 1.0, &[])
            .action(2, 0, 1.0, &[(1, 1.0)])
            .build()
            .unwrap();
        assert_eq!(mdp.n(), 2);
        let ids: Vec<ActionId> = mdp.actions(1).iter().map(|a| a.id).collect();
        assert_eq!(ids, vec![0, 1]);
        let a = mdp.action(1, 1).unwrap();
        assert_eq!(a.transitions, vec![(1, 0.25), (2, 0.25)]);
        assert_eq!(a.term_prob, 0.5);
        assert_eq!(mdp.action(2, 0).unwrap().term_prob, 0.0);
    }

    #[test]
    fn validate_rejects_bad_rows() {
        let err = RawMdp::new(1).action(1, 0, 1.0, &[(1, 1.4)]).build().unwrap_err();
        assert!(matches!(err, ModelError::RowSumExceedsOne { sum, .. } if sum == 1.4));

        let err = RawMdp::new(1).action(1, 0, 1.0, &[(1, -0.1)]).build().unwrap_err();
        assert!(matches!(err, ModelError::NegativeProbability { .. }));

        let err = RawMdp::new(1)
            .action(1, 0, 1.0, &[(1, 0.3), (1, 0.3)])
            .build()
            .unwrap_err();
        assert!(matches!(err, ModelError::DuplicateTarget { target: 1, .. }));

        let err = RawMdp::new(2).action(1, 0, 1.0, &[]).build().unwrap_err();
        assert!(matches!(err, ModelError::EmptyActionSet { state: 2 }));

        let err = RawMdp::new(1).action(1, 0, f64::NAN, &[]).build().unwrap_err();
        assert!(matches!(err, ModelError::NonfiniteCost { .. }));

        let err = RawMdp::new(1).action(1, 0, 1.0, &[(2, 0.5)]).build().unwrap_err();
        assert!(matches!(err, ModelError::TargetOutOfRange { target: 2, .. }));
    }

    #[test]
    fn tiny_deficit_snaps_to_zero_termination() {
        let mdp = RawMdp::new(1)
            .action(1, 0, 1.0, &[(1, 1.0 - 1e-13)])
            .build()
            .unwrap();
        assert_eq!(mdp.action(1, 0).unwrap().term_prob, 0.0);
    }

    #[test]
    fn tiny_excess_renormalizes() {
        let mdp = RawMdp::new(2)
            .action(1, 0, 1.0, &[(1, 0.5), (2, 0.5 + 1e-13)])
            .action(2, 0, 1.0, &[])
            .build()
            .unwrap();
        let a = mdp.action(1, 0).unwrap();
        let sum: f64 = a.transitions.iter().map(|&(_, p)| p).sum();
        assert!(sum <= 1.0);
        assert_eq!(a.term_prob, 0.0);
    }

    #[test]
    fn stored_term_prob_is_cross_checked() {
        let raw = RawMdp {
            n: 1,
            states: vec![RawState {
                id: 1,
                actions: vec![RawAction {
                    id: 0,
                    cost: 1.0,
                    transitions: vec![(1, 0.5)],
                    term_prob: Some(0.4),
                }],
            }],
        };
        let err = SspMdp::validate(raw).unwrap_err();
        assert!(matches!(err, ModelError::TermProbMismatch { .. }));
    }

    #[test]
    fn chain_policy_is_proper_with_zero_survival() {
        let mdp = fixtures::chain2();
        let report = mdp.check_policy_proper(&Policy::new(vec![0, 0])).unwrap();
        assert!(report.proper);
        assert!(report.unreachable.is_empty());
        // All mass is dead after two steps of a length-2 chain.
        assert_eq!(report.survival, 0.0);
    }

    #[test]
    fn trap_policy_is_improper_with_full_survival() {
        let mdp = fixtures::trap();
        let report = mdp.check_policy_proper(&Policy::new(vec![0, 0])).unwrap();
        assert!(!report.proper);
        assert_eq!(report.unreachable, vec![2]);
        assert_eq!(report.survival, 1.0);

        // Choosing the escaping action restores properness.
        let report = mdp.check_policy_proper(&Policy::new(vec![0, 1])).unwrap();
        assert!(report.proper);
        assert!(report.survival < 1.0);
    }

    #[test]
    fn survival_of_half_loop_is_one_half() {
        let mdp = fixtures::loop_half();
        let rho = mdp.n_step_survival(&Policy::new(vec![0])).unwrap();
        assert_eq!(rho, 0.5);
    }

    #[test]
    fn trap_witness_identifies_the_loop() {
        let mdp = fixtures::trap();
        let witness = mdp.trap_witness().unwrap();
        assert_eq!(witness.selection, vec![(2, 0)]);
        assert_eq!(witness.states(), vec![2]);

        assert!(fixtures::chain2().trap_witness().is_none());
        assert!(fixtures::twoact().all_policies_proper());
    }

    #[test]
    fn policy_matrices_match_the_chain() {
        let mdp = fixtures::chain2();
        let (p, g) = mdp.policy_matrices(&Policy::new(vec![0, 0])).unwrap();
        assert_eq!(p, vec![vec![0.0, 0.0], vec![1.0, 0.0]]);
        assert_eq!(g, vec![1.0, 1.0]);
    }

    #[test]
    fn policies_are_validated_and_enumerable() {
        let mdp = fixtures::twoact();
        assert!(mdp.check_policy(&Policy::new(vec![1])).is_ok());
        let err = mdp.check_policy(&Policy::new(vec![7])).unwrap_err();
        assert!(matches!(err, ModelError::InvalidPolicy { state: 1, action: 7 }));
        let err = mdp.check_policy(&Policy::new(vec![0, 0])).unwrap_err();
        assert!(matches!(err, ModelError::PolicyLengthMismatch { .. }));

        let policies = mdp.enumerate_policies();
        assert_eq!(policies.len(), 2);
        assert_eq!(policies[0], Policy::new(vec![0]));
        assert_eq!(policies[1], Policy::new(vec![1]));
    }
}
