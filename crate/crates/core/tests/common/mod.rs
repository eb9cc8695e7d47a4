//! Shared fixtures for the integration suites: canonical hand-built
//! models, the reference random family, a deterministic noise stream
//! for test-local randomness, and helpers for grafting traps onto
//! otherwise well-behaved instances.

#![allow(dead_code)]

use ssp_core::instances::{gen_random_proper, RandomProperSpec};
use ssp_core::{Policy, RawMdp, RngStream, SspMdp, ValueVector};

/// Two-state chain `2 -> 1 -> 0` with unit costs. Optimal values (1, 2).
pub fn chain2() -> SspMdp {
    RawMdp::new(2)
        .action(1, 0, 1.0, &[])
        .action(2, 0, 1.0, &[(1, 1.0)])
        .build()
        .expect("chain rows are valid")
}

/// Single state that exits with probability 1/2 per step at unit cost.
/// Expected cost 2, expected steps 2.
pub fn loop_half() -> SspMdp {
    RawMdp::new(1)
        .action(1, 0, 1.0, &[(1, 0.5)])
        .build()
        .expect("loop row is valid")
}

/// One state, two actions: pay 10 to exit outright, or pay 1 per step on
/// a half-exit loop for an expected total of 2. Optimal value 2.
pub fn twoact() -> SspMdp {
    RawMdp::new(1)
        .action(1, 0, 10.0, &[])
        .action(1, 1, 1.0, &[(1, 0.5)])
        .build()
        .expect("rows are valid")
}

/// State 2 either spins on itself forever (action 0) or escapes through
/// state 1 (action 1). The spin action is a one-state trap.
pub fn trap() -> SspMdp {
    RawMdp::new(2)
        .action(1, 0, 1.0, &[])
        .action(2, 0, 1.0, &[(2, 1.0)])
        .action(2, 1, 1.0, &[(1, 1.0)])
        .build()
        .expect("rows are valid")
}

/// The reference random family: five states, three actions per state,
/// termination floor 0.05, costs in [0.5, 1.5].
pub fn family(seed: u64) -> RandomProperSpec {
    RandomProperSpec {
        n: 5,
        actions_per_state: 3,
        min_term_prob: 0.05,
        cost_range: (0.5, 1.5),
        seed,
    }
}

pub fn family_instance(seed: u64) -> SspMdp {
    gen_random_proper(&family(seed)).expect("family spec is valid")
}

/// Deterministic uniform stream for test-local noise. Each suite keys
/// its own label so draws never collide across tests.
pub struct Noise(RngStream);

impl Noise {
    pub fn new(label: u64) -> Self {
        Noise(RngStream::for_episode(label, u64::MAX, 0))
    }

    pub fn uniform(&mut self) -> f64 {
        self.0.uniform()
    }

    /// Uniform draw from `[lo, hi)`.
    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.0.uniform()
    }

    /// Uniform index in `0..k`.
    pub fn index(&mut self, k: usize) -> usize {
        assert!(k > 0, "cannot draw from an empty range");
        ((self.0.uniform() * k as f64) as usize).min(k - 1)
    }

    /// Value vector with entries uniform in `[lo, hi)`.
    pub fn values(&mut self, n: usize, lo: f64, hi: f64) -> ValueVector {
        ValueVector::new((0..n).map(|_| self.range(lo, hi)).collect())
    }

    /// Uniformly chosen action per state.
    pub fn policy(&mut self, mdp: &SspMdp) -> Policy {
        let choices = (1..=mdp.n())
            .map(|state| {
                let actions = mdp.actions(state);
                actions[self.index(actions.len())].id
            })
            .collect();
        Policy::new(choices)
    }
}

/// Small random instance with varied size, action count, termination
/// floor, and cost sign. Every policy is proper by construction.
pub fn small_instance(noise: &mut Noise, max_n: usize) -> SspMdp {
    assert!(max_n >= 2);
    let n = 2 + noise.index(max_n - 1);
    let actions_per_state = 1 + noise.index(3);
    let min_term_prob = noise.range(0.05, 0.6);
    let lo = noise.range(-1.0, 1.0);
    let hi = lo + noise.range(0.0, 2.0);
    let seed = (noise.uniform() * 1e9) as u64;
    gen_random_proper(&RandomProperSpec {
        n,
        actions_per_state,
        min_term_prob,
        cost_range: (lo, hi),
        seed,
    })
    .expect("small instance spec is valid")
}

/// Streaming mean and sample variance accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct Welford {
    count: usize,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Sample standard deviation; zero until two values are seen.
    pub fn sd(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.m2 / (self.count as f64 - 1.0)).sqrt()
        }
    }
}

/// Rebuilds the raw description of a validated model, so tests can graft
/// extra actions onto generated instances.
pub fn to_raw(mdp: &SspMdp) -> RawMdp {
    let mut raw = RawMdp::new(mdp.n());
    for state in 1..=mdp.n() {
        for action in mdp.actions(state) {
            raw = raw.action(state, action.id, action.cost, &action.transitions);
        }
    }
    raw
}

/// Adds one confined action to every state of `cycle` (distinct states),
/// each moving only within the cycle with dyadic probabilities and no
/// termination mass. Any policy choosing these actions loops forever, so
/// the result has `cycle` as a trap while all original rows keep their
/// termination floor.
pub fn inject_trap(mdp: &SspMdp, cycle: &[usize]) -> SspMdp {
    assert!(!cycle.is_empty());
    let mut raw = to_raw(mdp);
    for (pos, &state) in cycle.iter().enumerate() {
        let next = cycle[(pos + 1) % cycle.len()];
        let id = mdp
            .actions(state)
            .iter()
            .map(|a| a.id)
            .max()
            .expect("validated states have actions")
            + 1;
        let transitions = if next == state {
            vec![(state, 1.0)]
        } else {
            vec![(state, 0.5), (next, 0.5)]
        };
        raw = raw.action(state, id, 1.0, &transitions);
    }
    raw.build().expect("trap rows are dyadic and confined")
}
