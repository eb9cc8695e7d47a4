//! Benchmark instance generators and a JSON file format.
//!
//! Generators are pure functions of their parameters (including the
//! seed), so an instance never needs to be shipped: its spec suffices.
//! Files exist for interchange anyway, and round-trip exactly because
//! probabilities and costs are written with more significant digits than
//! a double can distinguish.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use thiserror::Error;

use crate::mdp::{ModelError, RawMdp, SspMdp};

/// Current file format version.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GenError {
    #[error("invalid generator parameters: {0}")]
    InvalidSpec(String),
    #[error("not every policy of the generated model is proper; trap states {0:?}")]
    NotAllProper(Vec<usize>),
}

#[derive(Debug, Error)]
pub enum InstanceIoError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error(transparent)]
    Validation(#[from] ModelError),
}

/// Parameters of the random family: `n` states, a fixed number of
/// actions everywhere, costs uniform in `cost_range`, and per-row
/// termination probability drawn uniformly from `[min_term_prob, 1)`.
///
/// The positive floor keeps every policy proper outright. Drawing the
/// termination mass across the whole admissible range, instead of
/// pinning it at the floor, spreads episode lengths from a couple of
/// steps to dozens, so the family exercises both quick and slow mixing.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomProperSpec {
    pub n: usize,
    pub actions_per_state: usize,
    pub min_term_prob: f64,
    pub cost_range: (f64, f64),
    pub seed: u64,
}

/// Description of a generatable instance.
#[derive(Debug, Clone, PartialEq)]
pub enum InstanceSpec {
    /// Deterministic walk `length -> ... -> 1 -> 0`, one action per state.
    Chain { length: usize, step_cost: f64 },
    RandomProper(RandomProperSpec),
    /// Rectangular grid whose bottom-right cell is the terminal goal.
    /// Each cell offers its feasible compass moves; a move goes through
    /// with probability `1 - slip`, and slips uniformly to the other
    /// three compass directions otherwise, bouncing off walls in place.
    Gridworld { rows: usize, cols: usize, slip: f64, step_cost: f64 },
}

impl InstanceSpec {
    pub fn generate(&self) -> Result<SspMdp, GenError> {
        match *self {
            InstanceSpec::Chain { length, step_cost } => gen_chain(length, step_cost),
            InstanceSpec::RandomProper(ref spec) => gen_random_proper(spec),
            InstanceSpec::Gridworld { rows, cols, slip, step_cost } => {
                gen_gridworld(rows, cols, slip, step_cost)
            }
        }
    }
}

/// Chain of `length` states walking deterministically toward termination.
pub fn gen_chain(length: usize, step_cost: f64) -> Result<SspMdp, GenError> {
    if length == 0 {
        return Err(GenError::InvalidSpec("chain length must be at least 1".into()));
    }
    if !step_cost.is_finite() {
        return Err(GenError::InvalidSpec(format!("step cost must be finite, got {step_cost}")));
    }
    let mut raw = RawMdp::new(length);
    for state in 1..=length {
        raw = if state == 1 {
            raw.action(1, 0, step_cost, &[])
        } else {
            raw.action(state, 0, step_cost, &[(state - 1, 1.0)])
        };
    }
    Ok(raw.build().expect("chain rows are valid by construction"))
}

fn positive_uniform(rng: &mut ChaCha8Rng) -> f64 {
    // random() covers [0, 1); reject the single value that would put
    // zero mass on a transition.
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// Random instance in which every policy is proper by construction.
pub fn gen_random_proper(spec: &RandomProperSpec) -> Result<SspMdp, GenError> {
    if spec.n == 0 {
        return Err(GenError::InvalidSpec("n must be at least 1".into()));
    }
    if spec.actions_per_state == 0 {
        return Err(GenError::InvalidSpec("actions_per_state must be at least 1".into()));
    }
    let eta = spec.min_term_prob;
    if !(eta > 0.0 && eta < 1.0) {
        return Err(GenError::InvalidSpec(format!(
            "min_term_prob must lie in (0, 1), got {eta}"
        )));
    }
    let (lo, hi) = spec.cost_range;
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(GenError::InvalidSpec(format!("bad cost range [{lo}, {hi}]")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut raw = RawMdp::new(spec.n);
    for state in 1..=spec.n {
        for action in 0..spec.actions_per_state {
            // Up to four distinct successors via a partial shuffle.
            let k = rng.random_range(1..=spec.n.min(4));
            let mut pool: Vec<usize> = (1..=spec.n).collect();
            for slot in 0..k {
                let pick = rng.random_range(slot..spec.n);
                pool.swap(slot, pick);
            }
            let mut successors = pool[..k].to_vec();
            successors.sort_unstable();

            let weights: Vec<f64> = (0..k).map(|_| positive_uniform(&mut rng)).collect();
            let total: f64 = weights.iter().sum();
            let term = eta + (1.0 - eta) * rng.random::<f64>();
            let remaining = 1.0 - term;
            let transitions: Vec<(usize, f64)> = successors
                .iter()
                .zip(&weights)
                .map(|(&j, &w)| (j, remaining * w / total))
                .collect();

            let cost = lo + (hi - lo) * rng.random::<f64>();
            raw = raw.action(state, action as u32, cost, &transitions);
        }
    }
    let mdp = raw.build().expect("generated rows are valid by construction");
    debug_assert!(mdp.all_policies_proper());
    Ok(mdp)
}

const DIRECTIONS: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

/// Grid world with the bottom-right cell as terminal goal. Action ids
/// encode directions: 0 up, 1 down, 2 left, 3 right; only moves that
/// stay on the grid are offered. Fails when some way of choosing moves
/// avoids the goal forever, which happens exactly on slip-free grids
/// with more than one interior choice.
pub fn gen_gridworld(
    rows: usize,
    cols: usize,
    slip: f64,
    step_cost: f64,
) -> Result<SspMdp, GenError> {
    if rows == 0 || cols == 0 || rows * cols < 2 {
        return Err(GenError::InvalidSpec(format!(
            "grid must have at least two cells, got {rows}x{cols}"
        )));
    }
    if !(slip.is_finite() && (0.0..1.0).contains(&slip)) {
        return Err(GenError::InvalidSpec(format!("slip must lie in [0, 1), got {slip}")));
    }
    if !step_cost.is_finite() {
        return Err(GenError::InvalidSpec(format!("step cost must be finite, got {step_cost}")));
    }

    let goal = (rows - 1, cols - 1);
    // Non-goal cells get state ids 1.. in row-major order.
    let state_id = |r: usize, c: usize| -> usize {
        debug_assert!((r, c) != goal);
        r * cols + c + 1
    };
    let neighbor = |r: usize, c: usize, d: (isize, isize)| -> Option<(usize, usize)> {
        let nr = r as isize + d.0;
        let nc = c as isize + d.1;
        (nr >= 0 && nr < rows as isize && nc >= 0 && nc < cols as isize)
            .then_some((nr as usize, nc as usize))
    };

    let n = rows * cols - 1;
    let mut raw = RawMdp::new(n);
    for r in 0..rows {
        for c in 0..cols {
            if (r, c) == goal {
                continue;
            }
            for (dir, &delta) in DIRECTIONS.iter().enumerate() {
                let Some(intended) = neighbor(r, c, delta) else { continue };
                // Outcome mass per landing cell; walls bounce slips back.
                let mut mass = vec![0.0; rows * cols];
                let mut add = |cell: (usize, usize), p: f64| {
                    mass[cell.0 * cols + cell.1] += p;
                };
                add(intended, 1.0 - slip);
                for &other in DIRECTIONS.iter().filter(|&&d| d != delta) {
                    add(neighbor(r, c, other).unwrap_or((r, c)), slip / 3.0);
                }

                // The goal's mass becomes the termination deficit.
                let transitions: Vec<(usize, f64)> = mass
                    .iter()
                    .enumerate()
                    .filter(|&(cell, &p)| p > 0.0 && (cell / cols, cell % cols) != goal)
                    .map(|(cell, &p)| (state_id(cell / cols, cell % cols), p))
                    .collect();
                raw = raw.action(state_id(r, c), dir as u32, step_cost, &transitions);
            }
        }
    }

    let mdp = raw.build().expect("grid rows are valid by construction");
    if let Some(witness) = mdp.trap_witness() {
        return Err(GenError::NotAllProper(witness.states()));
    }
    Ok(mdp)
}

fn push_f64(out: &mut String, v: f64) {
    // 18 significant digits: enough for exact double round-trips.
    out.push_str(&format!("{v:.17e}"));
}

/// Serializes a model in the versioned JSON format.
pub fn to_json(mdp: &SspMdp) -> String {
    let mut out = String::new();
    out.push_str("{\n");
    out.push_str(&format!("  \"version\": {},\n", FORMAT_VERSION));
    out.push_str(&format!("  \"n\": {},\n", mdp.n()));
    out.push_str("  \"states\": [\n");
    for state in 1..=mdp.n() {
        out.push_str(&format!("    {{\"id\": {state}, \"actions\": [\n"));
        let actions = mdp.actions(state);
        for (idx, action) in actions.iter().enumerate() {
            out.push_str(&format!("      {{\"id\": {}, \"cost\": ", action.id));
            push_f64(&mut out, action.cost);
            out.push_str(", \"transitions\": [");
            for (t_idx, &(target, p)) in action.transitions.iter().enumerate() {
                if t_idx > 0 {
                    out.push_str(", ");
                }
                out.push_str(&format!("{{\"to\": {target}, \"p\": "));
                push_f64(&mut out, p);
                out.push('}');
            }
            out.push_str("], \"term_p\": ");
            push_f64(&mut out, action.term_prob);
            out.push_str(if idx + 1 < actions.len() { "},\n" } else { "}\n" });
        }
        out.push_str(if state < mdp.n() { "    ]},\n" } else { "    ]}\n" });
    }
    out.push_str("  ]\n}\n");
    out
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FileMdp {
    version: u32,
    n: usize,
    states: Vec<FileState>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FileState {
    id: usize,
    actions: Vec<FileAction>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FileAction {
    id: u32,
    cost: f64,
    transitions: Vec<FileTransition>,
    term_p: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FileTransition {
    to: usize,
    p: f64,
}

/// Parses and validates a model from the JSON format. The stored
/// `term_p` is cross-checked against the row deficit.
pub fn from_json(text: &str) -> Result<SspMdp, InstanceIoError> {
    let file: FileMdp = serde_json::from_str(text)?;
    if file.version != FORMAT_VERSION {
        return Err(InstanceIoError::UnsupportedVersion(file.version));
    }
    let raw = RawMdp {
        n: file.n,
        states: file
            .states
            .into_iter()
            .map(|s| crate::mdp::RawState {
                id: s.id,
                actions: s
                    .actions
                    .into_iter()
                    .map(|a| crate::mdp::RawAction {
                        id: a.id,
                        cost: a.cost,
                        transitions: a.transitions.into_iter().map(|t| (t.to, t.p)).collect(),
                        term_prob: Some(a.term_p),
                    })
                    .collect(),
            })
            .collect(),
    };
    Ok(SspMdp::validate(raw)?)
}

pub fn save_mdp(mdp: &SspMdp, path: &std::path::Path) -> Result<(), InstanceIoError> {
    Ok(std::fs::write(path, to_json(mdp))?)
}

pub fn load_mdp(path: &std::path::Path) -> Result<SspMdp, InstanceIoError> {
    from_json(&std::fs::read_to_string(path)?)
}
