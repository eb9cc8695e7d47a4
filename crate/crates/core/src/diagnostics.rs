//! Convergence diagnostics for simulation-driven runs.
//!
//! The quantity watched throughout is the Bellman residual
//! `max_i (TJ(i) - J(i))`: it is zero exactly at the optimal value
//! vector, and driving its positive part to zero is what the optimistic
//! iterations are expected to achieve in the limit. Run logs record it
//! alongside step sizes and policy churn; summaries condense a log into
//! the few numbers a convergence check needs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dp::{bellman_operator, ValueVector};
use crate::mdp::{Policy, SspMdp};
use crate::opi::OpiConfig;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiagnosticsError {
    #[error("value vectors have lengths {a} and {b}")]
    DimensionMismatch { a: usize, b: usize },
    #[error("run log holds no records")]
    EmptyLog,
    #[error("tail fraction must lie in (0, 1], got {0}")]
    InvalidTailFraction(f64),
}

/// One recorded point of a run.
#[derive(Debug, Clone)]
pub struct RunRecord {
    /// Iteration count at which the snapshot was taken.
    pub t: usize,
    /// Step size the next update will use.
    pub gamma: f64,
    /// Bellman residual `max_i (TJ_t(i) - J_t(i))` of the current values.
    pub bellman_residual: f64,
    /// Sup distance to the optimal values, when an oracle was supplied.
    pub sup_error: Option<f64>,
    /// Whether the greedy policy changed since the previous record.
    pub policy_changed: bool,
    /// Sup norm of the current values, for boundedness checks.
    pub sup_value: f64,
}

/// Full log of one run: the configuration it was produced under, the
/// recorded points, and the final iterate.
#[derive(Debug, Clone)]
pub struct RunLog {
    pub config: OpiConfig,
    pub records: Vec<RunRecord>,
    pub final_value: ValueVector,
    pub final_policy: Policy,
}

impl RunLog {
    /// Renders the records as CSV with a fixed header. Floats print in
    /// shortest round-trip form, the policy flag as 0/1, and a missing
    /// oracle distance as an empty field, so equal runs yield equal bytes.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,gamma,c_t,sup_error,policy_changed\n");
        for r in &self.records {
            let sup_error = r.sup_error.map(|e| e.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.t,
                r.gamma,
                r.bellman_residual,
                sup_error,
                u8::from(r.policy_changed),
            ));
        }
        out
    }
}

/// `max_i (TJ(i) - J(i))`, the signed Bellman residual of `j`.
pub fn bellman_residual(mdp: &SspMdp, j: &ValueVector) -> f64 {
    let tj = bellman_operator(mdp, j);
    tj.values()
        .iter()
        .zip(j.values())
        .fold(f64::NEG_INFINITY, |acc, (t, v)| acc.max(t - v))
}

/// Sup distance between an iterate and an oracle of matching length.
pub fn distance_to_opt(j: &ValueVector, oracle: &ValueVector) -> Result<f64, DiagnosticsError> {
    if j.len() != oracle.len() {
        return Err(DiagnosticsError::DimensionMismatch { a: j.len(), b: oracle.len() });
    }
    Ok(j.sup_distance(oracle))
}

/// Condensed view of a run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    /// Oracle distance at the final record, when an oracle was supplied.
    pub final_error: Option<f64>,
    /// Largest Bellman residual among the tail records.
    pub max_tail_residual: f64,
    /// Number of records whose greedy policy differed from the previous one.
    pub policy_switches: usize,
    /// Largest sup norm any recorded iterate reached.
    pub max_sup_value: f64,
}

/// Summarizes the last `tail_fraction` of the records (at least one).
pub fn summarize_run(log: &RunLog, tail_fraction: f64) -> Result<RunSummary, DiagnosticsError> {
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(DiagnosticsError::InvalidTailFraction(tail_fraction));
    }
    if log.records.is_empty() {
        return Err(DiagnosticsError::EmptyLog);
    }
    let len = log.records.len();
    let tail_len = ((len as f64 * tail_fraction).ceil() as usize).clamp(1, len);
    let tail = &log.records[len - tail_len..];
    Ok(RunSummary {
        final_error: log.records.last().and_then(|r| r.sup_error),
        max_tail_residual: tail
            .iter()
            .fold(f64::NEG_INFINITY, |acc, r| acc.max(r.bellman_residual)),
        policy_switches: log.records.iter().filter(|r| r.policy_changed).count(),
        max_sup_value: log.records.iter().fold(0.0, |acc, r| acc.max(r.sup_value)),
    })
}
