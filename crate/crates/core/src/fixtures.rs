//! Tiny hand-checked models shared by the unit tests.

use crate::mdp::{RawMdp, SspMdp};

/// Two-state chain: `2 -> 1 -> 0`, every step costs 1. Optimal values (1, 2).
pub fn chain2() -> SspMdp {
    RawMdp::new(2)
        .action(1, 0, 1.0, &[])
        .action(2, 0, 1.0, &[(1, 1.0)])
        .build()
        .unwrap()
}

/// One state that exits with probability one half per step, cost 1.
/// Expected steps to exit is 2, so the value is 2.
pub fn loop_half() -> SspMdp {
    RawMdp::new(1).action(1, 0, 1.0, &[(1, 0.5)]).build().unwrap()
}

/// One state, two actions: action 0 exits immediately at cost 10, action 1
/// loops with probability one half at cost 1. Optimal value 2 via action 1;
/// both actions tie exactly at the value 18.
pub fn twoact() -> SspMdp {
    RawMdp::new(1)
        .action(1, 0, 10.0, &[])
        .action(1, 1, 1.0, &[(1, 0.5)])
        .build()
        .unwrap()
}

/// State 1 exits immediately; state 2 offers a pure self-loop (action 0)
/// and an escape to state 1 (action 1). Policies using action 0 at state 2
/// are improper, so not every policy is proper.
pub fn trap() -> SspMdp {
    RawMdp::new(2)
        .action(1, 0, 1.0, &[])
        .action(2, 0, 1.0, &[(2, 1.0)])
        .action(2, 1, 1.0, &[(1, 1.0)])
        .build()
        .unwrap()
}
