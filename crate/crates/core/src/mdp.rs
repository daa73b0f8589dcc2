//! The decision process underlying the scheduler: states, actions, the
//! deterministic part of the transition function, immediate costs, and dense
//! state indexing for the value table.
//!
//! A state is `(p, c, b)`: intervals of progress inside the current
//! super-interval, the interval at which the last checkpoint committed, and
//! the discrete battery level. The scheduler picks one of two actions at each
//! interval boundary; whether the following interval suffers an energy
//! failure is decided by the environment.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scheduler state at an interval boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MdpState {
    /// Progress counter: intervals completed in the current super-interval.
    pub p: u32,
    /// Checkpoint counter: interval at which the last checkpoint committed.
    pub c: u32,
    /// Battery level index.
    pub b: u32,
}

impl MdpState {
    pub fn new(p: u32, c: u32, b: u32) -> Self {
        Self { p, c, b }
    }

    /// Check the state against concrete dimensions.
    pub fn check(&self, s_dim: u32, b_dim: u32) -> Result<()> {
        if self.c > self.p || self.p >= s_dim || self.b >= b_dim {
            return Err(Error::InvalidState(format!(
                "({}, {}, {}) outside S={s_dim}, B={b_dim} with c <= p",
                self.p, self.c, self.b
            )));
        }
        Ok(())
    }
}

/// The two scheduler actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    /// Continue without a checkpoint.
    Proceed,
    /// Take a checkpoint before the next interval.
    Checkpoint,
}

impl Action {
    /// Dense index used in value-table layouts: proceed first.
    pub fn index(&self) -> usize {
        match self {
            Action::Proceed => 0,
            Action::Checkpoint => 1,
        }
    }

    pub const ALL: [Action; 2] = [Action::Proceed, Action::Checkpoint];
}

/// Deterministic part of the transition: given the action and whether the
/// next interval failed, produce the next `(p, c)` pair. `b_next` comes from
/// the environment's battery dynamics.
///
/// * checkpoint, no failure: `(p+1, p)`
/// * checkpoint, failure:    `(p, p)` — roll back to the fresh checkpoint
/// * proceed, no failure:    `(p+1, c)`
/// * proceed, failure:       `(c, c)` — roll back, losing `p - c` intervals
pub fn next_state(s: &MdpState, a: Action, failure: bool, b_next: u32) -> Result<MdpState> {
    if s.c > s.p {
        return Err(Error::InvalidState(format!(
            "invalid state: c={} > p={}",
            s.c, s.p
        )));
    }
    let (p, c) = match (a, failure) {
        (Action::Checkpoint, false) => (s.p + 1, s.p),
        (Action::Checkpoint, true) => (s.p, s.p),
        (Action::Proceed, false) => (s.p + 1, s.c),
        (Action::Proceed, true) => (s.c, s.c),
    };
    Ok(MdpState::new(p, c, b_next))
}

/// Immediate cost of an action, in cycles at CPI 1: a checkpoint costs its
/// latency regardless of what the next interval does; proceeding costs the
/// lost progress `(p - c) * N` instructions when the next interval fails and
/// nothing otherwise. Callers running at a different CPI scale the
/// instruction-derived case themselves.
pub fn immediate_cost(
    s: &MdpState,
    a: Action,
    failure: bool,
    cp_latency_cycles: u64,
    interval_insts: u64,
) -> u64 {
    match (a, failure) {
        (Action::Checkpoint, _) => cp_latency_cycles,
        (Action::Proceed, false) => 0,
        (Action::Proceed, true) => (s.p - s.c) as u64 * interval_insts,
    }
}

/// Total number of states for the given dimensions. Indexing covers the full
/// `S x S` rectangle even though only `c <= p` is reachable.
pub fn state_count(s_dim: u32, b_dim: u32) -> usize {
    s_dim as usize * s_dim as usize * b_dim as usize
}

/// Bijective dense index: `(p * S + c) * B + b`, with `b` fastest-varying.
pub fn state_index(s: &MdpState, s_dim: u32, b_dim: u32) -> Result<usize> {
    s.check(s_dim, b_dim)?;
    Ok((s.p as usize * s_dim as usize + s.c as usize) * b_dim as usize + s.b as usize)
}

/// Inverse of [`state_index`]. The raw decode covers the full rectangle, so
/// the result may have `c > p` for indices no valid state maps to.
pub fn state_of_index(index: usize, s_dim: u32, b_dim: u32) -> Result<MdpState> {
    if index >= state_count(s_dim, b_dim) {
        return Err(Error::InvalidState(format!(
            "index {index} out of range for S={s_dim}, B={b_dim}"
        )));
    }
    let b = (index % b_dim as usize) as u32;
    let pc = index / b_dim as usize;
    let c = (pc % s_dim as usize) as u32;
    let p = (pc / s_dim as usize) as u32;
    Ok(MdpState::new(p, c, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn transitions_match_the_four_cases() {
        let s = MdpState::new(10, 4, 7);
        assert_eq!(
            next_state(&s, Action::Proceed, true, 3).unwrap(),
            MdpState::new(4, 4, 3)
        );
        assert_eq!(
            next_state(&s, Action::Checkpoint, false, 6).unwrap(),
            MdpState::new(11, 10, 6)
        );
        assert_eq!(
            next_state(&s, Action::Checkpoint, true, 2).unwrap(),
            MdpState::new(10, 10, 2)
        );
        assert_eq!(
            next_state(&s, Action::Proceed, false, 7).unwrap(),
            MdpState::new(11, 4, 7)
        );
    }

    #[test]
    fn rollback_at_origin_is_fixed_point() {
        let s = MdpState::new(0, 0, 2);
        assert_eq!(
            next_state(&s, Action::Proceed, true, 1).unwrap(),
            MdpState::new(0, 0, 1)
        );
    }

    #[test]
    fn invalid_state_is_rejected() {
        let s = MdpState::new(3, 5, 0);
        assert!(next_state(&s, Action::Proceed, false, 0).is_err());
        assert!(s.check(10, 5).is_err());
        assert!(MdpState::new(10, 0, 0).check(10, 5).is_err());
        assert!(MdpState::new(9, 0, 5).check(10, 5).is_err());
    }

    #[test]
    fn costs_match_the_quoted_cases() {
        let s = MdpState::new(10, 4, 0);
        assert_eq!(immediate_cost(&s, Action::Proceed, true, 164, 500), 3000);
        assert_eq!(immediate_cost(&s, Action::Proceed, false, 164, 500), 0);
        assert_eq!(immediate_cost(&s, Action::Checkpoint, false, 164, 500), 164);
        assert_eq!(immediate_cost(&s, Action::Checkpoint, true, 164, 500), 164);
    }

    #[test]
    fn cost_zero_iff_no_lost_progress() {
        for p in 0..8u32 {
            for c in 0..=p {
                let s = MdpState::new(p, c, 0);
                let cost = immediate_cost(&s, Action::Proceed, true, 82, 500);
                if p == c {
                    assert_eq!(cost, 0);
                } else {
                    assert!(cost > 0);
                }
            }
        }
    }

    #[test]
    fn index_corners() {
        assert_eq!(state_index(&MdpState::new(0, 0, 0), 100, 20).unwrap(), 0);
        assert_eq!(state_index(&MdpState::new(0, 0, 1), 100, 20).unwrap(), 1);
        assert_eq!(
            state_index(&MdpState::new(99, 99, 19), 100, 20).unwrap(),
            199_999
        );
    }

    #[test]
    fn default_dimensions_have_200k_states() {
        assert_eq!(state_count(100, 20), 200_000);
    }

    #[test]
    fn index_is_injective_over_all_valid_states() {
        let (s_dim, b_dim) = (100u32, 20u32);
        let mut seen = vec![false; state_count(s_dim, b_dim)];
        for p in 0..s_dim {
            for c in 0..=p {
                for b in 0..b_dim {
                    let s = MdpState::new(p, c, b);
                    let i = state_index(&s, s_dim, b_dim).unwrap();
                    assert!(!seen[i], "collision at {s:?}");
                    seen[i] = true;
                    assert_eq!(state_of_index(i, s_dim, b_dim).unwrap(), s);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn prop_next_state_preserves_invariants(p in 0u32..50, dc in 0u32..50, b in 0u32..20,
                                                chpt in proptest::bool::ANY,
                                                failure in proptest::bool::ANY) {
            let c = dc.min(p);
            let s = MdpState::new(p, c, b);
            let a = if chpt { Action::Checkpoint } else { Action::Proceed };
            let n = next_state(&s, a, failure, b).unwrap();
            prop_assert!(n.c <= n.p);
            prop_assert!(n.p <= p + 1);
        }

        #[test]
        fn prop_index_round_trips(p in 0u32..30, dc in 0u32..30, b in 0u32..8) {
            let c = dc.min(p);
            let s = MdpState::new(p, c, b);
            let i = state_index(&s, 30, 8).unwrap();
            prop_assert_eq!(state_of_index(i, 30, 8).unwrap(), s);
        }
    }
}
