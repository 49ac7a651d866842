use serde::{Deserialize, Serialize};

use crate::belief::OptimalPlan;
use crate::error::{Error, Result};
use crate::sequence::{ActionSequence, AugmentedState};

/// A deterministic policy on augmented states that may switch at bursts.
pub trait AugmentedPolicy {
    /// Action in `x` during the segment that started at burst index `u`
    /// (counted from 1).
    fn action(&self, u: usize, x: &AugmentedState) -> usize;

    /// First burst index from which the policy no longer changes.
    fn stationary_from(&self) -> usize {
        1
    }
}

impl AugmentedPolicy for OptimalPlan {
    fn action(&self, _u: usize, x: &AugmentedState) -> usize {
        self.greedy_action(x)
    }
}

/// Stationary policy given by a closure.
pub struct FnPolicy<F>(pub F);

impl<F: Fn(&AugmentedState) -> usize> AugmentedPolicy for FnPolicy<F> {
    fn action(&self, _u: usize, x: &AugmentedState) -> usize {
        (self.0)(x)
    }
}

/// Commits to `table[u-1][s]` at burst index `u` in state `s`; indices past
/// the table reuse its last row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommittedSequencePolicy {
    table: Vec<Vec<ActionSequence>>,
}

impl CommittedSequencePolicy {
    pub fn new(table: Vec<Vec<ActionSequence>>) -> Result<Self> {
        let n_states = table.first().map(Vec::len).unwrap_or(0);
        if n_states == 0 || table.iter().any(|row| row.len() != n_states) {
            return Err(Error::Dimension(
                "policy table needs equal, non-empty rows".into(),
            ));
        }
        Ok(Self { table })
    }

    /// The same sequence choice at every burst.
    pub fn stationary(row: Vec<ActionSequence>) -> Result<Self> {
        Self::new(vec![row])
    }

    pub fn num_rows(&self) -> usize {
        self.table.len()
    }

    pub fn num_states(&self) -> usize {
        self.table[0].len()
    }

    pub fn sequence(&self, u: usize, s: usize) -> &ActionSequence {
        let row = u.clamp(1, self.table.len()) - 1;
        &self.table[row][s]
    }

    pub fn rows(&self) -> &[Vec<ActionSequence>] {
        &self.table
    }
}

impl AugmentedPolicy for CommittedSequencePolicy {
    fn action(&self, u: usize, x: &AugmentedState) -> usize {
        let s = x.anchor().expect("policies are not queried at the sentinel");
        self.sequence(u, s).action_at(x.depth())
    }

    fn stationary_from(&self) -> usize {
        self.table.len()
    }
}
