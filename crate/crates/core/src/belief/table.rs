use nalgebra::DVector;

use super::{belief_from_feature, ActionMatrixSet};
use crate::error::{Error, Result};
use crate::model::LinearAtstMdp;
use crate::sequence::AugmentedState;

/// Largest `S · A^D` an explicit table may have.
pub const MAX_TABLE_ENTRIES: usize = 1_000_000;

/// Slack allowed on the value range before an entry counts as out of range.
const RANGE_TOL: f64 = 1e-9;

/// Values on every augmented state `(s; a_1, ..., a_k)` with `k <= depth_cap`.
///
/// Layer `k` stores `S · A^k` entries indexed by `s` followed by the actions
/// in mixed radix (first action most significant).
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    n_states: usize,
    n_actions: usize,
    depth_cap: usize,
    layers: Vec<Vec<f64>>,
}

impl ValueTable {
    pub fn zeros(mdp: &LinearAtstMdp, depth_cap: usize) -> Result<Self> {
        Self::from_fn(mdp, depth_cap, |_| 0.0)
    }

    /// Fills the table by evaluating `f` on every augmented state.
    pub fn from_fn(
        mdp: &LinearAtstMdp,
        depth_cap: usize,
        mut f: impl FnMut(&AugmentedState) -> f64,
    ) -> Result<Self> {
        let (n_states, n_actions) = (mdp.num_states(), mdp.num_actions());
        let widest = (n_actions as u128)
            .checked_pow(depth_cap as u32)
            .and_then(|w| w.checked_mul(n_states as u128))
            .unwrap_or(u128::MAX);
        if widest > MAX_TABLE_ENTRIES as u128 {
            return Err(Error::PlanningTooLarge {
                nodes: widest.min(usize::MAX as u128) as usize,
                budget: MAX_TABLE_ENTRIES,
            });
        }
        let mut table = Self {
            n_states,
            n_actions,
            depth_cap,
            layers: (0..=depth_cap)
                .map(|k| vec![0.0; n_states * n_actions.pow(k as u32)])
                .collect(),
        };
        for k in 0..=depth_cap {
            for idx in 0..table.layers[k].len() {
                let x = table.decode(k, idx);
                table.layers[k][idx] = f(&x);
            }
        }
        Ok(table)
    }

    pub fn depth_cap(&self) -> usize {
        self.depth_cap
    }

    pub fn layer(&self, depth: usize) -> &[f64] {
        &self.layers[depth]
    }

    /// Values on bare states.
    pub fn state_values(&self) -> &[f64] {
        &self.layers[0]
    }

    fn encode(&self, x: &AugmentedState) -> Option<(usize, usize)> {
        let s = x.anchor()?;
        let idx = x
            .tail()
            .iter()
            .fold(s, |acc, &a| acc * self.n_actions + a);
        Some((x.depth(), idx))
    }

    fn decode(&self, depth: usize, mut idx: usize) -> AugmentedState {
        let mut tail = vec![0; depth];
        for slot in tail.iter_mut().rev() {
            *slot = idx % self.n_actions;
            idx /= self.n_actions;
        }
        AugmentedState::with_tail(idx, tail)
    }

    /// Value at `x`; the termination sentinel is worth zero.
    ///
    /// # Panics
    /// If `x` is deeper than the depth cap.
    pub fn get(&self, x: &AugmentedState) -> f64 {
        match self.encode(x) {
            None => 0.0,
            Some((k, idx)) => self.layers[k][idx],
        }
    }

    pub fn set(&mut self, x: &AugmentedState, value: f64) {
        if let Some((k, idx)) = self.encode(x) {
            self.layers[k][idx] = value;
        }
    }

    /// Every augmented state in the table, shallow layers first.
    pub fn states(&self) -> impl Iterator<Item = AugmentedState> + '_ {
        (0..=self.depth_cap)
            .flat_map(move |k| (0..self.layers[k].len()).map(move |idx| self.decode(k, idx)))
    }

    /// Sup-norm distance on the depths both tables cover.
    pub fn sup_distance(&self, other: &ValueTable) -> f64 {
        let depth = self.depth_cap.min(other.depth_cap);
        (0..=depth)
            .flat_map(|k| self.layers[k].iter().zip(&other.layers[k]))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Same values with the deepest layers dropped.
    pub fn truncated(&self, depth_cap: usize) -> ValueTable {
        let depth_cap = depth_cap.min(self.depth_cap);
        ValueTable {
            n_states: self.n_states,
            n_actions: self.n_actions,
            depth_cap,
            layers: self.layers[..=depth_cap].to_vec(),
        }
    }
}

/// One application of the optimality operator on augmented states:
///
/// ```text
/// (TV)(x) = max_a { phi(x⊕a)·theta + gamma beta(a) E_{b(x⊕a)} V(s') + gamma (1 - beta(a)) V(x⊕a) }
/// ```
///
/// The result covers one layer less than the input.
pub fn bellman_operator(
    mdp: &LinearAtstMdp,
    ams: &ActionMatrixSet,
    values: &ValueTable,
) -> Result<ValueTable> {
    if values.depth_cap == 0 {
        return Err(Error::DepthExhausted);
    }
    let (n_states, n_actions) = (mdp.num_states(), mdp.num_actions());
    let gamma = mdp.gamma();
    let v_max = mdp.v_max();
    let out_cap = values.depth_cap - 1;

    // features[k][idx] = phi(x) for the state x at (k, idx), k >= 1
    let mut features: Vec<Vec<DVector<f64>>> = vec![Vec::new()];
    for k in 1..=out_cap {
        let layer = (0..n_states * n_actions.pow(k as u32))
            .map(|idx| {
                let (parent, a) = (idx / n_actions, idx % n_actions);
                if k == 1 {
                    mdp.phi(parent, a).clone()
                } else {
                    ams.get(a).tr_mul(&features[k - 1][parent])
                }
            })
            .collect();
        features.push(layer);
    }

    let states = values.state_values();
    let mut layers = Vec::with_capacity(out_cap + 1);
    for k in 0..=out_cap {
        let mut layer = vec![0.0; n_states * n_actions.pow(k as u32)];
        for (idx, out) in layer.iter_mut().enumerate() {
            let mut best = f64::NEG_INFINITY;
            for a in 0..n_actions {
                let g = if k == 0 {
                    mdp.phi(idx, a).clone()
                } else {
                    ams.get(a).tr_mul(&features[k][idx])
                };
                let b = belief_from_feature(mdp, &g)?;
                let expected: f64 = b.iter().zip(states).map(|(p, v)| p * v).sum();
                let beta = mdp.beta(a);
                let q = g.dot(mdp.theta())
                    + gamma * beta * expected
                    + gamma * (1.0 - beta) * values.layers[k + 1][idx * n_actions + a];
                best = best.max(q);
            }
            if !(-RANGE_TOL..=v_max + RANGE_TOL).contains(&best) {
                return Err(Error::ValueOutOfRange {
                    index: idx,
                    value: best,
                    v_max,
                });
            }
            *out = best.clamp(0.0, v_max);
        }
        layers.push(layer);
    }
    Ok(ValueTable {
        n_states,
        n_actions,
        depth_cap: out_cap,
        layers,
    })
}
