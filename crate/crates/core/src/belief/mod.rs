//! Beliefs over hidden states and planning on augmented states.
//!
//! The action-matrix `M_a = sum_s mu[:, s] phi(s, a)^T` moves a feature one
//! blind step forward: if `f` is the expected feature of the current
//! (hidden state, pending action) pair, then `M_a^T f` is the expected
//! feature after that action is executed and `a` is chosen next. Starting
//! from `phi(s_1, a_1)` this gives the extended feature `phi(x)` of any
//! augmented state, and the belief is linear in it: `b(s | x) = phi(x) · mu[:, s]`.

mod planner;
mod table;

pub use planner::{
    optimal_values, optimal_values_with_budget, planning_iterations, write_oracle_csv, OptimalPlan,
    DEFAULT_NODE_BUDGET,
};
pub use table::{bellman_operator, ValueTable, MAX_TABLE_ENTRIES};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{LinearAtstMdp, EXACT_TOL, STOCHASTIC_TOL};
use crate::sequence::AugmentedState;

/// One `d × d` matrix per action.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionMatrixSet {
    matrices: Vec<DMatrix<f64>>,
}

/// Words checked per product length when spot-verifying the norm bound.
const SPOT_CHECK_WORDS: usize = 128;

impl ActionMatrixSet {
    /// Exact action-matrices of a model, with the product-norm bound
    /// spot-checked on words of length up to 4.
    pub fn from_model(mdp: &LinearAtstMdp) -> Result<Self> {
        let mu = mdp.mu();
        let matrices = (0..mdp.num_actions())
            .map(|a| {
                let mut m = DMatrix::zeros(mdp.dim(), mdp.dim());
                for s in 0..mdp.num_states() {
                    m += mu.column(s) * mdp.phi(s, a).transpose();
                }
                m
            })
            .collect();
        let set = Self { matrices };
        set.verify_product_norms(4)?;
        Ok(set)
    }

    /// Wraps arbitrary (for example estimated) matrices without checks
    /// beyond shape.
    pub fn from_matrices(matrices: Vec<DMatrix<f64>>) -> Result<Self> {
        let d = matrices.first().map_or(0, |m| m.nrows());
        if matrices.is_empty() || matrices.iter().any(|m| m.nrows() != d || m.ncols() != d) {
            return Err(Error::Dimension("action matrices must be non-empty and d x d".into()));
        }
        Ok(Self { matrices })
    }

    pub fn get(&self, action: usize) -> &DMatrix<f64> {
        &self.matrices[action]
    }

    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.matrices
    }

    pub fn num_actions(&self) -> usize {
        self.matrices.len()
    }

    pub fn dim(&self) -> usize {
        self.matrices[0].nrows()
    }

    /// `M_{a_1} M_{a_2} ... M_{a_n}`.
    pub fn product(&self, word: &[usize]) -> DMatrix<f64> {
        let d = self.dim();
        word.iter()
            .fold(DMatrix::identity(d, d), |acc, &a| acc * &self.matrices[a])
    }

    /// Checks `||M_{a_1} ... M_{a_n}||_2 <= sqrt(d)` for every word of length
    /// `n <= max_len`, or for an evenly spread sample of words when there
    /// are too many.
    pub fn verify_product_norms(&self, max_len: usize) -> Result<()> {
        let bound = (self.dim() as f64).sqrt();
        let n_actions = self.num_actions() as u128;
        for len in 1..=max_len {
            let total = n_actions.pow(len as u32);
            let step = (total / SPOT_CHECK_WORDS as u128).max(1);
            let mut code = 0u128;
            while code < total {
                let word = decode_word(code, len, self.num_actions());
                let norm = linalg::op_norm(&self.product(&word));
                if norm > bound + STOCHASTIC_TOL {
                    return Err(Error::NormBoundViolated {
                        what: "action-matrix product",
                        index: format!("{word:?}"),
                        value: norm,
                        bound,
                    });
                }
                code += step;
            }
        }
        Ok(())
    }

    /// Every matrix scaled by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            matrices: self.matrices.iter().map(|m| m * factor).collect(),
        }
    }
}

fn decode_word(mut code: u128, len: usize, n_actions: usize) -> Vec<usize> {
    let mut word = vec![0; len];
    for slot in word.iter_mut().rev() {
        *slot = (code % n_actions as u128) as usize;
        code /= n_actions as u128;
    }
    word
}

/// `phi(x)` for an augmented state with at least one pending action.
pub fn extended_feature(
    mdp: &LinearAtstMdp,
    ams: &ActionMatrixSet,
    x: &AugmentedState,
) -> Result<DVector<f64>> {
    let s = x.anchor().ok_or(Error::Terminal)?;
    let (&first, rest) = x.tail().split_first().ok_or(Error::EmptyTail)?;
    let mut f = mdp.phi(s, first).clone();
    for &a in rest {
        f = ams.get(a).tr_mul(&f);
    }
    Ok(f)
}

/// `phi(x ⊕ a)`, which for a bare state is just `phi(s, a)`.
pub fn feature_after(
    mdp: &LinearAtstMdp,
    ams: &ActionMatrixSet,
    x: &AugmentedState,
    action: usize,
) -> Result<DVector<f64>> {
    extended_feature(mdp, ams, &x.push(action))
}

/// Distribution of the hidden state given an extended feature.
///
/// Entries down to `-1e-12` are treated as rounding noise and clamped to
/// zero; anything more negative means the model or matrices are wrong.
pub fn belief_from_feature(mdp: &LinearAtstMdp, feature: &DVector<f64>) -> Result<Vec<f64>> {
    let raw = mdp.mu().tr_mul(feature);
    let mut b = Vec::with_capacity(raw.len());
    for (s, &v) in raw.iter().enumerate() {
        if v < -EXACT_TOL {
            return Err(Error::NegativeBelief { state: s, value: v });
        }
        b.push(v.max(0.0));
    }
    let total: f64 = b.iter().sum();
    if (total - 1.0).abs() > STOCHASTIC_TOL {
        return Err(Error::NonStochasticBelief { sum: total });
    }
    b.iter_mut().for_each(|v| *v /= total);
    Ok(b)
}

/// `b(· | x) = phi(x) · mu`.
pub fn belief(mdp: &LinearAtstMdp, ams: &ActionMatrixSet, x: &AugmentedState) -> Result<Vec<f64>> {
    belief_from_feature(mdp, &extended_feature(mdp, ams, x)?)
}
