use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use super::policy::{AugmentedPolicy, CommittedSequencePolicy};
use crate::belief::{belief_from_feature, ActionMatrixSet};
use crate::error::{Error, Result};
use crate::model::LinearAtstMdp;
use crate::sequence::{ActionSequence, AugmentedState};

/// Open-loop quantities of one segment started in a revealed state.
struct Chain {
    /// `disc[j] = γ^j Π_{i<j} (1 - beta(a_i))`.
    disc: Vec<f64>,
    reward: Vec<f64>,
    /// `γ beta(a_j) b_j(s')`: discounted burst mass after step `j`.
    burst: Vec<Vec<f64>>,
}

fn chain(
    mdp: &LinearAtstMdp,
    ams: &ActionMatrixSet,
    s: usize,
    len: usize,
    mut action: impl FnMut(&AugmentedState) -> usize,
) -> Result<Chain> {
    let gamma = mdp.gamma();
    let mut x = AugmentedState::observed(s);
    let mut feature: Option<DVector<f64>> = None;
    let mut out = Chain {
        disc: Vec::with_capacity(len),
        reward: Vec::with_capacity(len),
        burst: Vec::with_capacity(len),
    };
    let mut disc = 1.0;
    for _ in 0..len {
        let a = action(&x);
        let f = match feature {
            None => mdp.phi(s, a).clone(),
            Some(prev) => ams.get(a).tr_mul(&prev),
        };
        let b = belief_from_feature(mdp, &f)?;
        let beta = mdp.beta(a);
        out.disc.push(disc);
        out.reward.push(f.dot(mdp.theta()));
        out.burst.push(b.iter().map(|p| gamma * beta * p).collect());
        disc *= gamma * (1.0 - beta);
        feature = Some(f);
        x = x.push(a);
        if disc == 0.0 {
            break;
        }
    }
    Ok(out)
}

/// Value on revealed states of `policy`, started at burst index 1, computed
/// by `n` rounds of the backward recursion on augmented states:
///
/// ```text
/// V(x) = phi(x⊕a)·theta + γ beta(a) E_{b(x⊕a)} V(s') + γ (1 - beta(a)) V(x⊕a),   a = π(x)
/// ```
///
/// with the value after `n` rounds set to zero, so the error is at most
/// `γ^n / (1-γ)`.
pub fn exact_policy_value(
    mdp: &LinearAtstMdp,
    ams: &ActionMatrixSet,
    policy: &dyn AugmentedPolicy,
    n: usize,
) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::DepthExhausted);
    }
    let n_states = mdp.num_states();
    let rows = policy.stationary_from().clamp(1, n);
    let chains: Vec<Vec<Chain>> = (1..=rows)
        .map(|u| {
            (0..n_states)
                .map(|s| chain(mdp, ams, s, n, |x| policy.action(u, x)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    // w[m][u-1][s]: value with m rounds left
    let mut w = vec![vec![vec![0.0; n_states]; rows]; n + 1];
    for m in 1..=n {
        for u in 1..=rows {
            let next = (u + 1).min(rows) - 1;
            for s in 0..n_states {
                let c = &chains[u - 1][s];
                let mut total = 0.0;
                for j in 0..m.min(c.disc.len()) {
                    let later = &w[m - j - 1][next];
                    let cont: f64 = c.burst[j].iter().zip(later).map(|(p, v)| p * v).sum();
                    total += c.disc[j] * (c.reward[j] + cont);
                }
                w[m][u - 1][s] = total;
            }
        }
    }
    Ok(w[n][0].clone())
}

/// Exact values of committed-sequence policies.
///
/// Per `(s, seq)` it computes the expected discounted reward `R` until the
/// next burst and the discounted burst distribution `G[s']`; the values then
/// follow from `V_u = R_u + G_u V_{u+1}`, with the last row solved as a
/// stationary linear system. Segments are summed until `γ^h/(1-γ) <= 1e-10`.
pub struct SequencePolicyEvaluator<'m> {
    mdp: &'m LinearAtstMdp,
    ams: ActionMatrixSet,
    steps: usize,
    cache: HashMap<(usize, ActionSequence), (f64, DVector<f64>)>,
}

impl<'m> SequencePolicyEvaluator<'m> {
    pub fn new(mdp: &'m LinearAtstMdp) -> Result<Self> {
        let gamma = mdp.gamma();
        let steps = ((1e-10 * (1.0 - gamma)).ln() / gamma.ln()).ceil().max(1.0) as usize;
        Ok(Self {
            mdp,
            ams: ActionMatrixSet::from_model(mdp)?,
            steps,
            cache: HashMap::new(),
        })
    }

    /// `(R, G)` of committing to `seq` in state `s`.
    pub fn segment(&mut self, s: usize, seq: &ActionSequence) -> Result<(f64, DVector<f64>)> {
        let key = (s, seq.canonical());
        if let Some(hit) = self.cache.get(&key) {
            return Ok(hit.clone());
        }
        let c = chain(self.mdp, &self.ams, s, self.steps, |x| seq.action_at(x.depth()))?;
        let mut r = 0.0;
        let mut g = DVector::zeros(self.mdp.num_states());
        for j in 0..c.disc.len() {
            r += c.disc[j] * c.reward[j];
            for (gi, p) in g.iter_mut().zip(&c.burst[j]) {
                *gi += c.disc[j] * p;
            }
        }
        self.cache.insert(key, (r, g.clone()));
        Ok((r, g))
    }

    /// Values on revealed states at burst index 1.
    pub fn evaluate(&mut self, policy: &CommittedSequencePolicy) -> Result<Vec<f64>> {
        let n_states = self.mdp.num_states();
        let rows = policy.num_rows();
        let layer = |this: &mut Self, u: usize| -> Result<(DVector<f64>, DMatrix<f64>)> {
            let mut r = DVector::zeros(n_states);
            let mut g = DMatrix::zeros(n_states, n_states);
            for s in 0..n_states {
                let (rs, gs) = this.segment(s, policy.sequence(u, s))?;
                r[s] = rs;
                g.set_row(s, &gs.transpose());
            }
            Ok((r, g))
        };
        let (r, g) = layer(self, rows)?;
        let system = DMatrix::identity(n_states, n_states) - g;
        let mut v = system
            .lu()
            .solve(&r)
            .ok_or_else(|| Error::invalid("policy", "singular stationary system"))?;
        for u in (1..rows).rev() {
            let (r, g) = layer(self, u)?;
            v = r + g * v;
        }
        Ok(v.iter().copied().collect())
    }
}

/// `V*` on revealed states together with an evaluator for deployed policies.
pub struct RegretOracle<'m> {
    pub v_star: Vec<f64>,
    /// Accuracy of `v_star`.
    pub slack: f64,
    pub evaluator: SequencePolicyEvaluator<'m>,
}

impl<'m> RegretOracle<'m> {
    pub fn new(mdp: &'m LinearAtstMdp, v_star: Vec<f64>, slack: f64) -> Result<Self> {
        Ok(Self {
            v_star,
            slack,
            evaluator: SequencePolicyEvaluator::new(mdp)?,
        })
    }

    /// `(V*(s), V^π(s))`.
    pub fn regret(&mut self, policy: &CommittedSequencePolicy, s: usize) -> Result<(f64, f64)> {
        let v = self.evaluator.evaluate(policy)?;
        Ok((self.v_star[s], v[s]))
    }
}
