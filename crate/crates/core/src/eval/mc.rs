use rand::Rng;
use serde::{Deserialize, Serialize};

use super::policy::AugmentedPolicy;
use crate::belief::{belief, ActionMatrixSet};
use crate::error::{Error, Result};
use crate::model::LinearAtstMdp;
use crate::sequence::{ActionSequence, AugmentedState};

/// Discounted tails below this are not simulated.
pub const MC_TAIL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    /// Sample standard deviation over `sqrt(n)`.
    pub std_err: f64,
    pub n_samples: usize,
}

impl McEstimate {
    pub fn from_samples(samples: &[f64]) -> Result<Self> {
        let n = samples.len();
        if n < 2 {
            return Err(Error::invalid("n_samples", "need at least two samples"));
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        Ok(Self {
            mean,
            std_err: (var / n as f64).sqrt(),
            n_samples: n,
        })
    }

    /// Whether `value` is within `k` standard errors. A zero standard error
    /// only admits the mean itself, up to rounding.
    pub fn covers(&self, value: f64, k: f64) -> bool {
        (self.mean - value).abs() <= k * self.std_err + 1e-12
    }
}

/// Monte-Carlo split of `K^π(x, seq)` into the reward collected before the
/// next burst and the discounted value after it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KDecomposition {
    pub k: McEstimate,
    pub reward: McEstimate,
    pub post_burst: McEstimate,
}

/// Rounds after which `γ^h / (1-γ) <= tol`.
pub fn rollout_horizon(gamma: f64, tol: f64) -> usize {
    ((tol * (1.0 - gamma)).ln() / gamma.ln()).ceil().max(1.0) as usize
}

fn sample_index(dist: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in dist.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    dist.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Discounted return of `policy` from a revealed state at burst index `u`,
/// simulated for `steps` rounds.
fn rollout_policy<R: Rng + ?Sized>(
    mdp: &LinearAtstMdp,
    policy: &dyn AugmentedPolicy,
    state: usize,
    mut u: usize,
    steps: usize,
    rng: &mut R,
) -> f64 {
    let gamma = mdp.gamma();
    let mut x = AugmentedState::observed(state);
    let mut hidden = state;
    let mut total = 0.0;
    let mut disc = 1.0;
    for _ in 0..steps {
        let a = policy.action(u, &x);
        total += disc * mdp.reward(hidden, a);
        hidden = mdp.sample_next(hidden, a, rng.random());
        disc *= gamma;
        if rng.random::<f64>() < mdp.beta(a) {
            x = AugmentedState::observed(hidden);
            u += 1;
        } else {
            x = x.push(a);
        }
    }
    total
}

/// Estimates `K^π(x, seq)`: commit to `seq` in `x` until the next burst, then
/// follow `continuation` from burst index 2.
pub fn mc_k_decomposition<R: Rng + ?Sized>(
    mdp: &LinearAtstMdp,
    x: &AugmentedState,
    seq: &ActionSequence,
    continuation: &dyn AugmentedPolicy,
    n_samples: usize,
    rng: &mut R,
) -> Result<KDecomposition> {
    if n_samples < 2 {
        return Err(Error::invalid("n_samples", "need at least two samples"));
    }
    let gamma = mdp.gamma();
    let horizon = rollout_horizon(gamma, MC_TAIL_TOL);
    let start = match x.anchor() {
        None => None,
        Some(s) if x.depth() == 0 => {
            let mut b = vec![0.0; mdp.num_states()];
            b[s] = 1.0;
            Some(b)
        }
        Some(_) => Some(belief(mdp, &ActionMatrixSet::from_model(mdp)?, x)?),
    };
    let mut rewards = Vec::with_capacity(n_samples);
    let mut posts = Vec::with_capacity(n_samples);
    let mut ks = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let (mut r, mut post) = (0.0, 0.0);
        if let Some(b) = &start {
            let mut hidden = sample_index(b, rng.random());
            let mut disc = 1.0;
            for t in 0..horizon {
                let a = seq.action_at(t);
                r += disc * mdp.reward(hidden, a);
                hidden = mdp.sample_next(hidden, a, rng.random());
                disc *= gamma;
                if rng.random::<f64>() < mdp.beta(a) {
                    let rest = horizon - t - 1;
                    post = disc * rollout_policy(mdp, continuation, hidden, 2, rest, rng);
                    break;
                }
            }
        }
        rewards.push(r);
        posts.push(post);
        ks.push(r + post);
    }
    Ok(KDecomposition {
        k: McEstimate::from_samples(&ks)?,
        reward: McEstimate::from_samples(&rewards)?,
        post_burst: McEstimate::from_samples(&posts)?,
    })
}

/// Estimates `K^π(x, seq)`.
pub fn mc_k_value<R: Rng + ?Sized>(
    mdp: &LinearAtstMdp,
    x: &AugmentedState,
    seq: &ActionSequence,
    continuation: &dyn AugmentedPolicy,
    n_samples: usize,
    rng: &mut R,
) -> Result<McEstimate> {
    Ok(mc_k_decomposition(mdp, x, seq, continuation, n_samples, rng)?.k)
}

/// Estimates `V^π(s)` from burst index 1.
pub fn mc_policy_value<R: Rng + ?Sized>(
    mdp: &LinearAtstMdp,
    policy: &dyn AugmentedPolicy,
    state: usize,
    n_samples: usize,
    rng: &mut R,
) -> Result<McEstimate> {
    let horizon = rollout_horizon(mdp.gamma(), MC_TAIL_TOL);
    let samples: Vec<f64> = (0..n_samples)
        .map(|_| rollout_policy(mdp, policy, state, 1, horizon, rng))
        .collect();
    McEstimate::from_samples(&samples)
}
