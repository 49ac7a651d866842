//! Random and hand-built models used by tests, the CLI and experiments.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp1};

use super::{encode_tabular, LinearAtstMdp};
use crate::error::{Error, Result};

/// A point drawn uniformly from the probability simplex of dimension `n`.
pub fn uniform_simplex<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

/// Tabular model with uniformly random transition rows and rewards in `[0, 1)`.
pub fn random_tabular<R: Rng + ?Sized>(
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    beta: Vec<f64>,
    rng: &mut R,
) -> Result<LinearAtstMdp> {
    if beta.len() != n_actions {
        return Err(Error::Dimension("beta must have one entry per action".into()));
    }
    let p: Vec<Vec<Vec<f64>>> = (0..n_states)
        .map(|_| (0..n_actions).map(|_| uniform_simplex(n_states, rng)).collect())
        .collect();
    let r: Vec<Vec<f64>> = (0..n_states)
        .map(|_| (0..n_actions).map(|_| rng.random::<f64>()).collect())
        .collect();
    encode_tabular(&p, &r, gamma, beta)
}

/// Non-tabular model of dimension `d`: features on the simplex, each row of
/// `mu` a distribution over states and `theta ∈ [0, 1)^d`.
///
/// Kernels are mixtures of the `d` rows of `mu`, so they are stochastic by
/// construction while the features are genuinely shared across states.
pub fn random_simplex<R: Rng + ?Sized>(
    n_states: usize,
    n_actions: usize,
    d: usize,
    gamma: f64,
    beta: Vec<f64>,
    rng: &mut R,
) -> Result<LinearAtstMdp> {
    if beta.len() != n_actions {
        return Err(Error::Dimension("beta must have one entry per action".into()));
    }
    let phi = (0..n_states)
        .map(|_| {
            (0..n_actions)
                .map(|_| DVector::from_vec(uniform_simplex(d, rng)))
                .collect()
        })
        .collect();
    let mut mu = DMatrix::zeros(d, n_states);
    for i in 0..d {
        for (s, p) in uniform_simplex(n_states, rng).into_iter().enumerate() {
            mu[(i, s)] = p;
        }
    }
    let theta = DVector::from_fn(d, |_, _| rng.random::<f64>());
    LinearAtstMdp::new(phi, mu, theta, gamma, beta)
}

/// Three-state, two-action benchmark with `gamma = 0.8`.
///
/// `look` (action 0) always reveals the state; `move` (action 1) only with
/// probability 0.3. The payoff sits in `s2`, which is reached by moving
/// twice from `s0`, and moving from `s2` usually slides back to `s0`.
/// The optimal plan therefore interleaves blind moves with looks, which is
/// what makes the burst structure matter.
pub fn benchmark_three_state() -> LinearAtstMdp {
    let p = vec![
        vec![vec![0.9, 0.1, 0.0], vec![0.1, 0.8, 0.1]],
        vec![vec![0.1, 0.9, 0.0], vec![0.0, 0.2, 0.8]],
        vec![vec![0.0, 0.0, 1.0], vec![0.7, 0.0, 0.3]],
    ];
    let r = vec![vec![0.0, 0.1], vec![0.0, 0.1], vec![0.6, 1.0]];
    encode_tabular(&p, &r, 0.8, vec![1.0, 0.3])
        .and_then(|m| {
            m.with_names(
                vec!["s0".into(), "s1".into(), "s2".into()],
                vec!["look".into(), "move".into()],
            )
        })
        .expect("benchmark model is valid")
}

/// Two states, action 0 swaps them and action 1 stays put.
pub fn swap_two_state(gamma: f64, beta: Vec<f64>) -> Result<LinearAtstMdp> {
    let p = vec![
        vec![vec![0.0, 1.0], vec![1.0, 0.0]],
        vec![vec![1.0, 0.0], vec![0.0, 1.0]],
    ];
    let r = vec![vec![0.0, 0.5], vec![1.0, 0.25]];
    encode_tabular(&p, &r, gamma, beta)
}

/// One state, `rewards.len()` actions with constant rewards.
pub fn single_state(rewards: &[f64], gamma: f64, beta: Vec<f64>) -> Result<LinearAtstMdp> {
    let p = vec![vec![vec![1.0]; rewards.len()]];
    encode_tabular(&p, &[rewards.to_vec()], gamma, beta)
}
