//! Linear MDPs with action-triggered observations.
//!
//! A [`LinearAtstMdp`] bundles the feature map `phi(s, a) ∈ R^d`, the signed
//! measures `mu` (stored as a `d × S` matrix, one column per next state), the
//! reward weights `theta`, the discount `gamma` and the per-action burst
//! probability `beta`. Transitions and rewards are recovered linearly:
//!
//! ```text
//! P(s' | s, a) = phi(s, a) · mu[:, s']        r(s, a) = phi(s, a) · theta
//! ```
//!
//! Every constructor validates the norm bounds and stochasticity of the
//! reconstructed kernel, so a value of this type is always a well-formed model.

mod constructions;
mod file;
pub mod generators;

pub use constructions::{make_faulty_channel, make_paid_observations, make_reset_to_observe};
pub use file::{load_model, LinearModelFile, ModelFile, TabularModelFile};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Tolerance on row sums of the transition kernel.
pub const STOCHASTIC_TOL: f64 = 1e-9;
/// Tolerance for exact algebraic identities (and tiny negative kernel entries).
pub const EXACT_TOL: f64 = 1e-12;

/// A validated linear ATST-MDP over a finite state set.
#[derive(Debug, Clone)]
pub struct LinearAtstMdp {
    d: usize,
    state_names: Vec<String>,
    action_names: Vec<String>,
    phi: Vec<DVector<f64>>,
    mu: DMatrix<f64>,
    theta: DVector<f64>,
    gamma: f64,
    beta: Vec<f64>,
    kernel: Vec<Vec<f64>>,
    rewards: Vec<f64>,
}

fn default_names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

impl LinearAtstMdp {
    /// Builds and validates a model. `phi[s][a]` must have length `d`, `mu` is
    /// `d × S`, `beta` has one entry per action.
    pub fn new(
        phi: Vec<Vec<DVector<f64>>>,
        mu: DMatrix<f64>,
        theta: DVector<f64>,
        gamma: f64,
        beta: Vec<f64>,
    ) -> Result<Self> {
        let n_states = phi.len();
        if n_states == 0 {
            return Err(Error::Dimension("model needs at least one state".into()));
        }
        let n_actions = phi[0].len();
        if n_actions == 0 {
            return Err(Error::Dimension("model needs at least one action".into()));
        }
        let d = theta.len();
        if d == 0 {
            return Err(Error::Dimension("feature dimension must be positive".into()));
        }
        if mu.nrows() != d || mu.ncols() != n_states {
            return Err(Error::Dimension(format!(
                "mu is {}x{}, expected {d}x{n_states}",
                mu.nrows(),
                mu.ncols()
            )));
        }
        if beta.len() != n_actions {
            return Err(Error::Dimension(format!(
                "beta has {} entries, expected {n_actions}",
                beta.len()
            )));
        }
        let mut flat = Vec::with_capacity(n_states * n_actions);
        for (s, row) in phi.into_iter().enumerate() {
            if row.len() != n_actions {
                return Err(Error::Dimension(format!(
                    "phi[{s}] has {} actions, expected {n_actions}",
                    row.len()
                )));
            }
            for (a, f) in row.into_iter().enumerate() {
                if f.len() != d {
                    return Err(Error::Dimension(format!(
                        "phi[{s}][{a}] has length {}, expected {d}",
                        f.len()
                    )));
                }
                flat.push(f);
            }
        }
        let mut model = Self {
            d,
            state_names: default_names("s", n_states),
            action_names: default_names("a", n_actions),
            phi: flat,
            mu,
            theta,
            gamma,
            beta,
            kernel: Vec::new(),
            rewards: Vec::new(),
        };
        model.validate()?;
        Ok(model)
    }

    /// Replaces the default `s0, s1, …` / `a0, a1, …` names.
    pub fn with_names(mut self, states: Vec<String>, actions: Vec<String>) -> Result<Self> {
        if states.len() != self.num_states() || actions.len() != self.num_actions() {
            return Err(Error::Dimension(format!(
                "got {} state and {} action names for a {}x{} model",
                states.len(),
                actions.len(),
                self.num_states(),
                self.num_actions()
            )));
        }
        self.state_names = states;
        self.action_names = actions;
        Ok(self)
    }

    fn validate(&mut self) -> Result<()> {
        let (n_states, n_actions, d) = (self.num_states(), self.num_actions(), self.d);
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::invalid("gamma", format!("{} is not in (0, 1)", self.gamma)));
        }
        for (a, &b) in self.beta.iter().enumerate() {
            if !(0.0..=1.0).contains(&b) {
                return Err(Error::invalid("beta", format!("beta[{a}] = {b} is not in [0, 1]")));
            }
        }
        let sqrt_d = (d as f64).sqrt();
        for s in 0..n_states {
            for a in 0..n_actions {
                let norm = self.phi(s, a).norm();
                if norm > 1.0 + STOCHASTIC_TOL {
                    return Err(Error::NormBoundViolated {
                        what: "phi",
                        index: format!("({s}, {a})"),
                        value: norm,
                        bound: 1.0,
                    });
                }
            }
        }
        let theta_norm = self.theta.norm();
        if theta_norm > sqrt_d + STOCHASTIC_TOL {
            return Err(Error::NormBoundViolated {
                what: "theta",
                index: "-".into(),
                value: theta_norm,
                bound: sqrt_d,
            });
        }
        let mass = DVector::from_fn(d, |i, _| self.mu.row(i).iter().map(|x| x.abs()).sum::<f64>());
        if mass.norm() > sqrt_d + STOCHASTIC_TOL {
            return Err(Error::NormBoundViolated {
                what: "mu absolute mass",
                index: "-".into(),
                value: mass.norm(),
                bound: sqrt_d,
            });
        }

        let mut kernel = Vec::with_capacity(n_states * n_actions);
        let mut rewards = Vec::with_capacity(n_states * n_actions);
        for s in 0..n_states {
            for a in 0..n_actions {
                let f = self.phi(s, a);
                let row: Vec<f64> = (0..n_states).map(|t| f.dot(&self.mu.column(t))).collect();
                if let Some((next, &value)) = row.iter().enumerate().find(|(_, &p)| p < -EXACT_TOL) {
                    return Err(Error::NegativeKernel {
                        state: s,
                        action: a,
                        next,
                        value,
                    });
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > STOCHASTIC_TOL {
                    return Err(Error::NonStochasticKernel { state: s, action: a, sum });
                }
                let r = f.dot(&self.theta);
                if !(-EXACT_TOL..=1.0 + EXACT_TOL).contains(&r) {
                    return Err(Error::NormBoundViolated {
                        what: "reward",
                        index: format!("({s}, {a})"),
                        value: r,
                        bound: 1.0,
                    });
                }
                kernel.push(row.into_iter().map(|p| p.max(0.0)).collect());
                rewards.push(r.clamp(0.0, 1.0));
            }
        }
        self.kernel = kernel;
        self.rewards = rewards;
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn num_states(&self) -> usize {
        self.mu.ncols()
    }

    pub fn num_actions(&self) -> usize {
        self.beta.len()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Upper end of the value range, `1 / (1 - gamma)`.
    pub fn v_max(&self) -> f64 {
        1.0 / (1.0 - self.gamma)
    }

    pub fn beta(&self, action: usize) -> f64 {
        self.beta[action]
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn phi(&self, state: usize, action: usize) -> &DVector<f64> {
        &self.phi[state * self.num_actions() + action]
    }

    pub fn mu(&self) -> &DMatrix<f64> {
        &self.mu
    }

    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    pub fn state_names(&self) -> &[String] {
        &self.state_names
    }

    pub fn action_names(&self) -> &[String] {
        &self.action_names
    }

    /// `r(s, a) = phi(s, a) · theta`.
    pub fn reward(&self, state: usize, action: usize) -> f64 {
        self.rewards[state * self.num_actions() + action]
    }

    /// Reconstructed row `P(· | s, a)` (tiny negative noise clamped to zero).
    pub fn transition(&self, state: usize, action: usize) -> &[f64] {
        &self.kernel[state * self.num_actions() + action]
    }

    /// Inverse-CDF draw from `P(· | s, a)` given a uniform `u ∈ [0, 1)`.
    pub fn sample_next(&self, state: usize, action: usize, u: f64) -> usize {
        let row = self.transition(state, action);
        let total: f64 = row.iter().sum();
        let target = u * total;
        let mut acc = 0.0;
        for (t, &p) in row.iter().enumerate() {
            acc += p;
            if target < acc {
                return t;
            }
        }
        row.iter().rposition(|&p| p > 0.0).unwrap_or(row.len() - 1)
    }

    /// `sum_s mu[:, s] V(s)`, the weight vector that linearizes `E[V(s')]`.
    pub fn integrate(&self, values: &[f64]) -> DVector<f64> {
        &self.mu * DVector::from_column_slice(values)
    }

    /// Same model with a different burst map.
    pub fn with_beta(&self, beta: Vec<f64>) -> Result<Self> {
        if beta.len() != self.num_actions() {
            return Err(Error::Dimension("beta length".into()));
        }
        let mut m = self.clone();
        m.beta = beta;
        m.validate()?;
        Ok(m)
    }
}

/// Encodes a tabular MDP with one indicator coordinate per `(s, a)` pair.
///
/// `p[s][a][s']` is the transition table and `r[s][a] ∈ [0, 1]` the reward.
pub fn encode_tabular(
    p: &[Vec<Vec<f64>>],
    r: &[Vec<f64>],
    gamma: f64,
    beta: Vec<f64>,
) -> Result<LinearAtstMdp> {
    let n_states = p.len();
    if n_states == 0 || r.len() != n_states {
        return Err(Error::Dimension("P and r must cover the same non-empty state set".into()));
    }
    let n_actions = beta.len();
    let d = n_states * n_actions;
    let mut mu = DMatrix::zeros(d, n_states);
    let mut theta = DVector::zeros(d);
    for s in 0..n_states {
        if p[s].len() != n_actions || r[s].len() != n_actions {
            return Err(Error::Dimension(format!("row {s} does not list {n_actions} actions")));
        }
        for a in 0..n_actions {
            let row = &p[s][a];
            if row.len() != n_states {
                return Err(Error::Dimension(format!("P[{s}][{a}] has length {}", row.len())));
            }
            if let Some((next, &value)) = row.iter().enumerate().find(|(_, &x)| x < 0.0) {
                return Err(Error::NegativeKernel { state: s, action: a, next, value });
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::NonStochasticKernel { state: s, action: a, sum });
            }
            let reward = r[s][a];
            if !(0.0..=1.0).contains(&reward) {
                return Err(Error::NormBoundViolated {
                    what: "reward",
                    index: format!("({s}, {a})"),
                    value: reward,
                    bound: 1.0,
                });
            }
            let j = s * n_actions + a;
            for (t, &prob) in row.iter().enumerate() {
                mu[(j, t)] = prob;
            }
            theta[j] = reward;
        }
    }
    let phi = (0..n_states)
        .map(|s| {
            (0..n_actions)
                .map(|a| {
                    let mut e = DVector::zeros(d);
                    e[s * n_actions + a] = 1.0;
                    e
                })
                .collect()
        })
        .collect();
    LinearAtstMdp::new(phi, mu, theta, gamma, beta)
}
