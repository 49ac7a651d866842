//! Standard ways of turning an ordinary linear MDP into one with
//! action-triggered observations.

use nalgebra::{DMatrix, DVector};

use super::LinearAtstMdp;
use crate::error::{Error, Result};

/// Observations arrive with the same probability after every action.
///
/// # Panics
/// If `beta_star` is outside `[0, 1]`.
pub fn make_faulty_channel(base: &LinearAtstMdp, beta_star: f64) -> LinearAtstMdp {
    assert!((0.0..=1.0).contains(&beta_star), "beta_star must lie in [0, 1]");
    base.with_beta(vec![beta_star; base.num_actions()])
        .expect("changing beta keeps a valid model valid")
}

/// Every base action `a` is split into a blind copy (index `2a`, never
/// observes) and a paid copy (index `2a + 1`, always observes at cost
/// `cost[s][a] ∈ [0, c_max]`).
///
/// Features grow by one coordinate and rewards are shifted and rescaled to
/// `(r + c_max - [paid] c) / (1 + c_max)` so that they stay in `[0, 1]`.
pub fn make_paid_observations(
    base: &LinearAtstMdp,
    cost: &[Vec<f64>],
    c_max: f64,
) -> Result<LinearAtstMdp> {
    let (n_states, n_actions, d) = (base.num_states(), base.num_actions(), base.dim());
    if !(c_max > 0.0) {
        return Err(Error::invalid("c_max", "must be positive"));
    }
    if cost.len() != n_states || cost.iter().any(|row| row.len() != n_actions) {
        return Err(Error::Dimension("cost table must be S x A".into()));
    }
    for (s, row) in cost.iter().enumerate() {
        for (a, &c) in row.iter().enumerate() {
            if !(0.0..=c_max).contains(&c) {
                return Err(Error::CostOutOfRange { state: s, action: a, cost: c, c_max });
            }
        }
    }

    let df = d as f64;
    let sqrt_d = df.sqrt();
    let lift = ((df + 1.0) / df).sqrt();
    let inv_sqrt_d1 = 1.0 / (df + 1.0).sqrt();

    let phi = (0..n_states)
        .map(|s| {
            (0..n_actions)
                .flat_map(|a| {
                    let base_phi = base.phi(s, a);
                    [0.0, 1.0].map(|paid| {
                        let mut f = DVector::zeros(d + 1);
                        for i in 0..d {
                            f[i] = base_phi[i] * sqrt_d * inv_sqrt_d1;
                        }
                        f[d] = (1.0 - paid * cost[s][a] / c_max) * inv_sqrt_d1;
                        f
                    })
                })
                .collect()
        })
        .collect();

    let mut theta = DVector::zeros(d + 1);
    let scale = lift / (1.0 + c_max);
    for i in 0..d {
        theta[i] = scale * base.theta()[i];
    }
    theta[d] = scale * c_max * sqrt_d;

    let mut mu = DMatrix::zeros(d + 1, n_states);
    mu.view_mut((0, 0), (d, n_states)).copy_from(&(base.mu() * lift));

    let beta = (0..n_actions).flat_map(|_| [0.0, 1.0]).collect();
    let names = base
        .action_names()
        .iter()
        .flat_map(|n| [format!("{n}_0"), format!("{n}_1")])
        .collect();
    LinearAtstMdp::new(phi, mu, theta, base.gamma(), beta)?
        .with_names(base.state_names().to_vec(), names)
}

/// Adds a restart action `a*` (the last action index) that always observes
/// and moves the environment to a state drawn from `reset`. All original
/// actions become blind.
pub fn make_reset_to_observe(base: &LinearAtstMdp, reset: &[f64]) -> Result<LinearAtstMdp> {
    let (n_states, n_actions, d) = (base.num_states(), base.num_actions(), base.dim());
    if reset.len() != n_states {
        return Err(Error::Dimension("reset distribution must cover every state".into()));
    }
    let sum: f64 = reset.iter().sum();
    if reset.iter().any(|&x| x < 0.0) || (sum - 1.0).abs() > super::STOCHASTIC_TOL {
        return Err(Error::NonStochasticReset { sum });
    }

    let phi = (0..n_states)
        .map(|s| {
            let mut row: Vec<DVector<f64>> = (0..n_actions)
                .map(|a| {
                    let mut f = DVector::zeros(d + 1);
                    f.rows_mut(0, d).copy_from(base.phi(s, a));
                    f
                })
                .collect();
            let mut restart = DVector::zeros(d + 1);
            restart[d] = 1.0;
            row.push(restart);
            row
        })
        .collect();

    let mut theta = DVector::zeros(d + 1);
    theta.rows_mut(0, d).copy_from(base.theta());

    let mut mu = DMatrix::zeros(d + 1, n_states);
    mu.view_mut((0, 0), (d, n_states)).copy_from(base.mu());
    for (s, &p) in reset.iter().enumerate() {
        mu[(d, s)] = p;
    }

    let mut beta = vec![0.0; n_actions];
    beta.push(1.0);
    let mut names = base.action_names().to_vec();
    names.push("restart".into());
    LinearAtstMdp::new(phi, mu, theta, base.gamma(), beta)?
        .with_names(base.state_names().to_vec(), names)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::encode_tabular;

    fn base() -> LinearAtstMdp {
        let p = vec![
            vec![vec![0.2, 0.8], vec![1.0, 0.0]],
            vec![vec![0.5, 0.5], vec![0.0, 1.0]],
        ];
        let r = vec![vec![0.3, 0.9], vec![0.0, 0.6]];
        encode_tabular(&p, &r, 0.8, vec![0.5, 0.5]).unwrap()
    }

    #[test]
    fn zero_cost_paid_observations() {
        let b = base();
        let m = make_paid_observations(&b, &[vec![0.0; 2], vec![0.0; 2]], 1.0).unwrap();
        assert_eq!(m.num_actions(), 4);
        assert_eq!(m.dim(), b.dim() + 1);
        for s in 0..2 {
            for a in 0..2 {
                let expected = (b.reward(s, a) + 1.0) / 2.0;
                assert!((m.reward(s, 2 * a) - expected).abs() < 1e-12);
                assert!((m.reward(s, 2 * a + 1) - expected).abs() < 1e-12);
                assert_eq!(m.beta(2 * a), 0.0);
                assert_eq!(m.beta(2 * a + 1), 1.0);
            }
        }
    }

    #[test]
    fn paid_observation_rewards_and_kernel() {
        let b = base();
        let m = make_paid_observations(&b, &[vec![0.5; 2], vec![0.5; 2]], 1.0).unwrap();
        for s in 0..2 {
            for a in 0..2 {
                for paid in 0..2 {
                    let i = 2 * a + paid;
                    let expected = (b.reward(s, a) + 1.0 - 0.5 * paid as f64) / 2.0;
                    let got = m.phi(s, i).dot(m.theta());
                    assert!((got - expected).abs() <= 1e-12);
                    assert!(m.phi(s, i).norm() <= 1.0 + 1e-12);
                    for t in 0..2 {
                        assert!((m.transition(s, i)[t] - b.transition(s, a)[t]).abs() <= 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn cost_out_of_range() {
        let err = make_paid_observations(&base(), &[vec![0.0, 2.0], vec![0.0; 2]], 1.0).unwrap_err();
        assert!(matches!(err, Error::CostOutOfRange { state: 0, action: 1, .. }));
    }

    #[test]
    fn point_mass_reset() {
        let m = make_reset_to_observe(&base(), &[1.0, 0.0]).unwrap();
        let star = m.num_actions() - 1;
        for s in 0..2 {
            let p = m.phi(s, star).dot(&m.mu().column(0));
            assert!((p - 1.0).abs() < 1e-12);
            assert_eq!(m.reward(s, star), 0.0);
        }
        assert_eq!(m.betas(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn reset_must_be_a_distribution() {
        assert!(matches!(
            make_reset_to_observe(&base(), &[0.5, 0.4]),
            Err(Error::NonStochasticReset { .. })
        ));
    }

    #[test]
    fn base_rewards_survive_reset_construction() {
        let b = base();
        let m = make_reset_to_observe(&b, &[0.5, 0.5]).unwrap();
        for s in 0..2 {
            for a in 0..2 {
                assert!((m.reward(s, a) - b.reward(s, a)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn faulty_channel_sets_constant_beta() {
        let m = make_faulty_channel(&base(), 0.3);
        assert!(m.betas().iter().all(|&b| b == 0.3));
    }
}
