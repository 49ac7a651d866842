//! JSON model files.
//!
//! Two layouts are accepted. The tabular layout lists transition and reward
//! tables and is encoded with indicator features:
//!
//! ```json
//! { "states": ["s0", "s1"], "actions": ["go", "look"],
//!   "P": [[[0, 1], [1, 0]], [[1, 0], [0, 1]]],
//!   "r": [[0.1, 0.0], [0.9, 0.0]],
//!   "gamma": 0.8, "beta": [0.2, 1.0] }
//! ```
//!
//! The linear layout gives the features directly: `phi[s][a]` has length
//! `d`, `mu` has `d` rows of length `S`.
//!
//! ```json
//! { "d": 1, "phi": [[[1.0]]], "mu": [[1.0]], "theta": [0.5],
//!   "gamma": 0.5, "beta": [1.0] }
//! ```

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{encode_tabular, LinearAtstMdp};
use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TabularModelFile {
    pub states: Vec<String>,
    pub actions: Vec<String>,
    #[serde(rename = "P")]
    pub p: Vec<Vec<Vec<f64>>>,
    pub r: Vec<Vec<f64>>,
    pub gamma: f64,
    pub beta: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearModelFile {
    pub d: usize,
    pub phi: Vec<Vec<Vec<f64>>>,
    pub mu: Vec<Vec<f64>>,
    pub theta: Vec<f64>,
    pub gamma: f64,
    pub beta: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub states: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actions: Option<Vec<String>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelFile {
    Tabular(TabularModelFile),
    Linear(LinearModelFile),
}

impl ModelFile {
    pub fn into_model(self) -> Result<LinearAtstMdp> {
        match self {
            ModelFile::Tabular(t) => {
                if t.p.len() != t.states.len() {
                    return Err(Error::Dimension(format!(
                        "P lists {} states but `states` names {}",
                        t.p.len(),
                        t.states.len()
                    )));
                }
                if t.beta.len() != t.actions.len() {
                    return Err(Error::Dimension(format!(
                        "beta lists {} actions but `actions` names {}",
                        t.beta.len(),
                        t.actions.len()
                    )));
                }
                encode_tabular(&t.p, &t.r, t.gamma, t.beta)?.with_names(t.states, t.actions)
            }
            ModelFile::Linear(l) => {
                let phi = l
                    .phi
                    .into_iter()
                    .map(|row| row.into_iter().map(DVector::from_vec).collect())
                    .collect();
                let mu = linalg::from_rows(&l.mu)
                    .ok_or_else(|| Error::Dimension("mu rows have different lengths".into()))?;
                if mu.nrows() != l.d || l.theta.len() != l.d {
                    return Err(Error::Dimension(format!(
                        "declared d = {} but mu has {} rows and theta {} entries",
                        l.d,
                        mu.nrows(),
                        l.theta.len()
                    )));
                }
                let model = LinearAtstMdp::new(phi, mu, DVector::from_vec(l.theta), l.gamma, l.beta)?;
                match (l.states, l.actions) {
                    (None, None) => Ok(model),
                    (states, actions) => {
                        let states = states.unwrap_or_else(|| model.state_names().to_vec());
                        let actions = actions.unwrap_or_else(|| model.action_names().to_vec());
                        model.with_names(states, actions)
                    }
                }
            }
        }
    }

    /// The linear layout of an existing model.
    pub fn from_model(model: &LinearAtstMdp) -> Self {
        let mu: &DMatrix<f64> = model.mu();
        ModelFile::Linear(LinearModelFile {
            d: model.dim(),
            phi: (0..model.num_states())
                .map(|s| {
                    (0..model.num_actions())
                        .map(|a| linalg::to_vec(model.phi(s, a)))
                        .collect()
                })
                .collect(),
            mu: linalg::to_rows(mu),
            theta: linalg::to_vec(model.theta()),
            gamma: model.gamma(),
            beta: model.betas().to_vec(),
            states: Some(model.state_names().to_vec()),
            actions: Some(model.action_names().to_vec()),
        })
    }
}

/// Reads and validates a model file.
pub fn load_model(path: impl AsRef<Path>) -> Result<LinearAtstMdp> {
    let text = std::fs::read_to_string(path)?;
    let file: ModelFile = serde_json::from_str(&text)?;
    file.into_model()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tabular_layout_parses() {
        let text = r#"{ "states": ["s0", "s1"], "actions": ["go", "look"],
          "P": [[[0, 1], [1, 0]], [[1, 0], [0, 1]]],
          "r": [[0.1, 0.0], [0.9, 0.0]], "gamma": 0.8, "beta": [0.2, 1.0] }"#;
        let m = serde_json::from_str::<ModelFile>(text).unwrap().into_model().unwrap();
        assert_eq!(m.dim(), 4);
        assert_eq!(m.action_names(), &["go".to_string(), "look".to_string()]);
        assert!((m.reward(1, 0) - 0.9).abs() < 1e-15);
    }

    #[test]
    fn linear_layout_parses() {
        let text = r#"{ "d": 1, "phi": [[[1.0]]], "mu": [[1.0]], "theta": [0.5],
          "gamma": 0.5, "beta": [1.0] }"#;
        let m = serde_json::from_str::<ModelFile>(text).unwrap().into_model().unwrap();
        assert_eq!(m.num_states(), 1);
        assert_eq!(m.reward(0, 0), 0.5);
    }

    #[test]
    fn first_violation_carries_cell_index() {
        let text = r#"{ "states": ["a", "b"], "actions": ["x"],
          "P": [[[0.5, 0.5]], [[0.3, 0.3]]], "r": [[0.1], [0.2]], "gamma": 0.8, "beta": [1.0] }"#;
        let err = serde_json::from_str::<ModelFile>(text).unwrap().into_model().unwrap_err();
        assert!(matches!(err, Error::NonStochasticKernel { state: 1, action: 0, .. }));
    }

    #[test]
    fn linear_round_trip() {
        let text = r#"{ "states": ["a", "b"], "actions": ["x", "y"],
          "P": [[[0.5, 0.5], [1, 0]], [[0.3, 0.7], [0, 1]]], "r": [[0.1, 1], [0.2, 0]],
          "gamma": 0.8, "beta": [1.0, 0.25] }"#;
        let m = serde_json::from_str::<ModelFile>(text).unwrap().into_model().unwrap();
        let again = ModelFile::from_model(&m);
        let json = serde_json::to_string(&again).unwrap();
        let m2 = serde_json::from_str::<ModelFile>(&json).unwrap().into_model().unwrap();
        assert_eq!(m2.state_names(), m.state_names());
        for s in 0..2 {
            for a in 0..2 {
                assert_eq!(m2.transition(s, a), m.transition(s, a));
            }
        }
    }
}
