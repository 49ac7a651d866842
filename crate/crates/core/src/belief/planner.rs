//! Value iteration from `V ≡ 0` evaluated only where it is needed.
//!
//! `n` applications of the optimality operator, read at a bare state, touch
//! augmented states of depth below `n`. Their values depend on an augmented
//! state only through its extended feature, so states are merged whenever
//! their features coincide (up to rounding at `1e-11`). Actions that always
//! reveal the state (`beta = 1`) never lead to a deeper augmented state.
//! On models with one blind action this turns an `A^n` tree into a chain.

use std::collections::HashMap;
use std::io::Write;

use nalgebra::DVector;

use super::{belief_from_feature, ActionMatrixSet};
use crate::error::{Error, Result};
use crate::model::LinearAtstMdp;
use crate::sequence::AugmentedState;

/// Default cap on distinct belief nodes.
pub const DEFAULT_NODE_BUDGET: usize = 1_000_000;

/// Ties closer than this are broken towards the lower action index.
const TIE_TOL: f64 = 1e-12;

const KEY_SCALE: f64 = 1e11;

/// Iterations `⌈ln(1 / (eps (1 - gamma))) / (1 - gamma)⌉` after which value
/// iteration from zero is within `eps` of the fixed point.
pub fn planning_iterations(gamma: f64, eps: f64) -> usize {
    ((1.0 / (eps * (1.0 - gamma))).ln() / (1.0 - gamma)).ceil().max(1.0) as usize
}

fn feature_key(f: &DVector<f64>) -> Vec<i64> {
    f.iter().map(|x| (x * KEY_SCALE).round() as i64).collect()
}

/// One step from a node under one action.
#[derive(Debug, Clone)]
struct Edge {
    reward: f64,
    belief: Vec<f64>,
    /// Node reached when the action does not reveal the state.
    child: Option<usize>,
}

#[derive(Debug, Clone)]
struct Node {
    feature: DVector<f64>,
    edges: Vec<Edge>,
}

/// Result of [`optimal_values`].
#[derive(Debug, Clone)]
pub struct OptimalPlan {
    mdp: LinearAtstMdp,
    ams: ActionMatrixSet,
    iterations: usize,
    values: Vec<f64>,
    prev_state_values: Vec<f64>,
    prev_node_values: Vec<f64>,
    state_edges: Vec<Vec<Edge>>,
    index: HashMap<Vec<i64>, usize>,
    node_count: usize,
}

/// `n` iterations of the optimality operator from zero, read on bare states,
/// with augmented states up to depth `depth_cap >= n`.
pub fn optimal_values(
    mdp: &LinearAtstMdp,
    ams: &ActionMatrixSet,
    iterations: usize,
    depth_cap: usize,
) -> Result<OptimalPlan> {
    optimal_values_with_budget(mdp, ams, iterations, depth_cap, DEFAULT_NODE_BUDGET)
}

pub fn optimal_values_with_budget(
    mdp: &LinearAtstMdp,
    ams: &ActionMatrixSet,
    iterations: usize,
    depth_cap: usize,
    node_budget: usize,
) -> Result<OptimalPlan> {
    if depth_cap < iterations {
        return Err(Error::invalid(
            "depth_cap",
            format!("{depth_cap} is smaller than the iteration count {iterations}"),
        ));
    }
    let (n_states, n_actions) = (mdp.num_states(), mdp.num_actions());
    let gamma = mdp.gamma();
    let max_node_depth = iterations.saturating_sub(1);

    let mut nodes: Vec<Node> = Vec::new();
    let mut index: HashMap<Vec<i64>, usize> = HashMap::new();
    let mut frontier: Vec<usize> = Vec::new();

    let mut intern = |feature: DVector<f64>,
                      nodes: &mut Vec<Node>,
                      frontier: &mut Vec<usize>|
     -> Result<usize> {
        let key = feature_key(&feature);
        if let Some(&id) = index.get(&key) {
            return Ok(id);
        }
        if nodes.len() >= node_budget {
            return Err(Error::PlanningTooLarge {
                nodes: nodes.len() + 1,
                budget: node_budget,
            });
        }
        let id = nodes.len();
        index.insert(key, id);
        nodes.push(Node {
            feature,
            edges: Vec::new(),
        });
        frontier.push(id);
        Ok(id)
    };

    let mut state_edges = Vec::with_capacity(n_states);
    for s in 0..n_states {
        let mut edges = Vec::with_capacity(n_actions);
        for a in 0..n_actions {
            let child = if mdp.beta(a) < 1.0 && max_node_depth >= 1 {
                Some(intern(mdp.phi(s, a).clone(), &mut nodes, &mut frontier)?)
            } else {
                None
            };
            edges.push(Edge {
                reward: mdp.reward(s, a),
                belief: mdp.transition(s, a).to_vec(),
                child,
            });
        }
        state_edges.push(edges);
    }

    // Breadth-first, so every node is first met at its smallest depth.
    let mut depth = 1;
    while !frontier.is_empty() {
        let layer = std::mem::take(&mut frontier);
        for id in layer {
            let feature = nodes[id].feature.clone();
            let mut edges = Vec::with_capacity(n_actions);
            for a in 0..n_actions {
                let g = ams.get(a).tr_mul(&feature);
                let child = if mdp.beta(a) < 1.0 && depth < max_node_depth {
                    Some(intern(g.clone(), &mut nodes, &mut frontier)?)
                } else {
                    None
                };
                edges.push(Edge {
                    reward: g.dot(mdp.theta()),
                    belief: belief_from_feature(mdp, &g)?,
                    child,
                });
            }
            nodes[id].edges = edges;
        }
        depth += 1;
    }

    let backup = |edges: &[Edge], states: &[f64], node_vals: &[f64]| -> f64 {
        edges
            .iter()
            .enumerate()
            .map(|(a, e)| q_value(e, mdp.beta(a), gamma, states, node_vals))
            .fold(f64::NEG_INFINITY, f64::max)
    };

    let mut state_vals = vec![0.0; n_states];
    let mut node_vals = vec![0.0; nodes.len()];
    let mut prev_state_values = state_vals.clone();
    let mut prev_node_values = node_vals.clone();
    for _ in 0..iterations {
        let next_states: Vec<f64> = state_edges
            .iter()
            .map(|edges| backup(edges, &state_vals, &node_vals))
            .collect();
        let next_nodes: Vec<f64> = nodes
            .iter()
            .map(|n| backup(&n.edges, &state_vals, &node_vals))
            .collect();
        prev_state_values = std::mem::replace(&mut state_vals, next_states);
        prev_node_values = std::mem::replace(&mut node_vals, next_nodes);
    }

    let node_count = nodes.len();
    Ok(OptimalPlan {
        mdp: mdp.clone(),
        ams: ams.clone(),
        iterations,
        values: state_vals,
        prev_state_values,
        prev_node_values,
        state_edges,
        index,
        node_count,
    })
}

fn q_value(edge: &Edge, beta: f64, gamma: f64, states: &[f64], node_vals: &[f64]) -> f64 {
    let expected: f64 = edge.belief.iter().zip(states).map(|(p, v)| p * v).sum();
    let continuation = edge.child.map_or(0.0, |c| node_vals[c]);
    edge.reward + gamma * beta * expected + gamma * (1.0 - beta) * continuation
}

fn argmax_lex(q: &[f64]) -> usize {
    let best = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    q.iter().position(|&v| v >= best - TIE_TOL).unwrap_or(0)
}

impl OptimalPlan {
    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// `V_n` on bare states.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, state: usize) -> f64 {
        self.values[state]
    }

    /// Sup-norm distance to the true optimal values, `gamma^n / (1 - gamma)`.
    pub fn error_bound(&self) -> f64 {
        self.mdp.gamma().powi(self.iterations as i32) / (1.0 - self.mdp.gamma())
    }

    /// Distinct belief nodes that were evaluated.
    pub fn node_count(&self) -> usize {
        self.node_count
    }

    fn state_q(&self, state: usize) -> Vec<f64> {
        let gamma = self.mdp.gamma();
        self.state_edges[state]
            .iter()
            .enumerate()
            .map(|(a, e)| {
                q_value(e, self.mdp.beta(a), gamma, &self.prev_state_values, &self.prev_node_values)
            })
            .collect()
    }

    /// Greedy first action at a freshly observed state.
    pub fn greedy_first_action(&self, state: usize) -> usize {
        argmax_lex(&self.state_q(state))
    }

    /// Action of the policy that is greedy with respect to `V_{n-1}` at any
    /// augmented state. Children that were never expanded count as zero.
    ///
    /// # Panics
    /// On the termination sentinel.
    pub fn greedy_action(&self, x: &AugmentedState) -> usize {
        let s = x.anchor().expect("no action is taken at the sentinel");
        if x.depth() == 0 {
            return self.greedy_first_action(s);
        }
        let f = super::extended_feature(&self.mdp, &self.ams, x)
            .expect("non-empty tail with an anchor");
        let gamma = self.mdp.gamma();
        let q: Vec<f64> = (0..self.mdp.num_actions())
            .map(|a| {
                let g = self.ams.get(a).tr_mul(&f);
                let beta = self.mdp.beta(a);
                let belief = belief_from_feature(&self.mdp, &g).unwrap_or_else(|_| {
                    self.mdp.mu().tr_mul(&g).iter().map(|p| p.max(0.0)).collect()
                });
                let expected: f64 = belief
                    .iter()
                    .zip(&self.prev_state_values)
                    .map(|(p, v)| p * v)
                    .sum();
                let continuation = self
                    .index
                    .get(&feature_key(&g))
                    .map_or(0.0, |&id| self.prev_node_values[id]);
                g.dot(self.mdp.theta())
                    + gamma * beta * expected
                    + gamma * (1.0 - beta) * continuation
            })
            .collect();
        argmax_lex(&q)
    }
}

/// Writes `state, V_star, greedy_first_action` rows.
pub fn write_oracle_csv<W: Write>(mdp: &LinearAtstMdp, plan: &OptimalPlan, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["state", "V_star", "greedy_first_action"])?;
    for s in 0..mdp.num_states() {
        w.write_record([
            mdp.state_names()[s].clone(),
            format!("{:.12}", plan.value(s)),
            mdp.action_names()[plan.greedy_first_action(s)].clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
