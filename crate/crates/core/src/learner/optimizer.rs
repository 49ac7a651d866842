//! Maximization over repeat-last sequences with a fixed prefix length.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sequence::ActionSequence;

/// Scores closer than this count as ties.
pub const TIE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchStrategy {
    /// Exhaustive when `A^L` fits the node budget, beam search otherwise.
    Auto,
    Exhaustive,
    Beam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    /// Prefix length `L_opt`.
    pub search_depth: usize,
    pub strategy: SearchStrategy,
    pub beam_width: usize,
    /// Largest family enumerated exhaustively.
    pub node_budget: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            search_depth: 4,
            strategy: SearchStrategy::Auto,
            beam_width: 64,
            node_budget: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub best: ActionSequence,
    pub score: f64,
    /// Distinct sequences scored.
    pub nodes: usize,
}

/// Every length-`depth` prefix in lexicographic order, continued by repeating
/// its last action. Equivalent prefixes keep their first occurrence only.
pub fn exhaustive_family(n_actions: usize, depth: usize) -> Vec<ActionSequence> {
    let total = n_actions.pow(depth as u32);
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for code in 0..total {
        let mut prefix = vec![0; depth];
        let mut c = code;
        for slot in prefix.iter_mut().rev() {
            *slot = c % n_actions;
            c /= n_actions;
        }
        let seq = ActionSequence::repeat_last(prefix).canonical();
        if seen.insert(seq.clone()) {
            out.push(seq);
        }
    }
    out
}

/// Searches the repeat-last family for the highest score.
#[derive(Debug, Clone)]
pub struct SequenceOptimizer {
    cfg: OptimizerConfig,
    n_actions: usize,
    family: Option<Vec<ActionSequence>>,
}

impl SequenceOptimizer {
    pub fn new(cfg: OptimizerConfig, n_actions: usize) -> Result<Self> {
        if cfg.search_depth == 0 {
            return Err(Error::invalid("opt.search_depth", "must be at least 1"));
        }
        if cfg.beam_width == 0 {
            return Err(Error::invalid("opt.beam_width", "must be at least 1"));
        }
        if n_actions == 0 {
            return Err(Error::invalid("n_actions", "need at least one action"));
        }
        let total = (n_actions as u128)
            .checked_pow(cfg.search_depth as u32)
            .unwrap_or(u128::MAX);
        let fits = total <= cfg.node_budget as u128;
        let exhaustive = match cfg.strategy {
            SearchStrategy::Auto => fits,
            SearchStrategy::Beam => false,
            SearchStrategy::Exhaustive if fits => true,
            SearchStrategy::Exhaustive => {
                return Err(Error::OptimizerBudgetExceeded {
                    nodes: total,
                    budget: cfg.node_budget,
                })
            }
        };
        let family = exhaustive.then(|| exhaustive_family(n_actions, cfg.search_depth));
        Ok(Self {
            cfg,
            n_actions,
            family,
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.cfg
    }

    pub fn is_exhaustive(&self) -> bool {
        self.family.is_some()
    }

    /// The enumerated family, if the search is exhaustive.
    pub fn family(&self) -> Option<&[ActionSequence]> {
        self.family.as_deref()
    }

    /// Highest-scoring sequence. Among scores within [`TIE_TOL`] of the best,
    /// the lexicographically smallest prefix wins.
    pub fn maximize(&self, mut score: impl FnMut(&ActionSequence) -> f64) -> SearchResult {
        match &self.family {
            Some(family) => {
                let scores: Vec<f64> = family.iter().map(&mut score).collect();
                pick(family.iter().cloned().zip(scores).collect(), family.len())
            }
            None => self.beam(score),
        }
    }

    fn beam(&self, mut score: impl FnMut(&ActionSequence) -> f64) -> SearchResult {
        let depth = self.cfg.search_depth;
        let mut evaluated: Vec<(ActionSequence, f64)> = Vec::new();
        let mut seen: HashMap<ActionSequence, f64> = HashMap::new();
        let mut frontier: Vec<Vec<usize>> = vec![Vec::new()];
        for _ in 0..depth {
            let mut level = Vec::new();
            for prefix in &frontier {
                for a in 0..self.n_actions {
                    let mut p = prefix.clone();
                    p.push(a);
                    let canon = ActionSequence::repeat_last(p.clone()).canonical();
                    let value = match seen.get(&canon) {
                        Some(&v) => v,
                        None => {
                            let v = score(&canon);
                            seen.insert(canon.clone(), v);
                            evaluated.push((canon, v));
                            v
                        }
                    };
                    level.push((p, value));
                }
            }
            // stable: equal scores keep lexicographic order
            level.sort_by(|x, y| y.1.total_cmp(&x.1));
            level.truncate(self.cfg.beam_width);
            level.sort_by(|x, y| x.0.cmp(&y.0));
            frontier = level.into_iter().map(|(p, _)| p).collect();
        }
        let nodes = evaluated.len();
        evaluated.sort_by_cached_key(|x| padded(&x.0, depth));
        pick(evaluated, nodes)
    }
}

/// Index of the winning score under the tie rule of
/// [`SequenceOptimizer::maximize`], for scores listed in family order.
pub fn best_index(scores: &[f64]) -> usize {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    scores
        .iter()
        .position(|&v| v >= max - TIE_TOL)
        .expect("non-empty family")
}

fn padded(seq: &ActionSequence, depth: usize) -> Vec<usize> {
    (0..depth.max(seq.prefix().len())).map(|k| seq.action_at(k)).collect()
}

/// `candidates` must be in lexicographic order.
fn pick(candidates: Vec<(ActionSequence, f64)>, nodes: usize) -> SearchResult {
    let max = candidates
        .iter()
        .map(|(_, v)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    let (best, score) = candidates
        .into_iter()
        .find(|(_, v)| *v >= max - TIE_TOL)
        .expect("non-empty family");
    SearchResult { best, score, nodes }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn family_sizes() {
        // distinct length-3 prefixes give distinct sequences
        let f = exhaustive_family(2, 3);
        assert_eq!(f.len(), 8);
        assert_eq!(f[0], ActionSequence::constant(0));
        let f = exhaustive_family(3, 1);
        assert_eq!(f.len(), 3);
    }

    #[test]
    fn ties_go_to_the_smallest_prefix() {
        let opt = SequenceOptimizer::new(OptimizerConfig::default(), 2).unwrap();
        let r = opt.maximize(|_| 1.0);
        assert_eq!(r.best, ActionSequence::constant(0));
        let r = opt.maximize(|s| if s.first() == 1 { 2.0 } else { 1.0 });
        assert_eq!(r.best, ActionSequence::repeat_last(vec![1, 0]));
    }

    #[test]
    fn beam_matches_exhaustive_on_separable_scores() {
        let target = [2, 0, 1, 1];
        let score = |s: &ActionSequence| {
            (0..4)
                .map(|k| if s.action_at(k) == target[k] { 0.5f64.powi(k as i32) } else { 0.0 })
                .sum::<f64>()
        };
        let ex = SequenceOptimizer::new(OptimizerConfig::default(), 3).unwrap();
        let beam = SequenceOptimizer::new(
            OptimizerConfig {
                strategy: SearchStrategy::Beam,
                beam_width: 2,
                ..Default::default()
            },
            3,
        )
        .unwrap();
        assert!(!beam.is_exhaustive());
        let (a, b) = (ex.maximize(score), beam.maximize(score));
        assert_eq!(a.best, b.best);
        assert_eq!(a.best, ActionSequence::repeat_last(vec![2, 0, 1]));
        assert!(b.nodes < a.nodes);
    }

    #[test]
    fn exhaustive_over_budget_is_an_error() {
        let cfg = OptimizerConfig {
            strategy: SearchStrategy::Exhaustive,
            search_depth: 20,
            ..Default::default()
        };
        assert!(matches!(
            SequenceOptimizer::new(cfg, 3),
            Err(Error::OptimizerBudgetExceeded { .. })
        ));
        let auto = OptimizerConfig {
            search_depth: 20,
            ..Default::default()
        };
        assert!(!SequenceOptimizer::new(auto, 3).unwrap().is_exhaustive());
    }
}
