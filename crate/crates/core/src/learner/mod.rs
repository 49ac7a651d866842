//! Optimistic least-squares value iteration over burst indices.
//!
//! At the start of every episode the learner regresses burst-to-burst returns
//! on the sequence feature `psi(s, seq)`, sweeping backwards over the burst
//! index `u = H-1, ..., 1`:
//!
//! ```text
//! w_u    = Λ^{-1} Σ_τ psi_τ [min(R_τ, H) + max_seq K_{u+1}(s'_τ, seq)]
//! K_u    = clip_[0, 1/(1-γ)] ( <psi, w_u> + rho ||psi||_{Λ^{-1}} )
//! ```
//!
//! with `K_H ≡ 1/(1-γ)` and `K ≡ 0` after termination. While acting it
//! commits, at each burst, to the sequence maximizing the unclipped score.

mod optimizer;
mod run;

use std::collections::HashMap;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::CommittedSequencePolicy;
use crate::feature::PsiEngine;
use crate::sequence::ActionSequence;

pub use optimizer::{
    best_index, exhaustive_family, OptimizerConfig, SearchResult, SearchStrategy,
    SequenceOptimizer, TIE_TOL,
};
pub use run::{run_learning, InitialSchedule, RegretLog, RegretRow};

/// Best sequence and its score for a state under given weights.
type Scorer<'a> = Box<dyn FnMut(usize, &DVector<f64>) -> (ActionSequence, f64) + 'a>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    /// Effective horizon `H`: value-iteration depth, bursts kept per episode
    /// and reward cap.
    pub horizon: usize,
    pub lambda: f64,
    pub rho: f64,
    pub opt: OptimizerConfig,
    /// Maintain the Gram matrix by rank-one updates instead of rebuilding it
    /// from the history at every episode.
    pub incremental_gram: bool,
}

impl LearnerConfig {
    /// `H = ceil(ln(K / (1-γ)) / (1-γ)) + 1`.
    pub fn default_horizon(gamma: f64, episodes: usize) -> usize {
        let h = ((episodes as f64 / (1.0 - gamma)).ln() / (1.0 - gamma)).ceil();
        (h.max(1.0) as usize) + 1
    }

    /// `rho = c_rho d H sqrt(ln(2 d K H / p))`.
    pub fn default_rho(c_rho: f64, d: usize, horizon: usize, episodes: usize, p: f64) -> f64 {
        let iota = (2.0 * d as f64 * episodes as f64 * horizon as f64 / p).ln();
        c_rho * d as f64 * horizon as f64 * iota.sqrt()
    }

    /// Horizon and bonus from the episode budget, `lambda = 1`.
    pub fn for_episodes(d: usize, gamma: f64, episodes: usize, p: f64, c_rho: f64) -> Self {
        let horizon = Self::default_horizon(gamma, episodes);
        Self {
            horizon,
            lambda: 1.0,
            rho: Self::default_rho(c_rho, d, horizon, episodes, p),
            opt: OptimizerConfig::default(),
            incremental_gram: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon < 2 {
            return Err(Error::invalid("learner.horizon", "must be at least 2"));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("learner.lambda", "must be positive"));
        }
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return Err(Error::invalid("learner.rho", "must be non-negative"));
        }
        Ok(())
    }
}

/// One effective-history entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryTuple {
    pub state: usize,
    pub seq: ActionSequence,
    /// Reward capped at `H`.
    pub reward: f64,
    pub next: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct LearnerState {
    pub gram: DMatrix<f64>,
    pub history: Vec<HistoryTuple>,
    /// Episodes started so far; the current episode index.
    pub episode: usize,
    bursts_this_episode: usize,
}

impl LearnerState {
    pub fn bursts_this_episode(&self) -> usize {
        self.bursts_this_episode
    }
}

/// Output of one planning sweep.
#[derive(Debug, Clone)]
pub struct EpisodePlan {
    /// `weights[u]` for `u = 1..H-1`; slot 0 is unused.
    pub weights: Vec<DVector<f64>>,
    /// `values[u][s] = max_seq K_u(s, seq)` for `u = 1..=H`.
    pub values: Vec<Vec<f64>>,
    pub policy: CommittedSequencePolicy,
    /// Sequences scored while planning.
    pub nodes: usize,
    /// Objective lost by searching a truncated family, at worst.
    pub family_gap: f64,
    chol: Cholesky<f64, Dyn>,
}

pub struct StLsviUcb<'e> {
    engine: &'e PsiEngine,
    cfg: LearnerConfig,
    optimizer: SequenceOptimizer,
    state: LearnerState,
    history_psi: Vec<DVector<f64>>,
    /// `family_psi[s][i]` when the optimizer is exhaustive.
    family_psi: Vec<Vec<DVector<f64>>>,
    psi_cache: HashMap<(usize, ActionSequence), DVector<f64>>,
    plan: Option<EpisodePlan>,
    reused_bursts: usize,
}

impl<'e> StLsviUcb<'e> {
    pub fn new(engine: &'e PsiEngine, cfg: LearnerConfig) -> Result<Self> {
        cfg.validate()?;
        let optimizer = SequenceOptimizer::new(cfg.opt.clone(), engine.num_actions())?;
        let family_psi = match optimizer.family() {
            Some(family) => (0..engine.num_states())
                .map(|s| family.iter().map(|seq| engine.psi_state(s, seq)).collect())
                .collect(),
            None => Vec::new(),
        };
        let k = 2 * engine.dim();
        Ok(Self {
            engine,
            state: LearnerState {
                gram: DMatrix::identity(k, k) * cfg.lambda,
                history: Vec::new(),
                episode: 0,
                bursts_this_episode: 0,
            },
            cfg,
            optimizer,
            history_psi: Vec::new(),
            family_psi,
            psi_cache: HashMap::new(),
            plan: None,
            reused_bursts: 0,
        })
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.cfg
    }

    pub fn state(&self) -> &LearnerState {
        &self.state
    }

    pub fn current_plan(&self) -> Option<&EpisodePlan> {
        self.plan.as_ref()
    }

    /// Bursts that ran past index `H-1` and reused its weights.
    pub fn reused_bursts(&self) -> usize {
        self.reused_bursts
    }

    fn psi(&mut self, s: usize, seq: &ActionSequence) -> DVector<f64> {
        let engine = self.engine;
        self.psi_cache
            .entry((s, seq.canonical()))
            .or_insert_with(|| engine.psi_state(s, seq))
            .clone()
    }

    /// `lambda I + Σ psi psi^T` over the effective history.
    pub fn rebuild_gram(&self) -> DMatrix<f64> {
        let k = 2 * self.engine.dim();
        let mut gram = DMatrix::identity(k, k) * self.cfg.lambda;
        for p in &self.history_psi {
            gram.ger(1.0, p, p, 1.0);
        }
        gram
    }

    /// Starts the next episode and plans for it.
    pub fn begin_episode(&mut self) -> Result<&EpisodePlan> {
        self.state.episode += 1;
        self.state.bursts_this_episode = 0;
        self.plan()
    }

    /// Backward sweep over `u = H-1, ..., 1` for the current history.
    pub fn plan(&mut self) -> Result<&EpisodePlan> {
        let engine = self.engine;
        let (n_states, k) = (engine.num_states(), 2 * engine.dim());
        let h = self.cfg.horizon;
        let v_max = 1.0 / (1.0 - engine.gamma());
        if !self.cfg.incremental_gram {
            self.state.gram = self.rebuild_gram();
        }
        let chol = Cholesky::new(self.state.gram.clone())
            .ok_or_else(|| Error::invalid("gram", "not positive definite"))?;

        // regression right-hand side split by successor state
        let mut rhs_reward = DVector::zeros(k);
        let mut rhs_next = vec![DVector::zeros(k); n_states];
        for (t, p) in self.state.history.iter().zip(&self.history_psi) {
            rhs_reward.axpy(t.reward, p, 1.0);
            if let Some(s) = t.next {
                rhs_next[s] += p;
            }
        }

        let rho = self.cfg.rho;
        let bonus = |p: &DVector<f64>| rho * p.dot(&chol.solve(p)).max(0.0).sqrt();
        let mut nodes = 0usize;
        let mut scorer: Scorer<'_> =
            if let Some(family) = self.optimizer.family() {
                let bonuses: Vec<Vec<f64>> = self
                    .family_psi
                    .iter()
                    .map(|row| row.iter().map(bonus).collect())
                    .collect();
                let family_psi = &self.family_psi;
                let nodes = &mut nodes;
                Box::new(move |s, w| {
                    let scores: Vec<f64> = family_psi[s]
                        .iter()
                        .zip(&bonuses[s])
                        .map(|(p, b)| p.dot(w) + b)
                        .collect();
                    *nodes += scores.len();
                    let i = best_index(&scores);
                    (family[i].clone(), scores[i])
                })
            } else {
                let optimizer = &self.optimizer;
                let cache = &mut self.psi_cache;
                let mut bonus_cache: HashMap<(usize, ActionSequence), f64> = HashMap::new();
                let nodes = &mut nodes;
                Box::new(move |s, w| {
                    let r = optimizer.maximize(|seq| {
                        let p = cache
                            .entry((s, seq.clone()))
                            .or_insert_with(|| engine.psi_state(s, seq));
                        let b = *bonus_cache
                            .entry((s, seq.clone()))
                            .or_insert_with(|| bonus(p));
                        p.dot(w) + b
                    });
                    *nodes += r.nodes;
                    (r.best, r.score)
                })
            };

        let mut weights = vec![DVector::zeros(k); h];
        let mut values = vec![vec![0.0; n_states]; h + 1];
        values[h] = vec![v_max; n_states];
        let mut table = vec![Vec::new(); h - 1];
        for u in (1..h).rev() {
            let mut rhs = rhs_reward.clone();
            for (s, g) in rhs_next.iter().enumerate() {
                rhs.axpy(values[u + 1][s], g, 1.0);
            }
            let w = chol.solve(&rhs);
            let mut row = Vec::with_capacity(n_states);
            for s in 0..n_states {
                let (seq, score) = scorer(s, &w);
                values[u][s] = score.clamp(0.0, v_max);
                row.push(seq);
            }
            table[u - 1] = row;
            weights[u] = w;
        }
        drop(scorer);

        let episode = self.state.episode.max(1) as f64;
        let d = engine.dim() as f64;
        let max_w = weights.iter().map(|w| w.norm()).fold(0.0, f64::max);
        if h as f64 >= v_max {
            let bound = 4.0 * (d * episode * (h as f64).powi(3) / self.cfg.lambda).sqrt();
            assert!(
                max_w <= bound * (1.0 + 1e-9),
                "weight norm {max_w} exceeds {bound}"
            );
        }
        let family_gap =
            2.0 * engine.series().tail_bound * (max_w + rho / self.cfg.lambda.sqrt());
        tracing::debug!(
            episode = self.state.episode,
            nodes,
            family_gap,
            history = self.state.history.len(),
            "planned"
        );
        self.plan = Some(EpisodePlan {
            weights,
            values,
            policy: CommittedSequencePolicy::new(table)?,
            nodes,
            family_gap,
            chol,
        });
        Ok(self.plan.as_ref().expect("just set"))
    }

    /// Unclipped `<psi, w_u> + rho ||psi||_{Λ^{-1}}` under the current plan.
    pub fn score(&mut self, u: usize, s: usize, seq: &ActionSequence) -> f64 {
        let p = self.psi(s, seq);
        let plan = self.plan.as_ref().expect("plan before scoring");
        let u = u.clamp(1, self.cfg.horizon - 1);
        plan.weights[u].dot(&p) + self.cfg.rho * p.dot(&plan.chol.solve(&p)).max(0.0).sqrt()
    }

    /// `K_u(s, seq)`, clipped to `[0, 1/(1-γ)]`.
    pub fn k_value(&mut self, u: usize, s: usize, seq: &ActionSequence) -> f64 {
        let v_max = 1.0 / (1.0 - self.engine.gamma());
        self.score(u, s, seq).clamp(0.0, v_max)
    }

    /// Sequence to commit to at burst index `u` (from 1) in state `s`.
    /// Indices past `H-1` reuse the weights of `H-1`.
    pub fn select_sequence(&mut self, u: usize, s: usize) -> ActionSequence {
        if u >= self.cfg.horizon {
            self.reused_bursts += 1;
            tracing::trace!(u, "burst index past horizon, reusing last weights");
        }
        let plan = self.plan.as_ref().expect("plan before acting");
        plan.policy.sequence(u, s).clone()
    }

    /// Records one burst of the current episode.
    pub fn observe_burst(
        &mut self,
        s_prev: usize,
        seq: &ActionSequence,
        reward: f64,
        s_next: Option<usize>,
    ) {
        let h = self.cfg.horizon;
        self.state.bursts_this_episode += 1;
        if self.state.bursts_this_episode > h {
            return;
        }
        let p = self.psi(s_prev, seq);
        if self.cfg.incremental_gram {
            self.state.gram.ger(1.0, &p, &p, 1.0);
        }
        self.history_psi.push(p);
        self.state.history.push(HistoryTuple {
            state: s_prev,
            seq: seq.canonical(),
            reward: reward.min(h as f64),
            next: s_next,
        });
    }
}
