use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{LearnerConfig, StLsviUcb};
use crate::error::{Error, Result};
use crate::eval::RegretOracle;
use crate::feature::PsiEngine;
use crate::model::LinearAtstMdp;
use crate::sim::{purpose, run_episode, RunSeed};

/// How the first state of each episode is chosen.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialSchedule {
    Fixed(usize),
    /// Episode `k` starts in `states[(k - 1) % len]`.
    Cyclic(Vec<usize>),
}

impl Default for InitialSchedule {
    fn default() -> Self {
        Self::Fixed(0)
    }
}

impl InitialSchedule {
    /// Start state of episode `k` (from 1).
    pub fn state(&self, k: usize) -> usize {
        match self {
            Self::Fixed(s) => *s,
            Self::Cyclic(states) => states[(k - 1) % states.len()],
        }
    }

    pub fn validate(&self, n_states: usize) -> Result<()> {
        let ok = match self {
            Self::Fixed(s) => *s < n_states,
            Self::Cyclic(states) => !states.is_empty() && states.iter().all(|&s| s < n_states),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("initial", "states must be non-empty and in range"))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretRow {
    pub episode: usize,
    pub realized_reward: f64,
    #[serde(rename = "V_star_s1")]
    pub v_star_s1: Option<f64>,
    #[serde(rename = "V_pik_s1")]
    pub v_pik_s1: Option<f64>,
    pub regret_contrib: Option<f64>,
    pub planning_ms: f64,
    pub opt_nodes: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RegretLog {
    pub rows: Vec<RegretRow>,
}

impl RegretLog {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let rows = r.deserialize().collect::<std::result::Result<_, _>>()?;
        Ok(Self { rows })
    }

    /// Per-episode regret; episodes without an oracle value count as zero.
    pub fn regrets(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.regret_contrib.unwrap_or(0.0)).collect()
    }

    pub fn cumulative_regret(&self) -> Vec<f64> {
        self.regrets()
            .iter()
            .scan(0.0, |acc, r| {
                *acc += r;
                Some(*acc)
            })
            .collect()
    }

    /// Mean regret over episodes `first..=last` (from 1).
    pub fn mean_regret(&self, first: usize, last: usize) -> f64 {
        let r = self.regrets();
        let slice = &r[first - 1..last.min(r.len())];
        slice.iter().sum::<f64>() / slice.len() as f64
    }
}

/// Runs `episodes` episodes of the learner against `mdp`.
///
/// Episode `k` draws from stream `(run, EPISODE, k)` of `seed`. When `oracle`
/// is given, every episode's deployed policy is evaluated exactly and its
/// shortfall from `V*` is logged.
pub fn run_learning(
    mdp: &LinearAtstMdp,
    engine: &PsiEngine,
    episodes: usize,
    schedule: &InitialSchedule,
    cfg: &LearnerConfig,
    seed: RunSeed,
    mut oracle: Option<&mut RegretOracle<'_>>,
) -> Result<RegretLog> {
    schedule.validate(mdp.num_states())?;
    if engine.num_states() != mdp.num_states() || engine.num_actions() != mdp.num_actions() {
        return Err(Error::Dimension("engine and model disagree on S or A".into()));
    }
    if let Some(eps) = engine.admissibility() {
        let target = ((1.0 - mdp.gamma()) / episodes.max(1) as f64).sqrt();
        if eps > target {
            tracing::warn!(eps, target, "feature map is coarser than the episode budget allows");
        }
    }
    let mut learner = StLsviUcb::new(engine, cfg.clone())?;
    let mut log = RegretLog::default();
    for k in 1..=episodes {
        let started = Instant::now();
        let plan = learner.begin_episode()?;
        let planning_ms = started.elapsed().as_secs_f64() * 1e3;
        let opt_nodes = plan.nodes;
        let s1 = schedule.state(k);
        let (v_star, v_pi) = match oracle.as_deref_mut() {
            Some(o) => {
                let (a, b) = o.regret(&plan.policy, s1)?;
                (Some(a), Some(b))
            }
            None => (None, None),
        };
        let mut rng = seed.rng(purpose::EPISODE, k as u64);
        let transcript = run_episode(mdp, s1, |s, u| learner.select_sequence(u + 1, s), &mut rng);
        for b in &transcript.bursts {
            learner.observe_burst(b.observed_state, &b.action_seq, b.aggregated_reward, b.next_observed);
        }
        log.rows.push(RegretRow {
            episode: k,
            realized_reward: transcript.total_reward,
            v_star_s1: v_star,
            v_pik_s1: v_pi,
            regret_contrib: v_star.zip(v_pi).map(|(a, b)| a - b),
            planning_ms,
            opt_nodes,
        });
    }
    if learner.reused_bursts() > 0 {
        tracing::info!(
            bursts = learner.reused_bursts(),
            "bursts past the horizon reused the last weights"
        );
    }
    Ok(log)
}
