//! Multi-seed learning experiments driven by a TOML file.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::exact::RegretOracle;
use super::report::{regret_svg, SeedCurve};
use crate::belief::{optimal_values_with_budget, planning_iterations, ActionMatrixSet, DEFAULT_NODE_BUDGET};
use crate::error::{Error, Result};
use crate::feature::{check_admissible, sample_pairs, AdmissibilityReport, PsiEngine};
use crate::learner::{run_learning, InitialSchedule, LearnerConfig, OptimizerConfig, RegretLog};
use crate::linalg;
use crate::model::generators::{benchmark_three_state, random_simplex, random_tabular, swap_two_state};
use crate::model::{load_model, LinearAtstMdp};
use crate::offpolicy::{
    estimate_engine, required_sample_size, sample_dataset, second_moment, uniform_dist,
    EpsCertificate, SampleSizeInput,
};
use crate::sim::{purpose, RunSeed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelSource {
    File {
        path: PathBuf,
    },
    /// The fixed three-state, two-action benchmark.
    Benchmark,
    SwapTwoState {
        gamma: f64,
        beta: Vec<f64>,
    },
    RandomTabular {
        states: usize,
        actions: usize,
        gamma: f64,
        beta: Vec<f64>,
    },
    RandomSimplex {
        states: usize,
        actions: usize,
        dim: usize,
        gamma: f64,
        beta: Vec<f64>,
    },
}

impl ModelSource {
    /// Random generators draw from stream `(0, MODEL, 0)` of `seed`.
    pub fn build(&self, seed: u64) -> Result<LinearAtstMdp> {
        let mut rng = RunSeed::new(seed, 0).rng(purpose::MODEL, 0);
        match self {
            Self::File { path } => load_model(path),
            Self::Benchmark => Ok(benchmark_three_state()),
            Self::SwapTwoState { gamma, beta } => swap_two_state(*gamma, beta.clone()),
            Self::RandomTabular {
                states,
                actions,
                gamma,
                beta,
            } => random_tabular(*states, *actions, *gamma, beta.clone(), &mut rng),
            Self::RandomSimplex {
                states,
                actions,
                dim,
                gamma,
                beta,
            } => random_simplex(*states, *actions, *dim, *gamma, beta.clone(), &mut rng),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EngineKind {
    Exact,
    Estimated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineSettings {
    pub mode: EngineKind,
    /// Dataset size; defaults to the sample size that certifies
    /// `eps = sqrt((1-γ)/K)`, capped at `max_samples`.
    pub samples: Option<u64>,
    pub max_samples: u64,
    pub beta_known: bool,
    pub ridge_lambda: f64,
    /// Constant of the ridge error bound.
    pub c: f64,
    /// Inputs sampled for the admissibility report.
    pub admissibility_samples: usize,
}

impl Default for EngineSettings {
    fn default() -> Self {
        Self {
            mode: EngineKind::Exact,
            samples: None,
            max_samples: 200_000,
            beta_known: false,
            ridge_lambda: 1.0,
            c: 1.0,
            admissibility_samples: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerSettings {
    /// Defaults to `ceil(ln(K/(1-γ))/(1-γ)) + 1`.
    pub horizon: Option<usize>,
    pub lambda: f64,
    /// Defaults to `c_rho d H sqrt(ln(2dKH/p))`.
    pub rho: Option<f64>,
    pub c_rho: f64,
    pub opt: OptimizerConfig,
    pub incremental_gram: bool,
}

impl Default for LearnerSettings {
    fn default() -> Self {
        Self {
            horizon: None,
            lambda: 1.0,
            rho: None,
            c_rho: 0.1,
            opt: OptimizerConfig::default(),
            incremental_gram: false,
        }
    }
}

impl LearnerSettings {
    pub fn resolve(&self, d: usize, gamma: f64, episodes: usize, p: f64) -> LearnerConfig {
        let horizon = self
            .horizon
            .unwrap_or_else(|| LearnerConfig::default_horizon(gamma, episodes));
        LearnerConfig {
            horizon,
            lambda: self.lambda,
            rho: self
                .rho
                .unwrap_or_else(|| LearnerConfig::default_rho(self.c_rho, d, horizon, episodes, p)),
            opt: self.opt.clone(),
            incremental_gram: self.incremental_gram,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSettings {
    pub enabled: bool,
    /// Accuracy target of the optimal values.
    pub eps: f64,
    pub node_budget: usize,
}

impl Default for OracleSettings {
    fn default() -> Self {
        Self {
            enabled: true,
            eps: 1e-8,
            node_budget: DEFAULT_NODE_BUDGET,
        }
    }
}

fn default_p() -> f64 {
    0.05
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

/// A full experiment. Every random stream derives from `seed`; the entries
/// of `seeds` select independent runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub episodes: usize,
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub initial: InitialSchedule,
    pub model: ModelSource,
    #[serde(default)]
    pub engine: EngineSettings,
    #[serde(default)]
    pub learner: LearnerSettings,
    #[serde(default)]
    pub oracle: OracleSettings,
}

fn config_error(path: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        path: path.into(),
        reason: reason.into(),
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| config_error("", e.message()))?;
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            config_error(&path, e.into_inner().message())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config; relative paths inside it are taken relative to the
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg = Self::from_toml(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new(""));
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        if let ModelSource::File { path } = &mut cfg.model {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(config_error("episodes", "must be at least 1"));
        }
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(config_error("p", "must lie in (0, 1)"));
        }
        if self.seeds.is_empty() {
            return Err(config_error("seeds", "need at least one run"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(config_error("seeds", "entries must be distinct"));
        }
        if self.learner.horizon.is_some_and(|h| h < 2) {
            return Err(config_error("learner.horizon", "must be at least 2"));
        }
        if !(self.learner.lambda > 0.0) {
            return Err(config_error("learner.lambda", "must be positive"));
        }
        if !(self.learner.c_rho >= 0.0) || self.learner.rho.is_some_and(|r| !(r >= 0.0)) {
            return Err(config_error("learner.rho", "bonus must be non-negative"));
        }
        if self.learner.opt.search_depth == 0 {
            return Err(config_error("learner.opt.search_depth", "must be at least 1"));
        }
        if self.learner.opt.beam_width == 0 {
            return Err(config_error("learner.opt.beam_width", "must be at least 1"));
        }
        if self.engine.samples == Some(0) || self.engine.max_samples == 0 {
            return Err(config_error("engine.samples", "must be positive"));
        }
        if !(self.engine.ridge_lambda > 0.0) {
            return Err(config_error("engine.ridge_lambda", "must be positive"));
        }
        if !(self.oracle.eps > 0.0 && self.oracle.eps < 1.0) {
            return Err(config_error("oracle.eps", "must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Sublinearity diagnostics of one regret curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegretShape {
    pub cumulative: f64,
    /// Mean regret over the first fifth of the episodes.
    pub mean_first: f64,
    /// Mean regret over the last fifth.
    pub mean_last: f64,
    pub slope_first_half: f64,
    pub slope_second_half: f64,
    /// `c` in the least-squares fit `cumulative(k) ≈ c sqrt(k)` over the
    /// second half.
    pub sqrt_fit: f64,
    /// Last-fifth mean at most half the first-fifth mean, and a flatter
    /// second half.
    pub sublinear: bool,
}

impl RegretShape {
    pub fn from_regrets(regrets: &[f64]) -> Self {
        let k = regrets.len();
        let cum: Vec<f64> = regrets
            .iter()
            .scan(0.0, |acc, r| {
                *acc += r;
                Some(*acc)
            })
            .collect();
        let fifth = (k / 5).max(1);
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len().max(1) as f64;
        let mean_first = mean(&regrets[..fifth]);
        let mean_last = mean(&regrets[k - fifth..]);
        let half = k / 2;
        let total = cum.last().copied().unwrap_or(0.0);
        let at_half = if half > 0 { cum[half - 1] } else { 0.0 };
        let slope_first_half = at_half / half.max(1) as f64;
        let slope_second_half = (total - at_half) / (k - half).max(1) as f64;
        let (mut num, mut den) = (0.0, 0.0);
        for (i, c) in cum.iter().enumerate().skip(half) {
            let root = ((i + 1) as f64).sqrt();
            num += c * root;
            den += root * root;
        }
        Self {
            cumulative: total,
            mean_first,
            mean_last,
            slope_first_half,
            slope_second_half,
            sqrt_fit: if den > 0.0 { num / den } else { 0.0 },
            sublinear: mean_last <= 0.5 * mean_first && slope_second_half < slope_first_half,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub log_file: PathBuf,
    pub realized_reward_mean: f64,
    pub regret: Option<RegretShape>,
    pub samples: Option<u64>,
    pub certificate: Option<EpsCertificate>,
    pub admissibility: Option<AdmissibilityReport>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub episodes: usize,
    pub horizon: usize,
    pub rho: f64,
    pub v_star: Option<Vec<f64>>,
    pub v_star_slack: Option<f64>,
    pub seeds: Vec<SeedSummary>,
    pub sublinear_seeds: usize,
    /// At least four in five seeds look sublinear.
    pub sublinear: bool,
    pub plot_file: Option<PathBuf>,
}

struct SeedRun {
    summary: SeedSummary,
    log: RegretLog,
}

fn run_seed(
    cfg: &ExperimentConfig,
    mdp: &LinearAtstMdp,
    exact: &PsiEngine,
    learner: &LearnerConfig,
    v_star: Option<(&[f64], f64)>,
    run: u64,
) -> Result<SeedRun> {
    let seed = RunSeed::new(cfg.seed, run);
    let mut estimated = None;
    let mut samples = None;
    if cfg.engine.mode == EngineKind::Estimated {
        let dist = uniform_dist(mdp.num_states(), mdp.num_actions());
        let n = match cfg.engine.samples {
            Some(n) => n,
            None => {
                let lambda_min = linalg::lambda_min(&second_moment(mdp, &dist));
                let wanted = required_sample_size(&SampleSizeInput {
                    d: mdp.dim(),
                    n_actions: mdp.num_actions(),
                    gamma: mdp.gamma(),
                    eps: ((1.0 - mdp.gamma()) / cfg.episodes as f64).sqrt(),
                    p: cfg.p,
                    lambda_min,
                    p_min: 1.0 / mdp.num_actions() as f64,
                    beta_known: cfg.engine.beta_known,
                    c: cfg.engine.c,
                })?;
                if wanted > cfg.engine.max_samples {
                    tracing::warn!(wanted, cap = cfg.engine.max_samples, "sample size capped");
                }
                wanted.min(cfg.engine.max_samples)
            }
        };
        samples = Some(n);
        let mut rng = seed.rng(purpose::DATASET, 0);
        let dataset = sample_dataset(mdp, &dist, n as usize, &mut rng)?;
        estimated = Some(estimate_engine(
            mdp,
            &dataset,
            cfg.p,
            cfg.engine.c,
            cfg.engine.beta_known,
            cfg.engine.ridge_lambda,
        )?);
    }
    let engine = estimated.as_ref().map_or(exact, |e| &e.engine);
    let admissibility = estimated.as_ref().map(|e| {
        let mut rng = seed.rng(purpose::SAMPLES, 0);
        let pairs = sample_pairs(
            mdp.num_states(),
            mdp.num_actions(),
            cfg.engine.admissibility_samples,
            6,
            &mut rng,
        );
        let target = e
            .engine
            .admissibility()
            .unwrap_or(((1.0 - mdp.gamma()) / cfg.episodes as f64).sqrt());
        check_admissible(&e.engine, exact, &pairs, target)
    });

    let mut oracle = match v_star {
        Some((v, slack)) => Some(RegretOracle::new(mdp, v.to_vec(), slack)?),
        None => None,
    };
    let log = run_learning(
        mdp,
        engine,
        cfg.episodes,
        &cfg.initial,
        learner,
        seed,
        oracle.as_mut(),
    )?;
    let log_file = cfg.output_dir.join(format!("regret_seed{run}.csv"));
    log.save(&log_file)?;
    let regret = v_star.map(|_| RegretShape::from_regrets(&log.regrets()));
    let realized_reward_mean =
        log.rows.iter().map(|r| r.realized_reward).sum::<f64>() / log.rows.len() as f64;
    Ok(SeedRun {
        summary: SeedSummary {
            seed: run,
            log_file,
            realized_reward_mean,
            regret,
            samples,
            certificate: estimated.as_ref().map(|e| e.certificate),
            admissibility,
        },
        log,
    })
}

/// Runs every seed (in parallel) and writes one regret CSV per seed,
/// `summary.json` and, with the oracle on, `cumulative_regret.svg`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentSummary> {
    cfg.validate()?;
    let mdp = cfg.model.build(cfg.seed)?;
    cfg.initial
        .validate(mdp.num_states())
        .map_err(|e| config_error("initial", e.to_string()))?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    let exact = PsiEngine::exact(&mdp)?;
    let learner = cfg
        .learner
        .resolve(mdp.dim(), mdp.gamma(), cfg.episodes, cfg.p);
    learner.validate()?;

    let oracle = if cfg.oracle.enabled {
        let ams = ActionMatrixSet::from_model(&mdp)?;
        let n = planning_iterations(mdp.gamma(), cfg.oracle.eps);
        let plan = optimal_values_with_budget(&mdp, &ams, n, n, cfg.oracle.node_budget)?;
        Some((plan.values().to_vec(), plan.error_bound()))
    } else {
        None
    };
    let v_star = oracle.as_ref().map(|(v, s)| (v.as_slice(), *s));

    let runs: Vec<SeedRun> = cfg
        .seeds
        .par_iter()
        .map(|&run| run_seed(cfg, &mdp, &exact, &learner, v_star, run))
        .collect::<Result<_>>()?;

    let plot_file = if oracle.is_some() {
        let curves: Vec<SeedCurve> = runs
            .iter()
            .map(|r| SeedCurve {
                label: format!("seed {}", r.summary.seed),
                cumulative: r.log.cumulative_regret(),
            })
            .collect();
        let path = cfg.output_dir.join("cumulative_regret.svg");
        std::fs::write(&path, regret_svg(&curves))?;
        Some(path)
    } else {
        None
    };
    let seeds: Vec<SeedSummary> = runs.into_iter().map(|r| r.summary).collect();
    let sublinear_seeds = seeds
        .iter()
        .filter(|s| s.regret.is_some_and(|r| r.sublinear))
        .count();
    let summary = ExperimentSummary {
        episodes: cfg.episodes,
        horizon: learner.horizon,
        rho: learner.rho,
        v_star: oracle.as_ref().map(|(v, _)| v.clone()),
        v_star_slack: oracle.as_ref().map(|(_, s)| *s),
        sublinear: oracle.is_some() && 5 * sublinear_seeds >= 4 * seeds.len(),
        sublinear_seeds,
        seeds,
        plot_file,
    };
    std::fs::write(
        cfg.output_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_of_a_decaying_curve() {
        let r: Vec<f64> = (1..=1000).map(|k| 1.0 / (k as f64).sqrt()).collect();
        let s = RegretShape::from_regrets(&r);
        assert!(s.sublinear);
        assert!(s.sqrt_fit > 1.5 && s.sqrt_fit < 2.5);
        let flat = RegretShape::from_regrets(&[0.3; 100]);
        assert!(!flat.sublinear);
    }

    #[test]
    fn errors_name_the_field() {
        let text = "seed = 1\nepisodes = 10\n[model]\nkind = \"benchmark\"\n[learner]\nlambda = -1.0\n";
        match ExperimentConfig::from_toml(text) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "learner.lambda"),
            other => panic!("{other:?}"),
        }
        let text = "seed = 1\nepisodes = 10\n[model]\nkind = \"benchmark\"\n[learner.opt]\nbeam = 3\n";
        match ExperimentConfig::from_toml(text) {
            Err(Error::Config { path, reason }) => {
                assert!(path.starts_with("learner.opt"), "{path}: {reason}");
            }
            other => panic!("{other:?}"),
        }
    }
}
