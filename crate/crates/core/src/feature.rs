//! Action-sequence feature map.
//!
//! For a first action `a` followed by a tail `ā = (a_1, a_2, ...)` and
//! `f = phi(x ⊕ a)`,
//!
//! ```text
//! psi(x, a ⊕ ā) = ½ [ (1-γ)(β(a) f + β̄(a) M1(ā)^T f) ;  γ(β(a) f + β̄(a) M2(ā)^T f) ]
//! M1(ā) = I + Σ_{k≥1} γ^k Π_{i<k} β̄(a_i) M(a_1)…M(a_k)
//! M2(ā) =     Σ_{k≥1} γ^k Π_{i<k} β̄(a_i) β(a_k) M(a_1)…M(a_k)
//! ```
//!
//! so that the value of committing to `a ⊕ ā` until the next burst and
//! following `π` afterwards is `<psi, v12>` with
//! `v12 = 2 [theta / (1-γ); sum_s mu[:, s] V^π(s)]`.
//!
//! The series are cut after `L` terms. Products of action-matrices have
//! spectral norm at most `sqrt(d)`, so the neglected tail is at most
//! `γ^(L+1) sqrt(d) / (1-γ)`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::belief::ActionMatrixSet;
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::LinearAtstMdp;
use crate::sequence::{ActionSequence, AugmentedState, Continuation};

/// Default target for the neglected series tail.
pub const DEFAULT_SERIES_EPS: f64 = 1e-8;

/// Where the matrix series are cut and how much they can miss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesConfig {
    pub trunc_depth: usize,
    pub tail_bound: f64,
}

impl SeriesConfig {
    /// Smallest depth whose tail bound is below `eps_ser`.
    pub fn for_model(gamma: f64, d: usize, eps_ser: f64) -> Self {
        Self::for_growth(gamma, d, eps_ser)
    }

    /// Fixed depth `L` with tail bound `γ^(L+1) sqrt(d) / (1-γ)`.
    pub fn with_depth(gamma: f64, d: usize, trunc_depth: usize) -> Self {
        Self {
            trunc_depth,
            tail_bound: tail(gamma, d, trunc_depth),
        }
    }

    /// Series over matrices within `eps` of exact ones in spectral norm.
    /// Products then grow at most like `(1 + eps sqrt(d))^k`, so the
    /// geometric rate becomes `γ (1 + eps sqrt(d))`. If that reaches 1 the
    /// series may diverge; the exact depth is used and the tail is unbounded.
    pub fn for_estimate(gamma: f64, d: usize, eps: f64, eps_ser: f64) -> Self {
        let rate = gamma * (1.0 + eps * (d as f64).sqrt());
        if rate < 1.0 {
            Self::for_growth(rate, d, eps_ser)
        } else {
            Self {
                trunc_depth: Self::for_model(gamma, d, eps_ser).trunc_depth,
                tail_bound: f64::INFINITY,
            }
        }
    }

    fn for_growth(rate: f64, d: usize, eps_ser: f64) -> Self {
        let sqrt_d = (d as f64).sqrt();
        let depth = ((sqrt_d / (eps_ser * (1.0 - rate))).ln() / (1.0 / rate).ln())
            .ceil()
            .max(1.0) as usize;
        Self {
            trunc_depth: depth,
            tail_bound: tail(rate, d, depth),
        }
    }
}

fn tail(rate: f64, d: usize, depth: usize) -> f64 {
    rate.powi(depth as i32 + 1) * (d as f64).sqrt() / (1.0 - rate)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EngineMode {
    /// True action-matrices and burst probabilities.
    Exact,
    /// Estimated inputs, outputs not rescaled.
    Estimated,
    /// Estimated inputs, outputs divided by `1 + 16 d (eps + eps_beta / sqrt(d)) / (1-γ)`.
    Normalized,
}

/// Evaluates `psi`, `M1` and `M2` for a fixed set of action-matrices and
/// burst probabilities.
#[derive(Debug, Clone)]
pub struct PsiEngine {
    mode: EngineMode,
    gamma: f64,
    n_states: usize,
    n_actions: usize,
    phi: Vec<DVector<f64>>,
    matrices: ActionMatrixSet,
    beta: Vec<f64>,
    series: SeriesConfig,
    norm_divisor: f64,
    eps: f64,
    eps_beta: f64,
    admissibility: Option<f64>,
    per_matrix_correction: bool,
}

/// Error level of the normalized estimated map, `16 d (eps + eps_beta / sqrt(d)) / (1-γ)`.
pub fn estimation_error_bound(d: usize, gamma: f64, eps: f64, eps_beta: f64) -> f64 {
    16.0 * d as f64 * (eps + eps_beta / (d as f64).sqrt()) / (1.0 - gamma)
}

/// Largest matrix error for which the normalized map is guaranteed, `(1-γ) / (2 sqrt(d))`.
pub fn max_matrix_error(d: usize, gamma: f64) -> f64 {
    (1.0 - gamma) / (2.0 * (d as f64).sqrt())
}

impl PsiEngine {
    /// Exact map with the default series depth.
    pub fn exact(mdp: &LinearAtstMdp) -> Result<Self> {
        Self::exact_with_series(
            mdp,
            SeriesConfig::for_model(mdp.gamma(), mdp.dim(), DEFAULT_SERIES_EPS),
        )
    }

    pub fn exact_with_series(mdp: &LinearAtstMdp, series: SeriesConfig) -> Result<Self> {
        Ok(Self {
            mode: EngineMode::Exact,
            gamma: mdp.gamma(),
            n_states: mdp.num_states(),
            n_actions: mdp.num_actions(),
            phi: flat_phi(mdp),
            matrices: ActionMatrixSet::from_model(mdp)?,
            beta: mdp.betas().to_vec(),
            series,
            norm_divisor: 1.0,
            eps: 0.0,
            eps_beta: 0.0,
            admissibility: None,
            per_matrix_correction: false,
        })
    }

    /// Unnormalized map from estimated inputs. Only the feature map of
    /// `features` is used. `eps` is the assumed spectral error of the
    /// matrices and sets the series depth.
    pub fn estimated(
        features: &LinearAtstMdp,
        matrices: ActionMatrixSet,
        beta: Vec<f64>,
        eps: f64,
        eps_beta: f64,
    ) -> Result<Self> {
        check_inputs(features, &matrices, &beta)?;
        let gamma = features.gamma();
        let d = features.dim();
        Ok(Self {
            mode: EngineMode::Estimated,
            gamma,
            n_states: features.num_states(),
            n_actions: features.num_actions(),
            phi: flat_phi(features),
            matrices,
            beta,
            series: SeriesConfig::for_estimate(gamma, d, eps, DEFAULT_SERIES_EPS),
            norm_divisor: 1.0,
            eps,
            eps_beta,
            admissibility: None,
            per_matrix_correction: false,
        })
    }

    /// Normalized map from estimates within `eps` (matrices, spectral norm)
    /// and `eps_beta` (burst probabilities). The result is admissible at
    /// level `32 d (eps + eps_beta / sqrt(d)) / (1-γ)`.
    pub fn build_estimated(
        features: &LinearAtstMdp,
        matrices: ActionMatrixSet,
        beta: Vec<f64>,
        eps: f64,
        eps_beta: f64,
    ) -> Result<Self> {
        let (d, gamma) = (features.dim(), features.gamma());
        let max = max_matrix_error(d, gamma);
        if !(0.0..=max).contains(&eps) {
            return Err(Error::EpsilonTooLarge { eps, max });
        }
        if !(0.0..=1.0).contains(&eps_beta) {
            return Err(Error::invalid("eps_beta", format!("{eps_beta} is not in [0, 1]")));
        }
        let mut engine = Self::estimated(features, matrices, beta, eps, eps_beta)?;
        let bound = estimation_error_bound(d, gamma, eps, eps_beta);
        engine.mode = EngineMode::Normalized;
        engine.norm_divisor = 1.0 + bound;
        engine.admissibility = Some(2.0 * bound);
        Ok(engine)
    }

    /// Rescales every matrix by `1 / (1 + eps sqrt(d))` so that products stay
    /// within the exact `sqrt(d)` bound. Off by default.
    pub fn with_per_matrix_correction(mut self, on: bool) -> Self {
        if on != self.per_matrix_correction {
            let factor = 1.0 + self.eps * (self.dim() as f64).sqrt();
            self.matrices = self
                .matrices
                .scaled(if on { 1.0 / factor } else { factor });
            self.per_matrix_correction = on;
            self.series = if on {
                SeriesConfig::for_model(self.gamma, self.dim(), DEFAULT_SERIES_EPS)
            } else {
                SeriesConfig::for_estimate(self.gamma, self.dim(), self.eps, DEFAULT_SERIES_EPS)
            };
        }
        self
    }

    /// Same engine with a different series depth.
    pub fn with_series(mut self, series: SeriesConfig) -> Self {
        self.series = series;
        self
    }

    pub fn mode(&self) -> EngineMode {
        self.mode
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn dim(&self) -> usize {
        self.matrices.dim()
    }

    pub fn num_states(&self) -> usize {
        self.n_states
    }

    pub fn num_actions(&self) -> usize {
        self.n_actions
    }

    pub fn matrices(&self) -> &ActionMatrixSet {
        &self.matrices
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn series(&self) -> SeriesConfig {
        self.series
    }

    pub fn norm_divisor(&self) -> f64 {
        self.norm_divisor
    }

    /// Matrix and burst-probability error levels the engine was built for.
    pub fn errors(&self) -> (f64, f64) {
        (self.eps, self.eps_beta)
    }

    /// Guaranteed admissibility level (normalized mode only).
    pub fn admissibility(&self) -> Option<f64> {
        self.admissibility
    }

    pub fn per_matrix_correction(&self) -> bool {
        self.per_matrix_correction
    }

    pub fn phi(&self, state: usize, action: usize) -> &DVector<f64> {
        &self.phi[state * self.n_actions + action]
    }

    /// `M1(ā)` and `M2(ā)` for `ā = seq`, cut after `trunc_depth` terms.
    pub fn m1_m2(&self, seq: &ActionSequence) -> (DMatrix<f64>, DMatrix<f64>) {
        let d = self.dim();
        let mut m1 = DMatrix::identity(d, d);
        let mut m2 = DMatrix::zeros(d, d);
        let mut product = DMatrix::identity(d, d);
        let mut weight = 1.0;
        for k in 1..=self.series.trunc_depth {
            let a = seq.action_at(k - 1);
            weight *= self.gamma;
            if k > 1 {
                weight *= 1.0 - self.beta[seq.action_at(k - 2)];
            }
            if weight == 0.0 {
                break;
            }
            product *= self.matrices.get(a);
            m1 += &product * weight;
            m2 += &product * (weight * self.beta[a]);
        }
        (m1, m2)
    }

    /// Feature of `x ⊕ a` computed with this engine's matrices.
    fn feature_after(&self, x: &AugmentedState, action: usize) -> Option<DVector<f64>> {
        let s = x.anchor()?;
        let mut actions = x.tail().iter().copied().chain(std::iter::once(action));
        let first = actions.next().expect("at least the new action");
        let mut f = self.phi(s, first).clone();
        for a in actions {
            f = self.matrices.get(a).tr_mul(&f);
        }
        Some(f)
    }

    /// `psi(x, seq)`; the sentinel maps to zero.
    pub fn psi(&self, x: &AugmentedState, seq: &ActionSequence) -> DVector<f64> {
        self.psi_with_depth(x, seq, self.series.trunc_depth)
    }

    /// `psi(s, seq)` at a freshly observed state.
    pub fn psi_state(&self, state: usize, seq: &ActionSequence) -> DVector<f64> {
        let f = self.phi(state, seq.first()).clone();
        self.psi_from_feature(f, seq, self.series.trunc_depth)
    }

    /// `psi` with an explicit series depth.
    pub fn psi_with_depth(
        &self,
        x: &AugmentedState,
        seq: &ActionSequence,
        depth: usize,
    ) -> DVector<f64> {
        match self.feature_after(x, seq.first()) {
            None => DVector::zeros(2 * self.dim()),
            Some(f) => self.psi_from_feature(f, seq, depth),
        }
    }

    fn psi_from_feature(&self, f: DVector<f64>, seq: &ActionSequence, depth: usize) -> DVector<f64> {
        let d = self.dim();
        let gamma = self.gamma;
        let b0 = self.beta[seq.first()];
        let mut u1 = f.clone();
        let mut u2 = DVector::zeros(d);
        if b0 < 1.0 {
            let mut v = f.clone();
            let mut weight = 1.0;
            for k in 1..=depth {
                let a = seq.action_at(k);
                weight *= gamma;
                if k > 1 {
                    weight *= 1.0 - self.beta[seq.action_at(k - 1)];
                }
                if weight == 0.0 {
                    break;
                }
                v = self.matrices.get(a).tr_mul(&v);
                u1.axpy(weight, &v, 1.0);
                u2.axpy(weight * self.beta[a], &v, 1.0);
            }
        }
        let scale = 0.5 / self.norm_divisor;
        let mut psi = DVector::zeros(2 * d);
        for i in 0..d {
            psi[i] = scale * (1.0 - gamma) * (b0 * f[i] + (1.0 - b0) * u1[i]);
            psi[d + i] = scale * gamma * (b0 * f[i] + (1.0 - b0) * u2[i]);
        }
        psi
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(&EngineFile::from(self))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: EngineFile = serde_json::from_str(&text)?;
        file.try_into()
    }
}

fn flat_phi(mdp: &LinearAtstMdp) -> Vec<DVector<f64>> {
    (0..mdp.num_states())
        .flat_map(|s| (0..mdp.num_actions()).map(move |a| (s, a)))
        .map(|(s, a)| mdp.phi(s, a).clone())
        .collect()
}

fn check_inputs(features: &LinearAtstMdp, matrices: &ActionMatrixSet, beta: &[f64]) -> Result<()> {
    if matrices.num_actions() != features.num_actions() || matrices.dim() != features.dim() {
        return Err(Error::Dimension(format!(
            "expected {} matrices of size {d}x{d}",
            features.num_actions(),
            d = features.dim()
        )));
    }
    if beta.len() != features.num_actions() {
        return Err(Error::Dimension("one burst probability per action".into()));
    }
    if let Some(b) = beta.iter().find(|b| !(0.0..=1.0).contains(*b)) {
        return Err(Error::invalid("beta", format!("{b} is not in [0, 1]")));
    }
    Ok(())
}

/// `2 [theta / (1-γ); sum_s mu[:, s] V(s)]`.
pub fn k_weight_vector(mdp: &LinearAtstMdp, values: &[f64]) -> DVector<f64> {
    let d = mdp.dim();
    let v = mdp.integrate(values);
    let mut out = DVector::zeros(2 * d);
    for i in 0..d {
        out[i] = 2.0 * mdp.theta()[i] / (1.0 - mdp.gamma());
        out[d + i] = 2.0 * v[i];
    }
    out
}

/// Random `(state, sequence)` pairs: prefixes of length `1..=max_len`,
/// either continuation.
pub fn sample_pairs<R: Rng + ?Sized>(
    n_states: usize,
    n_actions: usize,
    count: usize,
    max_len: usize,
    rng: &mut R,
) -> Vec<(AugmentedState, ActionSequence)> {
    (0..count)
        .map(|_| {
            let s = rng.random_range(0..n_states);
            let len = rng.random_range(1..=max_len);
            let prefix = (0..len).map(|_| rng.random_range(0..n_actions)).collect();
            let continuation = if rng.random::<bool>() {
                Continuation::RepeatLast
            } else {
                Continuation::CyclePrefix
            };
            let seq = ActionSequence::new(prefix, continuation).expect("non-empty");
            (AugmentedState::observed(s), seq)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    Error,
    Norm,
    PrefixStability,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub input: String,
    pub value: f64,
    pub bound: f64,
}

/// Outcome of [`check_admissible`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub eps_target: f64,
    pub samples: usize,
    pub max_error: f64,
    pub max_norm: f64,
    pub max_prefix_change: f64,
    pub prefix_bound: f64,
    pub passed: bool,
    /// Worst violations first, at most ten.
    pub violations: Vec<Violation>,
}

/// Extra series terms used when probing prefix stability, so that the
/// probe actually sees the part of the sequence it changes.
const PREFIX_PROBE_EXTRA: usize = 20;

const NORM_TOL: f64 = 1e-9;

/// Checks a candidate map against a reference on sampled inputs: error at
/// most `eps_target`, norm at most 1, and changing the sequence beyond the
/// series depth moves the output by at most twice the tail bound.
pub fn check_admissible(
    candidate: &PsiEngine,
    reference: &PsiEngine,
    samples: &[(AugmentedState, ActionSequence)],
    eps_target: f64,
) -> AdmissibilityReport {
    let depth = candidate.series.trunc_depth;
    let prefix_bound = 2.0 * candidate.series.tail_bound;
    let mut report = AdmissibilityReport {
        eps_target,
        samples: samples.len(),
        max_error: 0.0,
        max_norm: 0.0,
        max_prefix_change: 0.0,
        prefix_bound,
        passed: true,
        violations: Vec::new(),
    };
    for (x, seq) in samples {
        let input = format!("{x} {seq}");
        let psi_hat = candidate.psi(x, seq);
        let error = (&psi_hat - reference.psi(x, seq)).norm();
        let norm = psi_hat.norm();

        // Keep the first depth + 1 actions, then switch to a different one.
        let kept: Vec<usize> = (0..=depth).map(|k| seq.action_at(k)).collect();
        let last = kept[depth];
        let other = (last + 1) % candidate.n_actions;
        let mut altered = kept;
        altered.push(other);
        let altered = ActionSequence::repeat_last(altered);
        let probe = depth + PREFIX_PROBE_EXTRA;
        let change = (candidate.psi_with_depth(x, seq, probe)
            - candidate.psi_with_depth(x, &altered, probe))
        .norm();

        report.max_error = report.max_error.max(error);
        report.max_norm = report.max_norm.max(norm);
        report.max_prefix_change = report.max_prefix_change.max(change);
        if error > eps_target {
            report.violations.push(Violation {
                kind: ViolationKind::Error,
                input: input.clone(),
                value: error,
                bound: eps_target,
            });
        }
        if norm > 1.0 + NORM_TOL {
            report.violations.push(Violation {
                kind: ViolationKind::Norm,
                input: input.clone(),
                value: norm,
                bound: 1.0,
            });
        }
        if change > prefix_bound {
            report.violations.push(Violation {
                kind: ViolationKind::PrefixStability,
                input,
                value: change,
                bound: prefix_bound,
            });
        }
    }
    report.passed = report.violations.is_empty();
    report
        .violations
        .sort_by(|a, b| (b.value / b.bound).total_cmp(&(a.value / a.bound)));
    report.violations.truncate(10);
    report
}

mod finite_or_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_some(x)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// On-disk form of an engine.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EngineFile {
    pub mode: EngineMode,
    pub gamma: f64,
    pub d: usize,
    pub trunc_depth: usize,
    /// `null` when the series has no finite tail bound.
    #[serde(with = "finite_or_null")]
    pub tail_bound: f64,
    pub norm_divisor: f64,
    pub eps: f64,
    pub eps_beta: f64,
    #[serde(default)]
    pub admissibility: Option<f64>,
    #[serde(default)]
    pub per_matrix_correction: bool,
    pub beta: Vec<f64>,
    /// One row-major `d × d` matrix per action.
    pub matrices: Vec<Vec<Vec<f64>>>,
    /// `phi[s][a]`.
    pub phi: Vec<Vec<Vec<f64>>>,
}

impl From<&PsiEngine> for EngineFile {
    fn from(e: &PsiEngine) -> Self {
        Self {
            mode: e.mode,
            gamma: e.gamma,
            d: e.dim(),
            trunc_depth: e.series.trunc_depth,
            tail_bound: e.series.tail_bound,
            norm_divisor: e.norm_divisor,
            eps: e.eps,
            eps_beta: e.eps_beta,
            admissibility: e.admissibility,
            per_matrix_correction: e.per_matrix_correction,
            beta: e.beta.clone(),
            matrices: e.matrices.matrices().iter().map(linalg::to_rows).collect(),
            phi: (0..e.n_states)
                .map(|s| {
                    (0..e.n_actions)
                        .map(|a| linalg::to_vec(e.phi(s, a)))
                        .collect()
                })
                .collect(),
        }
    }
}

impl TryFrom<EngineFile> for PsiEngine {
    type Error = Error;

    fn try_from(f: EngineFile) -> Result<Self> {
        let matrices = f
            .matrices
            .iter()
            .map(|rows| {
                linalg::from_rows(rows).ok_or_else(|| Error::Dimension("ragged matrix".into()))
            })
            .collect::<Result<Vec<_>>>()?;
        let matrices = ActionMatrixSet::from_matrices(matrices)?;
        let n_states = f.phi.len();
        let n_actions = matrices.num_actions();
        if matrices.dim() != f.d || f.beta.len() != n_actions {
            return Err(Error::Dimension("engine file fields disagree on d or A".into()));
        }
        let mut phi = Vec::with_capacity(n_states * n_actions);
        for row in f.phi {
            if row.len() != n_actions {
                return Err(Error::Dimension("phi rows must list every action".into()));
            }
            for v in row {
                if v.len() != f.d {
                    return Err(Error::Dimension("phi entries must have length d".into()));
                }
                phi.push(DVector::from_vec(v));
            }
        }
        if !(f.gamma > 0.0 && f.gamma < 1.0) {
            return Err(Error::invalid("gamma", format!("{} is not in (0, 1)", f.gamma)));
        }
        if f.norm_divisor < 1.0 {
            return Err(Error::invalid("norm_divisor", "must be at least 1"));
        }
        Ok(Self {
            mode: f.mode,
            gamma: f.gamma,
            n_states,
            n_actions,
            phi,
            matrices,
            beta: f.beta,
            series: SeriesConfig {
                trunc_depth: f.trunc_depth,
                tail_bound: f.tail_bound,
            },
            norm_divisor: f.norm_divisor,
            eps: f.eps,
            eps_beta: f.eps_beta,
            admissibility: f.admissibility,
            per_matrix_correction: f.per_matrix_correction,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::generators::random_tabular;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(beta: Vec<f64>, seed: u64) -> LinearAtstMdp {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        random_tabular(2, 2, 0.8, beta, &mut rng).unwrap()
    }

    #[test]
    fn series_depth_formula() {
        let s = SeriesConfig::for_model(0.8, 4, 1e-8);
        // ln(2 / (1e-8 * 0.2)) / ln(1.25) = 92.9
        assert_eq!(s.trunc_depth, 93);
        assert!((s.tail_bound / (0.8f64.powi(94) * 2.0 / 0.2) - 1.0).abs() < 1e-12);
        assert!(s.tail_bound <= 1e-8);
    }

    #[test]
    fn full_observation_closed_forms() {
        let m = model(vec![1.0, 1.0], 1);
        let e = PsiEngine::exact(&m).unwrap();
        let seq = ActionSequence::repeat_last(vec![1, 0]);
        let (m1, m2) = e.m1_m2(&seq);
        let ma = e.matrices().get(1);
        let d = m.dim();
        assert!((m1 - (DMatrix::identity(d, d) + ma * 0.8)).amax() < 1e-15);
        assert!((m2 - ma * 0.8).amax() < 1e-15);
    }

    #[test]
    fn blind_closed_forms() {
        let m = model(vec![0.0, 0.0], 2);
        let e = PsiEngine::exact(&m).unwrap();
        let seq = ActionSequence::cycle(vec![0, 1]);
        let (m1, m2) = e.m1_m2(&seq);
        assert_eq!(m2.amax(), 0.0);
        let d = m.dim();
        let mut expected = DMatrix::identity(d, d);
        let mut p = DMatrix::identity(d, d);
        for k in 1..=e.series().trunc_depth {
            p *= e.matrices().get(seq.action_at(k - 1));
            expected += &p * 0.8f64.powi(k as i32);
        }
        assert!((m1 - expected).amax() < 1e-12);
    }

    #[test]
    fn vector_and_matrix_forms_agree() {
        let m = model(vec![0.3, 0.6], 3);
        let e = PsiEngine::exact(&m).unwrap();
        let d = m.dim();
        for seq in [
            ActionSequence::repeat_last(vec![0, 1, 1, 0]),
            ActionSequence::cycle(vec![1, 0, 0]),
        ] {
            for s in 0..2 {
                let f = m.phi(s, seq.first());
                let (m1, m2) = e.m1_m2(&seq.tail());
                let b = m.beta(seq.first());
                let top = (f * b + m1.tr_mul(f) * (1.0 - b)) * (0.5 * 0.2);
                let bottom = (f * b + m2.tr_mul(f) * (1.0 - b)) * (0.5 * 0.8);
                let psi = e.psi_state(s, &seq);
                assert!((psi.rows(0, d) - top).amax() < 1e-12);
                assert!((psi.rows(d, d) - bottom).amax() < 1e-12);
            }
        }
    }

    #[test]
    fn revealing_first_action_ignores_tail() {
        let m = model(vec![1.0, 0.4], 4);
        let e = PsiEngine::exact(&m).unwrap();
        let a = e.psi_state(0, &ActionSequence::repeat_last(vec![0, 1]));
        let b = e.psi_state(0, &ActionSequence::constant(0));
        assert_eq!(a, b);
        let f = m.phi(0, 0);
        assert!((a.rows(0, m.dim()) - f * 0.1).amax() < 1e-15);
        assert!((a.rows(m.dim(), m.dim()) - f * 0.4).amax() < 1e-15);
    }

    #[test]
    fn sentinel_maps_to_zero() {
        let e = PsiEngine::exact(&model(vec![0.5, 0.5], 5)).unwrap();
        let psi = e.psi(&AugmentedState::terminal(), &ActionSequence::constant(0));
        assert_eq!(psi.amax(), 0.0);
    }

    #[test]
    fn normalization_constants() {
        let m = model(vec![0.5, 0.5], 6);
        let d = m.dim();
        let eps = 0.2 / (4.0 * (d as f64).sqrt());
        let ams = ActionMatrixSet::from_model(&m).unwrap();
        let e = PsiEngine::build_estimated(&m, ams.clone(), m.betas().to_vec(), eps, 0.0).unwrap();
        let sqrt_d = (d as f64).sqrt();
        assert!((e.norm_divisor() - (1.0 + 4.0 * sqrt_d)).abs() < 1e-12);
        assert!((e.admissibility().unwrap() - 8.0 * sqrt_d).abs() < 1e-12);
        let too_big = max_matrix_error(d, 0.8) * 1.01;
        assert!(matches!(
            PsiEngine::build_estimated(&m, ams, m.betas().to_vec(), too_big, 0.0),
            Err(Error::EpsilonTooLarge { .. })
        ));
    }

    #[test]
    fn zero_error_normalized_engine_is_exact() {
        let m = model(vec![0.2, 0.9], 7);
        let exact = PsiEngine::exact(&m).unwrap();
        let ams = ActionMatrixSet::from_model(&m).unwrap();
        let e = PsiEngine::build_estimated(&m, ams, m.betas().to_vec(), 0.0, 0.0).unwrap();
        assert_eq!(e.norm_divisor(), 1.0);
        let seq = ActionSequence::repeat_last(vec![1, 0, 1]);
        assert!((e.psi_state(1, &seq) - exact.psi_state(1, &seq)).norm() < 1e-12);
    }

    #[test]
    fn exact_engine_is_admissible_against_itself() {
        let m = model(vec![0.2, 0.9], 8);
        let e = PsiEngine::exact(&m).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let samples = sample_pairs(2, 2, 200, 5, &mut rng);
        let report = check_admissible(&e, &e, &samples, e.series().tail_bound);
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn engine_file_round_trip() {
        let m = model(vec![0.2, 0.9], 9);
        let e = PsiEngine::exact(&m).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("engine.json");
        e.save(&path).unwrap();
        let back = PsiEngine::load(&path).unwrap();
        let seq = ActionSequence::cycle(vec![0, 1]);
        assert!((back.psi_state(0, &seq) - e.psi_state(0, &seq)).norm() < 1e-15);
        assert_eq!(back.mode(), EngineMode::Exact);
    }
}
