//! Estimating action-matrices and burst probabilities from logged data.
//!
//! Each row is `(s, a, s', b)` with `(s, a)` drawn from a fixed sampling
//! distribution, `s' ~ P(· | s, a)` and `b ~ Bernoulli(beta(a))`. Since
//! `E[phi(s', a')] = M_{a'}^T phi(s, a)`, every `M_{a'}` is a linear regression
//! of `phi(s', a')` on `phi(s, a)`; ridge regression shares one Gram matrix
//! across all target actions.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{Cholesky, DMatrix};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::belief::ActionMatrixSet;
use crate::feature::{max_matrix_error as max_psi_matrix_error, EngineMode, PsiEngine};
use crate::model::LinearAtstMdp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub s: usize,
    pub a: usize,
    pub s_next: usize,
    pub b: u8,
}

/// Logged transitions together with the distribution they were drawn from.
#[derive(Debug, Clone)]
pub struct OffPolicyDataset {
    pub rows: Vec<Transition>,
    /// `dist[s][a]`.
    pub sampling_dist: Vec<Vec<f64>>,
    /// Smallest eigenvalue of the empirical `E[phi phi^T]`.
    pub sigma_min: f64,
    /// Smallest empirical action frequency.
    pub p_min_emp: f64,
}

/// Uniform distribution over all `(s, a)` pairs.
pub fn uniform_dist(n_states: usize, n_actions: usize) -> Vec<Vec<f64>> {
    let p = 1.0 / (n_states * n_actions) as f64;
    vec![vec![p; n_actions]; n_states]
}

/// `E_{(s,a) ~ dist}[phi(s, a) phi(s, a)^T]`.
pub fn second_moment(mdp: &LinearAtstMdp, dist: &[Vec<f64>]) -> DMatrix<f64> {
    let d = mdp.dim();
    let mut sigma = DMatrix::zeros(d, d);
    for (s, row) in dist.iter().enumerate() {
        for (a, &p) in row.iter().enumerate() {
            if p > 0.0 {
                let f = mdp.phi(s, a);
                sigma += f * f.transpose() * p;
            }
        }
    }
    sigma
}

/// Draws `n` independent rows.
pub fn sample_dataset<R: Rng + ?Sized>(
    mdp: &LinearAtstMdp,
    dist: &[Vec<f64>],
    n: usize,
    rng: &mut R,
) -> Result<OffPolicyDataset> {
    let (n_states, n_actions) = (mdp.num_states(), mdp.num_actions());
    if dist.len() != n_states || dist.iter().any(|r| r.len() != n_actions) {
        return Err(Error::Dimension("sampling distribution must be S x A".into()));
    }
    if n == 0 {
        return Err(Error::invalid("n", "need at least one sample"));
    }
    let flat: Vec<f64> = dist.iter().flatten().copied().collect();
    if flat.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(Error::invalid("dist", "weights must be finite and non-negative"));
    }
    let total: f64 = flat.iter().sum();
    if total <= 0.0 {
        return Err(Error::DegenerateDistribution);
    }
    let mut cdf = Vec::with_capacity(flat.len());
    let mut acc = 0.0;
    for p in &flat {
        acc += p / total;
        cdf.push(acc);
    }
    let last_positive = flat.iter().rposition(|&p| p > 0.0).expect("positive total");

    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.random();
        let cell = cdf.iter().position(|&c| u < c).unwrap_or(last_positive);
        let (s, a) = (cell / n_actions, cell % n_actions);
        let s_next = mdp.sample_next(s, a, rng.random());
        let b = u8::from(rng.random::<f64>() < mdp.beta(a));
        rows.push(Transition { s, a, s_next, b });
    }
    let normalized: Vec<Vec<f64>> = dist
        .iter()
        .map(|r| r.iter().map(|p| p / total).collect())
        .collect();
    Ok(finish_dataset(mdp, rows, normalized))
}

fn finish_dataset(
    mdp: &LinearAtstMdp,
    rows: Vec<Transition>,
    sampling_dist: Vec<Vec<f64>>,
) -> OffPolicyDataset {
    let (d, n_actions) = (mdp.dim(), mdp.num_actions());
    let mut sigma = DMatrix::zeros(d, d);
    let mut counts = vec![0usize; n_actions];
    for r in &rows {
        let f = mdp.phi(r.s, r.a);
        sigma.ger(1.0, f, f, 1.0);
        counts[r.a] += 1;
    }
    let n = rows.len().max(1) as f64;
    sigma /= n;
    let p_min_emp = counts.iter().map(|&c| c as f64 / n).fold(f64::INFINITY, f64::min);
    OffPolicyDataset {
        rows,
        sampling_dist,
        sigma_min: linalg::lambda_min(&sigma).max(0.0),
        p_min_emp,
    }
}

/// Ridge estimates `(X^T X + lambda I)^{-1} X^T Y_a` for every action `a`,
/// where row `n` of `X` is `phi(s_n, a_n)` and of `Y_a` is `phi(s'_n, a)`.
pub fn ridge_action_matrices(
    dataset: &OffPolicyDataset,
    features: &LinearAtstMdp,
    lambda: f64,
) -> Result<Vec<DMatrix<f64>>> {
    if !(lambda > 0.0) {
        return Err(Error::invalid("lambda", "ridge regularizer must be positive"));
    }
    let (d, n_actions) = (features.dim(), features.num_actions());
    let mut gram = DMatrix::identity(d, d) * lambda;
    let mut cross: Vec<DMatrix<f64>> = vec![DMatrix::zeros(d, d); n_actions];
    for r in &dataset.rows {
        let x = features.phi(r.s, r.a);
        gram.ger(1.0, x, x, 1.0);
        for (a, c) in cross.iter_mut().enumerate() {
            c.ger(1.0, x, features.phi(r.s_next, a), 1.0);
        }
    }
    let chol = Cholesky::new(gram).expect("lambda I + X^T X is positive definite");
    Ok(cross.into_iter().map(|c| chol.solve(&c)).collect())
}

/// Per-action empirical burst frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaEstimate {
    pub values: Vec<f64>,
    /// Actions that never appear in the data; their value is 1/2.
    pub unseen: Vec<bool>,
    pub counts: Vec<usize>,
}

pub fn empirical_beta(dataset: &OffPolicyDataset, n_actions: usize) -> BetaEstimate {
    let mut hits = vec![0usize; n_actions];
    let mut counts = vec![0usize; n_actions];
    for r in &dataset.rows {
        counts[r.a] += 1;
        hits[r.a] += r.b as usize;
    }
    let values = hits
        .iter()
        .zip(&counts)
        .map(|(&h, &c)| if c == 0 { 0.5 } else { h as f64 / c as f64 })
        .collect();
    BetaEstimate {
        values,
        unseen: counts.iter().map(|&c| c == 0).collect(),
        counts,
    }
}

/// `4 C sqrt(d ln(2 A d / p) / (N lambda_min^2))`, the high-probability
/// spectral error of the ridge estimates with `lambda = 1`.
pub fn ridge_error_bound(c: f64, d: usize, n_actions: usize, p: f64, n: usize, lambda_min: f64) -> f64 {
    let (d, a, n) = (d as f64, n_actions as f64, n as f64);
    4.0 * c * (d * (2.0 * a * d / p).ln() / (n * lambda_min * lambda_min)).sqrt()
}

/// `sqrt(12 ln(3 A / p) / (N p_min))`, the high-probability error of every
/// empirical burst frequency.
pub fn beta_error_bound(n_actions: usize, p: f64, n: usize, p_min: f64) -> f64 {
    (12.0 * (3.0 * n_actions as f64 / p).ln() / (n as f64 * p_min)).sqrt()
}

/// Inputs of [`required_sample_size`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSizeInput {
    pub d: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub eps: f64,
    pub p: f64,
    pub lambda_min: f64,
    pub p_min: f64,
    pub beta_known: bool,
    /// Unspecified absolute constant; 1 is a heuristic default.
    pub c: f64,
}

/// Sample size after which the normalized estimated map is
/// `eps`-admissible with probability `1 - p`:
///
/// ```text
/// c d^3 ln(2 A d / p) / (eps^2 (1-γ)^2 min{lambda_min^2, d^2 p_min})
/// ```
///
/// With known burst probabilities the minimum is just `lambda_min^2`.
pub fn required_sample_size(input: &SampleSizeInput) -> Result<u64> {
    let SampleSizeInput {
        d,
        n_actions,
        gamma,
        eps,
        p,
        lambda_min,
        p_min,
        beta_known,
        c,
    } = *input;
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::invalid("eps", "must lie in (0, 1)"));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid("p", "must lie in (0, 1)"));
    }
    if !(lambda_min > 0.0) || (!beta_known && !(p_min > 0.0)) || d == 0 || n_actions == 0 {
        return Err(Error::invalid("lambda_min", "d, A, lambda_min and p_min must be positive"));
    }
    let df = d as f64;
    let spread = if beta_known {
        lambda_min * lambda_min
    } else {
        (lambda_min * lambda_min).min(df * df * p_min)
    };
    let n = c * df.powi(3) * (2.0 * n_actions as f64 * df / p).ln()
        / (eps * eps * (1.0 - gamma).powi(2) * spread);
    Ok(n.ceil() as u64)
}

/// Dataset rows as CSV with header `s,a,s_next,b`.
pub fn write_dataset<W: Write>(dataset: &OffPolicyDataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in &dataset.rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_dataset(dataset: &OffPolicyDataset, path: impl AsRef<Path>) -> Result<()> {
    write_dataset(dataset, std::fs::File::create(path)?)
}

/// Reads rows written by [`write_dataset`]. The sampling distribution is
/// replaced by the empirical one.
pub fn read_dataset<R: Read>(mdp: &LinearAtstMdp, input: R) -> Result<OffPolicyDataset> {
    let mut rows = Vec::new();
    for r in csv::Reader::from_reader(input).deserialize() {
        let t: Transition = r?;
        if t.s >= mdp.num_states() || t.s_next >= mdp.num_states() || t.a >= mdp.num_actions() || t.b > 1 {
            return Err(Error::Dimension(format!("row {t:?} does not fit the model")));
        }
        rows.push(t);
    }
    let mut dist = vec![vec![0.0; mdp.num_actions()]; mdp.num_states()];
    let n = rows.len().max(1) as f64;
    for t in &rows {
        dist[t.s][t.a] += 1.0 / n;
    }
    Ok(finish_dataset(mdp, rows, dist))
}

/// Estimated quantities with their error certificate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateFile {
    /// Row-major `d × d` matrices, one per action.
    pub m_hat: Vec<Vec<Vec<f64>>>,
    pub beta_hat: Vec<f64>,
    pub beta_unseen: Vec<bool>,
    pub eps_certificate: EpsCertificate,
}

/// High-probability error levels of an estimate.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EpsCertificate {
    pub eps: f64,
    pub eps_beta: f64,
    pub p: f64,
    pub n: usize,
    pub sigma_min: f64,
    pub p_min_emp: f64,
    pub c: f64,
}

impl EpsCertificate {
    /// Certificate from the dataset's empirical spread. `eps_beta` is zero
    /// when burst probabilities are known.
    pub fn from_dataset(dataset: &OffPolicyDataset, d: usize, n_actions: usize, p: f64, c: f64, beta_known: bool) -> Self {
        let n = dataset.rows.len();
        let eps = if dataset.sigma_min > 0.0 {
            ridge_error_bound(c, d, n_actions, p, n, dataset.sigma_min)
        } else {
            f64::INFINITY
        };
        let eps_beta = if beta_known {
            0.0
        } else if dataset.p_min_emp > 0.0 {
            beta_error_bound(n_actions, p, n, dataset.p_min_emp).min(1.0)
        } else {
            1.0
        };
        Self {
            eps,
            eps_beta,
            p,
            n,
            sigma_min: dataset.sigma_min,
            p_min_emp: dataset.p_min_emp,
            c,
        }
    }
}

impl EstimateFile {
    pub fn new(matrices: &[DMatrix<f64>], beta: &BetaEstimate, eps_certificate: EpsCertificate) -> Self {
        Self {
            m_hat: matrices.iter().map(linalg::to_rows).collect(),
            beta_hat: beta.values.clone(),
            beta_unseen: beta.unseen.clone(),
            eps_certificate,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// A feature map built from logged data.
#[derive(Debug, Clone)]
pub struct EstimatedEngine {
    pub engine: PsiEngine,
    pub matrices: Vec<DMatrix<f64>>,
    pub beta: BetaEstimate,
    pub certificate: EpsCertificate,
}

impl EstimatedEngine {
    /// Whether the certificate allowed the normalized map.
    pub fn normalized(&self) -> bool {
        self.engine.mode() == EngineMode::Normalized
    }

    pub fn estimate_file(&self) -> EstimateFile {
        EstimateFile::new(&self.matrices, &self.beta, self.certificate)
    }
}

/// Ridge matrices plus burst frequencies (or the model's own values when
/// `beta_known`). The map is normalized when the certified matrix error is
/// small enough for it, and left unnormalized otherwise.
pub fn estimate_engine(
    mdp: &LinearAtstMdp,
    dataset: &OffPolicyDataset,
    p: f64,
    c: f64,
    beta_known: bool,
    lambda: f64,
) -> Result<EstimatedEngine> {
    let (d, n_actions) = (mdp.dim(), mdp.num_actions());
    let matrices = ridge_action_matrices(dataset, mdp, lambda)?;
    let mut beta = empirical_beta(dataset, n_actions);
    if beta_known {
        beta.values = mdp.betas().to_vec();
        beta.unseen = vec![false; n_actions];
    }
    let certificate = EpsCertificate::from_dataset(dataset, d, n_actions, p, c, beta_known);
    let set = ActionMatrixSet::from_matrices(matrices.clone())?;
    let engine = if certificate.eps <= max_psi_matrix_error(d, mdp.gamma()) {
        PsiEngine::build_estimated(mdp, set, beta.values.clone(), certificate.eps, certificate.eps_beta)?
    } else {
        tracing::warn!(
            eps = certificate.eps,
            max = max_psi_matrix_error(d, mdp.gamma()),
            "certified error too large to normalize; using the unnormalized map"
        );
        PsiEngine::estimated(mdp, set, beta.values.clone(), certificate.eps, certificate.eps_beta)?
    };
    Ok(EstimatedEngine {
        engine,
        matrices,
        beta,
        certificate,
    })
}

/// Largest spectral error over actions.
pub fn max_matrix_error(estimates: &[DMatrix<f64>], truth: &[DMatrix<f64>]) -> f64 {
    estimates
        .iter()
        .zip(truth)
        .map(|(e, t)| linalg::op_norm(&(e - t)))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::ActionMatrixSet;
    use crate::model::encode_tabular;
    use crate::sim::SeededRng;

    fn two_state() -> LinearAtstMdp {
        let p = vec![
            vec![vec![0.0, 1.0], vec![0.5, 0.5]],
            vec![vec![1.0, 0.0], vec![0.2, 0.8]],
        ];
        let r = vec![vec![0.1, 0.2], vec![0.3, 0.4]];
        encode_tabular(&p, &r, 0.8, vec![1.0, 0.3]).unwrap()
    }

    #[test]
    fn rank_one_design_closed_form() {
        let m = two_state();
        let mut dist = vec![vec![0.0; 2]; 2];
        dist[0][0] = 1.0; // (s0, a0) always moves to s1
        let n = 50;
        let ds = sample_dataset(&m, &dist, n, &mut SeededRng::new(1, 0)).unwrap();
        assert!(ds.rows.iter().all(|r| (r.s, r.a, r.s_next, r.b) == (0, 0, 1, 1)));
        let est = ridge_action_matrices(&ds, &m, 1.0).unwrap();
        // phi(s0, a0) = e_0, phi(s1, a) = e_{2 + a}
        for (a, mhat) in est.iter().enumerate() {
            let mut expected = DMatrix::zeros(4, 4);
            expected[(0, 2 + a)] = n as f64 / (n as f64 + 1.0);
            assert!((mhat - expected).amax() < 1e-12);
        }
    }

    #[test]
    fn huge_lambda_shrinks_to_zero() {
        let m = two_state();
        let ds = sample_dataset(&m, &uniform_dist(2, 2), 200, &mut SeededRng::new(2, 0)).unwrap();
        let est = ridge_action_matrices(&ds, &m, 1e12).unwrap();
        assert!(est.iter().all(|e| e.amax() < 1e-9));
    }

    #[test]
    fn ridge_converges() {
        let m = two_state();
        let truth = ActionMatrixSet::from_model(&m).unwrap();
        let ds = sample_dataset(&m, &uniform_dist(2, 2), 20000, &mut SeededRng::new(3, 0)).unwrap();
        let est = ridge_action_matrices(&ds, &m, 1.0).unwrap();
        assert!(max_matrix_error(&est, truth.matrices()) < 0.05);
        assert!((ds.sigma_min - 0.25).abs() < 0.02);
    }

    #[test]
    fn deterministic_betas_are_exact() {
        let m = two_state().with_beta(vec![1.0, 0.0]).unwrap();
        let ds = sample_dataset(&m, &uniform_dist(2, 2), 500, &mut SeededRng::new(4, 0)).unwrap();
        let b = empirical_beta(&ds, 2);
        assert_eq!(b.values, vec![1.0, 0.0]);
        assert_eq!(b.unseen, vec![false, false]);
    }

    #[test]
    fn unseen_action_falls_back_to_half() {
        let m = two_state();
        let dist = vec![vec![1.0, 0.0], vec![1.0, 0.0]];
        let ds = sample_dataset(&m, &dist, 100, &mut SeededRng::new(5, 0)).unwrap();
        let b = empirical_beta(&ds, 2);
        assert_eq!(b.values[1], 0.5);
        assert!(b.unseen[1]);
        assert_eq!(ds.p_min_emp, 0.0);
    }

    #[test]
    fn empty_support_is_degenerate() {
        let m = two_state();
        let err = sample_dataset(&m, &[vec![0.0; 2], vec![0.0; 2]], 10, &mut SeededRng::new(6, 0));
        assert!(matches!(err, Err(Error::DegenerateDistribution)));
    }

    #[test]
    fn sample_size_by_substitution() {
        let input = SampleSizeInput {
            d: 4,
            n_actions: 2,
            gamma: 0.8,
            eps: 0.1,
            p: 0.05,
            lambda_min: 0.25,
            p_min: 0.5,
            beta_known: false,
            c: 1.0,
        };
        // 64 ln(320) / (0.01 * 0.04 * min(0.0625, 8)) = 64 * 5.768321 / 2.5e-5
        let expected = (64.0 * 320f64.ln() / (0.01 * 0.04 * 0.0625)).ceil() as u64;
        assert_eq!(required_sample_size(&input).unwrap(), expected);
        let doubled = SampleSizeInput { eps: 0.2, ..input };
        let ratio = required_sample_size(&input).unwrap() as f64
            / required_sample_size(&doubled).unwrap() as f64;
        assert!((ratio - 4.0).abs() < 1e-4);
    }

    #[test]
    fn known_beta_ignores_p_min() {
        let base = SampleSizeInput {
            d: 4,
            n_actions: 2,
            gamma: 0.8,
            eps: 0.1,
            p: 0.05,
            lambda_min: 0.5,
            p_min: 0.001,
            beta_known: true,
            c: 1.0,
        };
        let other = SampleSizeInput { p_min: 0.4, ..base };
        assert_eq!(required_sample_size(&base).unwrap(), required_sample_size(&other).unwrap());
        let unknown = SampleSizeInput { beta_known: false, ..base };
        assert!(required_sample_size(&unknown).unwrap() > required_sample_size(&base).unwrap());
    }

    #[test]
    fn dataset_csv_round_trip() {
        let m = two_state();
        let ds = sample_dataset(&m, &uniform_dist(2, 2), 30, &mut SeededRng::new(7, 0)).unwrap();
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("s,a,s_next,b"));
        let back = read_dataset(&m, buf.as_slice()).unwrap();
        assert_eq!(back.rows, ds.rows);
    }
}
