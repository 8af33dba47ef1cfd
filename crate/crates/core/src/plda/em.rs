use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use super::linalg::{check_finite, cholesky, floor_eigenvalues, log_det_chol, min_eigenvalue, ridge, symmetrize};
use super::PldaModel;
use crate::config::KvConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmConfig {
    pub iterations: usize,
    /// Stop once the log-likelihood gain of an iteration falls below this.
    pub tolerance: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            iterations: 10,
            tolerance: 1e-6,
        }
    }
}

impl EmConfig {
    pub const KEYS: &'static [&'static str] = &["em_iterations", "em_tolerance"];

    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let d = EmConfig::default();
        Ok(EmConfig {
            iterations: kv.get_or("em_iterations", d.iterations)?,
            tolerance: kv.get_or("em_tolerance", d.tolerance)?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct PldaFit {
    pub model: PldaModel,
    /// Marginal log-likelihood of the initial model followed by one entry
    /// per completed iteration.
    pub log_likelihoods: Vec<f64>,
}

/// Sufficient statistics of grouped data.
struct Stats {
    dim: usize,
    total: usize,
    /// (count, sum) per speaker.
    speakers: Vec<(usize, DVector<f64>)>,
    /// Sum of e e' over all embeddings.
    scatter: DMatrix<f64>,
    /// Sum over speakers of the scatter about the speaker mean.
    within: DMatrix<f64>,
    /// Smallest within-speaker variance EM may reach, relative to the
    /// average total variance. Only data with a degenerate within-speaker
    /// subspace ever hits it.
    floor: f64,
}

const WITHIN_FLOOR: f64 = 1e-6;

impl Stats {
    fn new(groups: &[Vec<Vec<f64>>]) -> Result<Self> {
        if groups.len() < 2 {
            return Err(Error::Precondition(format!(
                "PLDA training needs at least 2 speakers, got {}",
                groups.len()
            )));
        }
        let dim = groups
            .iter()
            .flat_map(|g| g.first())
            .map(|e| e.len())
            .next()
            .ok_or_else(|| Error::Precondition("no embeddings".into()))?;
        if dim == 0 {
            return Err(Error::InvalidArgument("zero-dimensional embeddings".into()));
        }
        let mut speakers = Vec::with_capacity(groups.len());
        let mut scatter = DMatrix::zeros(dim, dim);
        let mut within = DMatrix::zeros(dim, dim);
        let mut total = 0;
        for (s, g) in groups.iter().enumerate() {
            if g.is_empty() {
                return Err(Error::Precondition(format!("speaker {s} has no embeddings")));
            }
            let mut sum = DVector::zeros(dim);
            let xs: Vec<DVector<f64>> = g
                .iter()
                .map(|e| {
                    if e.len() != dim {
                        return Err(Error::DimensionMismatch {
                            expected: dim,
                            actual: e.len(),
                        });
                    }
                    if !e.iter().all(|v| v.is_finite()) {
                        return Err(Error::NonFinite("embedding".into()));
                    }
                    Ok(DVector::from_column_slice(e))
                })
                .collect::<Result<_>>()?;
            for x in &xs {
                sum += x;
                scatter.ger(1.0, x, x, 1.0);
            }
            let mean = &sum / g.len() as f64;
            for x in &xs {
                let c = x - &mean;
                within.ger(1.0, &c, &c, 1.0);
            }
            total += g.len();
            speakers.push((g.len(), sum));
        }
        if speakers.iter().all(|(n, _)| *n < 2) {
            return Err(Error::Precondition(
                "within-speaker covariance is unidentifiable: no speaker has two or more embeddings".into(),
            ));
        }
        let mut mean = DVector::zeros(dim);
        for (_, sum) in &speakers {
            mean += sum;
        }
        mean /= total as f64;
        let variance = ((&scatter / total as f64).trace() - mean.norm_squared()) / dim as f64;
        let floor = WITHIN_FLOOR * if variance > 0.0 { variance } else { 1.0 };
        Ok(Stats {
            dim,
            total,
            speakers,
            scatter: symmetrize(&scatter),
            within: symmetrize(&within),
            floor,
        })
    }
}

/// Total marginal log-likelihood of grouped embeddings under `model`.
pub fn marginal_log_likelihood(model: &PldaModel, groups: &[Vec<Vec<f64>>]) -> Result<f64> {
    let stats = Stats::new(groups)?;
    if stats.dim != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            actual: stats.dim,
        });
    }
    log_likelihood(model, &stats)
}

fn log_likelihood(model: &PldaModel, stats: &Stats) -> Result<f64> {
    let d = stats.dim as f64;
    let c_within = cholesky(&model.lambda, "within-speaker covariance")?;
    let logdet_within = log_det_chol(&c_within);
    let inv_within = c_within.inverse();
    let mut ll = -0.5 * (inv_within.component_mul(&stats.within)).sum();
    let mut by_count: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (s, (n, _)) in stats.speakers.iter().enumerate() {
        by_count.entry(*n).or_default().push(s);
    }
    for (&n, members) in &by_count {
        let nf = n as f64;
        let c_n = cholesky(&(&model.lambda + &model.gamma * nf), "marginal covariance")?;
        let logdet_n = log_det_chol(&c_n);
        for &s in members {
            let centred = &stats.speakers[s].1 / nf - &model.mu;
            let solved = c_n.solve(&centred);
            ll += -0.5 * nf * d * (2.0 * PI).ln()
                - 0.5 * (nf - 1.0) * logdet_within
                - 0.5 * logdet_n
                - 0.5 * nf * centred.dot(&solved);
        }
    }
    Ok(ll)
}

fn initial_model(stats: &Stats) -> Result<PldaModel> {
    let d = stats.dim;
    let s = stats.speakers.len() as f64;
    let mut mu = DVector::zeros(d);
    for (_, sum) in &stats.speakers {
        mu += sum;
    }
    mu /= stats.total as f64;
    let dof = stats.total - stats.speakers.len();
    let mut lambda = symmetrize(&(&stats.within / dof as f64));
    if cholesky(&lambda, "").is_err() {
        log::warn!(target: "plda", "initial within-speaker covariance is singular; adding a ridge");
        let scale = (&stats.scatter / stats.total as f64 - &mu * mu.transpose()).trace() / d as f64;
        lambda = ridge(&lambda, scale);
    }
    let mut gamma = DMatrix::zeros(d, d);
    for (n, sum) in &stats.speakers {
        let c = sum / *n as f64 - &mu;
        gamma.ger(1.0, &c, &c, 1.0);
    }
    gamma = symmetrize(&(gamma / s));
    PldaModel::new(mu, gamma, lambda)
}

/// EM estimation of the two-covariance model from embeddings grouped by
/// speaker.
pub fn fit_plda(groups: &[Vec<Vec<f64>>], cfg: &EmConfig) -> Result<PldaFit> {
    if cfg.iterations == 0 {
        return Err(Error::InvalidArgument("EM needs at least one iteration".into()));
    }
    let stats = Stats::new(groups)?;
    let mut model = initial_model(&stats)?;
    let mut lls = vec![log_likelihood(&model, &stats)?];
    let mut warned = false;
    for it in 0..cfg.iterations {
        let (next, floored) = em_step(&model, &stats)?;
        if floored && !warned {
            log::warn!(target: "plda", "within-speaker covariance is degenerate; flooring its eigenvalues at {:e}", stats.floor);
            warned = true;
        }
        model = next;
        let ll = log_likelihood(&model, &stats)?;
        let gain = ll - lls[lls.len() - 1];
        log::debug!(target: "plda", "EM iteration {} log-likelihood {ll:.6}", it + 1);
        lls.push(ll);
        if gain.abs() < cfg.tolerance {
            break;
        }
    }
    Ok(PldaFit {
        model,
        log_likelihoods: lls,
    })
}

fn em_step(model: &PldaModel, stats: &Stats) -> Result<(PldaModel, bool)> {
    let d = stats.dim;
    let s_count = stats.speakers.len();
    let mut by_count: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (s, (n, _)) in stats.speakers.iter().enumerate() {
        by_count.entry(*n).or_default().push(s);
    }

    // E-step: posterior y_s ~ N(m_s, C_s) with
    // K = gamma (gamma + lambda / n)^-1, m_s = K (mean_s - mu), C_s = gamma - K gamma
    let mut post_mean: Vec<DVector<f64>> = vec![DVector::zeros(d); s_count];
    let mut cov_speaker_sum = DMatrix::zeros(d, d);
    let mut cov_weighted_sum = DMatrix::zeros(d, d);
    for (&n, members) in &by_count {
        let nf = n as f64;
        let c = cholesky(&(&model.gamma + &model.lambda / nf), "posterior normalizer")?;
        let gain = c.solve(&model.gamma).transpose();
        let post_cov = symmetrize(&(&model.gamma - &gain * &model.gamma));
        for &s in members {
            let centred = &stats.speakers[s].1 / nf - &model.mu;
            post_mean[s] = &gain * centred;
        }
        let k = members.len() as f64;
        cov_speaker_sum += &post_cov * k;
        cov_weighted_sum += &post_cov * (k * nf);
    }

    // M-step
    let total = stats.total as f64;
    let mut mu = DVector::zeros(d);
    for ((n, sum), m) in stats.speakers.iter().zip(&post_mean) {
        mu += sum - m * *n as f64;
    }
    mu /= total;

    let mut gamma = cov_speaker_sum;
    for m in &post_mean {
        gamma.ger(1.0, m, m, 1.0);
    }
    gamma = symmetrize(&(gamma / s_count as f64));

    // sum_i (e_i - c_s)(e_i - c_s)' with c_s = mu + m_s, expanded through the
    // per-speaker sums
    let mut lambda = stats.scatter.clone() + cov_weighted_sum;
    for ((n, sum), m) in stats.speakers.iter().zip(&post_mean) {
        let c = &mu + m;
        lambda.ger(-1.0, &c, sum, 1.0);
        lambda.ger(-1.0, sum, &c, 1.0);
        lambda.ger(*n as f64, &c, &c, 1.0);
    }
    lambda = symmetrize(&(lambda / total));

    check_finite(&gamma, "between-speaker covariance update")?;
    check_finite(&lambda, "within-speaker covariance update")?;
    let (lambda, floored) = floor_eigenvalues(&lambda, stats.floor);
    cholesky(&lambda, "within-speaker covariance update")?;
    let min = min_eigenvalue(&gamma);
    if min < -1e-9 * (1.0 + gamma.abs().max()) {
        return Err(Error::Numerical(format!(
            "between-speaker covariance update is not positive semidefinite (eigenvalue {min:e})"
        )));
    }
    Ok((PldaModel::new(mu, gamma, lambda)?, floored))
}
