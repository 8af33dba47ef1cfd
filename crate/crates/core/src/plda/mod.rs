//! Two-covariance PLDA back end.
//!
//! An embedding is modelled as `e = mu + y + z` with speaker factor
//! `y ~ N(0, gamma)` shared by all embeddings of a speaker and residual
//! `z ~ N(0, lambda)` drawn per embedding.

mod adapt;
mod em;
pub(crate) mod linalg;
mod preprocess;

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

pub use adapt::{adapt, adapt_from_stats, AdaptConfig};
pub use em::{fit_plda, marginal_log_likelihood, EmConfig, PldaFit};
pub use preprocess::{fit_preprocess, PreprocessChain, PreprocessOptions, CHAIN_MAGIC};
pub(crate) use preprocess::scale_to_norm;

use crate::error::{Error, Result};
use crate::matrix::{put_f64s, Cursor};
use linalg::{check_finite, cholesky, log_det_chol, min_eigenvalue, symmetrize};

pub const PLDA_MAGIC: &[u8; 4] = b"SVP1";

#[derive(Debug, Clone, PartialEq)]
pub struct PldaModel {
    pub mu: DVector<f64>,
    pub gamma: DMatrix<f64>,
    pub lambda: DMatrix<f64>,
}

impl PldaModel {
    /// Validates shapes, finiteness, symmetry and definiteness.
    pub fn new(mu: DVector<f64>, gamma: DMatrix<f64>, lambda: DMatrix<f64>) -> Result<Self> {
        let d = mu.len();
        if d == 0 {
            return Err(Error::InvalidArgument("PLDA dimension must be positive".into()));
        }
        for m in [&gamma, &lambda] {
            if m.nrows() != d || m.ncols() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: m.nrows().max(m.ncols()),
                });
            }
        }
        if !mu.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("PLDA mean".into()));
        }
        check_finite(&gamma, "between-speaker covariance")?;
        check_finite(&lambda, "within-speaker covariance")?;
        let scale = 1.0 + gamma.abs().max() + lambda.abs().max();
        for (m, what) in [(&gamma, "between-speaker"), (&lambda, "within-speaker")] {
            if (m - m.transpose()).abs().max() > 1e-9 * scale {
                return Err(Error::Numerical(format!("{what} covariance is not symmetric")));
            }
        }
        let gamma = symmetrize(&gamma);
        let lambda = symmetrize(&lambda);
        cholesky(&lambda, "within-speaker covariance")?;
        let min = min_eigenvalue(&gamma);
        if min < -1e-9 * scale {
            return Err(Error::Numerical(format!(
                "between-speaker covariance is not positive semidefinite (eigenvalue {min:e})"
            )));
        }
        Ok(PldaModel { mu, gamma, lambda })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn total_covariance(&self) -> DMatrix<f64> {
        &self.gamma + &self.lambda
    }

    pub fn scorer(&self) -> Result<PldaScorer> {
        PldaScorer::new(self)
    }

    /// Convenience for one-off scoring; build a [`PldaScorer`] for batches.
    pub fn score(&self, enrol: &[f64], test: &[f64]) -> Result<f64> {
        self.scorer()?.score(enrol, test)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = PLDA_MAGIC.to_vec();
        out.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        put_f64s(&mut out, self.mu.as_slice());
        put_f64s(&mut out, self.gamma.transpose().as_slice());
        put_f64s(&mut out, self.lambda.transpose().as_slice());
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<Self> {
        let mut cur = Cursor::new(bytes, origin);
        cur.magic(PLDA_MAGIC)?;
        let d = cur.u32()? as usize;
        if d == 0 {
            return Err(Error::InvalidArgument(format!("{origin}: zero dimension")));
        }
        let mu = DVector::from_vec(cur.f64s(d)?);
        let gamma = DMatrix::from_row_slice(d, d, &cur.f64s(d * d)?);
        let lambda = DMatrix::from_row_slice(d, d, &cur.f64s(d * d)?);
        if !cur.is_at_end() {
            return Err(Error::InvalidArgument(format!("{origin}: trailing bytes")));
        }
        PldaModel::new(mu, gamma, lambda)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }
}

/// Precomputed log-likelihood-ratio scorer.
///
/// With `s = a + b` and `t = a - b` (both centred on `mu`) the same-speaker
/// and different-speaker covariances decouple, giving
/// `llr = -1/4 (s' A s + t' B t) + c` where
/// `A = (lambda + 2 gamma)^-1 - T^-1`, `B = lambda^-1 - T^-1`, `T = gamma + lambda`.
/// The form is symmetric in `a` and `b` bit for bit.
#[derive(Debug, Clone)]
pub struct PldaScorer {
    mu: DVector<f64>,
    sum_form: DMatrix<f64>,
    diff_form: DMatrix<f64>,
    offset: f64,
}

impl PldaScorer {
    pub fn new(model: &PldaModel) -> Result<Self> {
        let d = model.dim();
        let total = model.total_covariance();
        let same = &model.lambda + &model.gamma * 2.0;
        let c_total = cholesky(&total, "total covariance")?;
        let c_same = cholesky(&same, "same-speaker covariance")?;
        let c_within = cholesky(&model.lambda, "within-speaker covariance")?;
        let inv_total = c_total.inverse();
        let sum_form = symmetrize(&(c_same.inverse() - &inv_total));
        let diff_form = symmetrize(&(c_within.inverse() - &inv_total));
        let offset = -0.5 * (log_det_chol(&c_same) + log_det_chol(&c_within) - 2.0 * log_det_chol(&c_total));
        debug_assert_eq!(sum_form.nrows(), d);
        Ok(PldaScorer {
            mu: model.mu.clone(),
            sum_form,
            diff_form,
            offset,
        })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn score(&self, enrol: &[f64], test: &[f64]) -> Result<f64> {
        let d = self.dim();
        for x in [enrol, test] {
            if x.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: x.len(),
                });
            }
        }
        let mut s = DVector::zeros(d);
        let mut t = DVector::zeros(d);
        for i in 0..d {
            let a = enrol[i] - self.mu[i];
            let b = test[i] - self.mu[i];
            s[i] = a + b;
            t[i] = a - b;
        }
        let q = s.dot(&(&self.sum_form * &s)) + t.dot(&(&self.diff_form * &t));
        Ok(-0.25 * q + self.offset)
    }

    /// Scores `test` against the average of several preprocessed
    /// enrolment embeddings. When `target_norm` is given the average is
    /// rescaled to that length first. A single embedding is scored as is.
    pub fn score_enrolment(&self, enrol: &[&[f64]], test: &[f64], target_norm: Option<f64>) -> Result<f64> {
        match enrol {
            [] => Err(Error::Precondition("empty enrolment set".into())),
            [single] => self.score(single, test),
            many => {
                let d = self.dim();
                let mut avg = vec![0.0; d];
                for e in many {
                    if e.len() != d {
                        return Err(Error::DimensionMismatch {
                            expected: d,
                            actual: e.len(),
                        });
                    }
                    for (a, v) in avg.iter_mut().zip(e.iter()) {
                        *a += v;
                    }
                }
                let n = many.len() as f64;
                avg.iter_mut().for_each(|a| *a /= n);
                if let Some(norm) = target_norm {
                    scale_to_norm(&mut avg, norm);
                }
                self.score(&avg, test)
            }
        }
    }
}
