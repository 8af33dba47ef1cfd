use nalgebra::{DMatrix, DVector};

use super::linalg::{cholesky, mean_and_covariance, ridge, sorted_eigen, symmetrize};
use super::PldaModel;
use crate::config::KvConfig;
use crate::error::{Error, Result};

/// Share of the excess adaptation variance given to each covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptConfig {
    pub alpha_within: f64,
    pub alpha_between: f64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            alpha_within: 0.75,
            alpha_between: 0.25,
        }
    }
}

impl AdaptConfig {
    pub const KEYS: &'static [&'static str] = &["alpha_within", "alpha_between"];

    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let d = AdaptConfig::default();
        let cfg = AdaptConfig {
            alpha_within: kv.get_or("alpha_within", d.alpha_within)?,
            alpha_between: kv.get_or("alpha_between", d.alpha_between)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha_within >= 0.0
            && self.alpha_between >= 0.0
            && ((self.alpha_within + self.alpha_between) - 1.0).abs() <= 1e-9;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "adaptation weights must be non-negative and sum to 1 (within {}, between {})",
                self.alpha_within, self.alpha_between
            )))
        }
    }
}

/// Unsupervised adaptation from in-domain embeddings, which must already
/// be preprocessed the same way as the model's training data.
pub fn adapt(model: &PldaModel, embeddings: &[Vec<f64>], cfg: &AdaptConfig) -> Result<PldaModel> {
    cfg.validate()?;
    let d = model.dim();
    if embeddings.len() < d + 1 {
        return Err(Error::Precondition(format!(
            "adaptation needs at least {} embeddings, got {}",
            d + 1,
            embeddings.len()
        )));
    }
    let xs: Vec<DVector<f64>> = embeddings
        .iter()
        .map(|e| {
            if e.len() != d {
                Err(Error::DimensionMismatch {
                    expected: d,
                    actual: e.len(),
                })
            } else {
                Ok(DVector::from_column_slice(e))
            }
        })
        .collect::<Result<_>>()?;
    let (mean, cov) = mean_and_covariance(&xs);
    adapt_from_stats(model, &mean, &cov, cfg)
}

/// Moves the model mean to `mean` and, in every direction where `cov`
/// exceeds the model's total covariance, adds the excess to the between
/// and within covariances in the configured proportions.
pub fn adapt_from_stats(
    model: &PldaModel,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    cfg: &AdaptConfig,
) -> Result<PldaModel> {
    cfg.validate()?;
    let d = model.dim();
    if mean.len() != d || cov.nrows() != d || cov.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: if mean.len() != d { mean.len() } else { cov.nrows() },
        });
    }
    if !mean.iter().chain(cov.iter()).all(|v| v.is_finite()) {
        return Err(Error::NonFinite("adaptation statistics".into()));
    }
    let mut cov = symmetrize(cov);
    if cholesky(&cov, "").is_err() {
        log::warn!(target: "plda", "adaptation covariance is rank deficient; adding a ridge");
        cov = ridge(&cov, model.total_covariance().trace() / d as f64);
    }

    // T = L L'; with M = L^-1 S L^-T = U D U', W = U' L^-1 maps T to I and S to D
    let total = model.total_covariance();
    let l = cholesky(&total, "total covariance")?.l();
    let l_inv = l
        .clone()
        .solve_lower_triangular(&DMatrix::identity(d, d))
        .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
    let m = symmetrize(&(&l_inv * &cov * l_inv.transpose()));
    let (values, vectors) = sorted_eigen(&m);
    let excess = DMatrix::from_diagonal(&values.map(|v| (v - 1.0).max(0.0)));
    let back = &l * &vectors;
    let delta = symmetrize(&(&back * excess * back.transpose()));

    let gamma = &model.gamma + &delta * cfg.alpha_between;
    let lambda = &model.lambda + &delta * cfg.alpha_within;
    PldaModel::new(mean.clone(), gamma, lambda)
}
