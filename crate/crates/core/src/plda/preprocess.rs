use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::linalg::{cholesky, ridge, sorted_eigen, symmetrize};
use crate::error::{Error, Result};
use crate::matrix::{put_f64s, Cursor};

pub const CHAIN_MAGIC: &[u8; 4] = b"SVC1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PreprocessOptions {
    /// Output dimension of the LDA projection; `None` disables it.
    pub lda_dim: Option<usize>,
    pub length_norm: bool,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        PreprocessOptions {
            lda_dim: None,
            length_norm: true,
        }
    }
}

/// Mean subtraction, optional LDA projection, then optional scaling to
/// length `sqrt(dim)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessChain {
    pub mean: DVector<f64>,
    /// `out_dim x in_dim`.
    pub projection: Option<DMatrix<f64>>,
    pub length_norm: bool,
}

pub(crate) fn scale_to_norm(x: &mut [f64], target: f64) {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        let k = target / norm;
        x.iter_mut().for_each(|v| *v *= k);
    }
}

impl PreprocessChain {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.projection.as_ref().map_or(self.mean.len(), |p| p.nrows())
    }

    /// Norm that length normalization scales to, when enabled.
    pub fn target_norm(&self) -> Option<f64> {
        self.length_norm.then(|| (self.output_dim() as f64).sqrt())
    }

    /// Mean subtraction and projection only.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        let centred = DVector::from_iterator(x.len(), x.iter().zip(self.mean.iter()).map(|(a, m)| a - m));
        Ok(match &self.projection {
            Some(p) => (p * centred).as_slice().to_vec(),
            None => centred.as_slice().to_vec(),
        })
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = self.project(x)?;
        if let Some(norm) = self.target_norm() {
            scale_to_norm(&mut y, norm);
        }
        Ok(y)
    }

    pub fn apply_f32(&self, x: &[f32]) -> Result<Vec<f64>> {
        let v: Vec<f64> = x.iter().map(|&a| a as f64).collect();
        self.apply(&v)
    }

    /// Same chain with a different centring vector.
    pub fn with_mean(&self, mean: DVector<f64>) -> Result<Self> {
        if mean.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: mean.len(),
            });
        }
        Ok(PreprocessChain {
            mean,
            ..self.clone()
        })
    }

    /// `SVC1`, u32 input dim, u32 output dim (0 = no projection),
    /// u8 length-norm flag, f64 mean, f64 projection row-major.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = CHAIN_MAGIC.to_vec();
        out.extend_from_slice(&(self.input_dim() as u32).to_le_bytes());
        let out_dim = self.projection.as_ref().map_or(0, |p| p.nrows());
        out.extend_from_slice(&(out_dim as u32).to_le_bytes());
        out.push(self.length_norm as u8);
        put_f64s(&mut out, self.mean.as_slice());
        if let Some(p) = &self.projection {
            put_f64s(&mut out, p.transpose().as_slice());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<Self> {
        let mut cur = Cursor::new(bytes, origin);
        cur.magic(CHAIN_MAGIC)?;
        let d = cur.u32()? as usize;
        let k = cur.u32()? as usize;
        let length_norm = match cur.u8()? {
            0 => false,
            1 => true,
            v => return Err(Error::InvalidArgument(format!("{origin}: bad length-norm flag {v}"))),
        };
        if d == 0 {
            return Err(Error::InvalidArgument(format!("{origin}: zero dimension")));
        }
        let mean = DVector::from_vec(cur.f64s(d)?);
        let projection = if k > 0 {
            Some(DMatrix::from_row_slice(k, d, &cur.f64s(k * d)?))
        } else {
            None
        };
        if !cur.is_at_end() {
            return Err(Error::InvalidArgument(format!("{origin}: trailing bytes")));
        }
        Ok(PreprocessChain {
            mean,
            projection,
            length_norm,
        })
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

/// Fits the chain on labelled embeddings. Labels are arbitrary keys; only
/// equality matters.
pub fn fit_preprocess<L: Ord>(
    embeddings: &[Vec<f64>],
    labels: &[L],
    options: &PreprocessOptions,
) -> Result<PreprocessChain> {
    if embeddings.is_empty() {
        return Err(Error::Precondition("no embeddings to fit preprocessing on".into()));
    }
    if embeddings.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} embeddings but {} labels",
            embeddings.len(),
            labels.len()
        )));
    }
    let d = embeddings[0].len();
    if d == 0 {
        return Err(Error::InvalidArgument("zero-dimensional embeddings".into()));
    }
    let xs: Vec<DVector<f64>> = embeddings
        .iter()
        .map(|e| {
            if e.len() != d {
                Err(Error::DimensionMismatch {
                    expected: d,
                    actual: e.len(),
                })
            } else if !e.iter().all(|v| v.is_finite()) {
                Err(Error::NonFinite("embedding".into()))
            } else {
                Ok(DVector::from_column_slice(e))
            }
        })
        .collect::<Result<_>>()?;
    let n = xs.len() as f64;
    let mut mean = DVector::zeros(d);
    for x in &xs {
        mean += x;
    }
    mean /= n;

    let projection = match options.lda_dim {
        None => None,
        Some(k) => Some(fit_lda(&xs, labels, &mean, k)?),
    };
    Ok(PreprocessChain {
        mean,
        projection,
        length_norm: options.length_norm,
    })
}

fn fit_lda<L: Ord>(xs: &[DVector<f64>], labels: &[L], mean: &DVector<f64>, k: usize) -> Result<DMatrix<f64>> {
    let d = mean.len();
    if k == 0 || k > d {
        return Err(Error::InvalidArgument(format!("LDA dimension {k} must lie in 1..={d}")));
    }
    let mut groups: BTreeMap<&L, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    if groups.len() < 2 {
        return Err(Error::Precondition(format!("LDA needs at least 2 speakers, got {}", groups.len())));
    }
    if k >= groups.len() {
        log::warn!(target: "plda", "LDA dimension {k} exceeds {} speakers minus one; trailing directions carry no between-speaker scatter", groups.len());
    }
    let n = xs.len() as f64;
    let mut within = DMatrix::zeros(d, d);
    let mut between = DMatrix::zeros(d, d);
    for members in groups.values() {
        let mut m = DVector::zeros(d);
        for &i in members {
            m += &xs[i];
        }
        m /= members.len() as f64;
        for &i in members {
            let c = &xs[i] - &m;
            within.ger(1.0, &c, &c, 1.0);
        }
        let c = &m - mean;
        between.ger(members.len() as f64, &c, &c, 1.0);
    }
    within = symmetrize(&(within / n));
    between = symmetrize(&(between / n));

    let chol = match cholesky(&within, "within-class scatter") {
        Ok(c) => c,
        Err(_) => {
            log::warn!(target: "plda", "within-class scatter is singular; adding a ridge");
            let scale = (&within + &between).trace() / d as f64;
            cholesky(&ridge(&within, scale), "regularized within-class scatter")?
        }
    };
    let l = chol.l();
    // whiten the within-class scatter, then diagonalize the between-class one
    let l_inv = l
        .clone()
        .solve_lower_triangular(&DMatrix::identity(d, d))
        .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
    let whitened = symmetrize(&(&l_inv * &between * l_inv.transpose()));
    let (_, vectors) = sorted_eigen(&whitened);
    let top = vectors.columns(0, k).into_owned();
    Ok(top.transpose() * l_inv)
}
