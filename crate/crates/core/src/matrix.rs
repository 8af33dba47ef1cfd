//! Frame-level feature matrices, utterance embeddings and their binary
//! file formats.
//!
//! Matrix file (`SVM1`): magic, little-endian `u32` rows and cols, then
//! `rows * cols` little-endian `f32` values in row-major order.
//!
//! Embedding file (`SVE1`): the same layout with one row per embedding,
//! followed by an id table of `u32`-length-prefixed UTF-8 strings, one
//! per row.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MATRIX_MAGIC: &[u8; 4] = b"SVM1";
pub const EMBEDDING_MAGIC: &[u8; 4] = b"SVE1";

/// A `rows x cols` matrix of finite `f32` values, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::EmptyMatrix);
        }
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                actual: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("row {}, col {}", i / cols, i % cols)));
        }
        Ok(FeatureMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidArgument("ragged rows".into()));
        }
        FeatureMatrix::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    /// Stacks matrices with equal column count on top of each other.
    pub fn vstack(parts: &[&FeatureMatrix]) -> Result<Self> {
        let first = parts.first().ok_or(Error::EmptyMatrix)?;
        let mut data = Vec::new();
        for p in parts {
            if p.cols != first.cols {
                return Err(Error::DimensionMismatch {
                    expected: first.cols,
                    actual: p.cols,
                });
            }
            data.extend_from_slice(&p.data);
        }
        FeatureMatrix::new(data.len() / first.cols, first.cols, data)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * self.data.len());
        out.extend_from_slice(MATRIX_MAGIC);
        encode_body(&mut out, self.rows, self.cols, &self.data);
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<Self> {
        let mut cur = Cursor::new(bytes, origin);
        cur.magic(MATRIX_MAGIC)?;
        let (rows, cols, data) = decode_body(&mut cur)?;
        if !cur.is_at_end() {
            return Err(Error::InvalidArgument(format!("{origin}: trailing bytes")));
        }
        FeatureMatrix::new(rows, cols, data)
    }
}

pub fn write_matrix(path: impl AsRef<Path>, m: &FeatureMatrix) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, m.to_bytes()).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    FeatureMatrix::from_bytes(&bytes, &path.display().to_string())
}

/// A single utterance-level or speaker-level embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub id: String,
    pub values: Vec<f32>,
}

impl Embedding {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| v as f64).collect()
    }
}

/// A collection of equal-dimension embeddings keyed by id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingSet {
    dim: usize,
    items: Vec<Embedding>,
}

impl EmbeddingSet {
    pub fn new(dim: usize) -> Self {
        EmbeddingSet { dim, items: Vec::new() }
    }

    pub fn push(&mut self, e: Embedding) -> Result<()> {
        if self.items.is_empty() && self.dim == 0 {
            self.dim = e.dim();
        }
        if e.dim() != self.dim || self.dim == 0 {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: e.dim(),
            });
        }
        if let Some(i) = e.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("embedding `{}` component {i}", e.id)));
        }
        self.items.push(e);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Embedding> {
        self.items.iter()
    }

    pub fn get(&self, id: &str) -> Option<&Embedding> {
        self.items.iter().find(|e| e.id == id)
    }

    /// Id to index lookup table.
    pub fn index(&self) -> std::collections::HashMap<&str, usize> {
        self.items.iter().enumerate().map(|(i, e)| (e.id.as_str(), i)).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(EMBEDDING_MAGIC);
        let flat: Vec<f32> = self.items.iter().flat_map(|e| e.values.iter().copied()).collect();
        encode_body(&mut out, self.items.len(), self.dim, &flat);
        for e in &self.items {
            out.extend_from_slice(&(e.id.len() as u32).to_le_bytes());
            out.extend_from_slice(e.id.as_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<Self> {
        let mut cur = Cursor::new(bytes, origin);
        cur.magic(EMBEDDING_MAGIC)?;
        let (rows, cols, data) = decode_body(&mut cur)?;
        if rows == 0 || cols == 0 {
            return Err(Error::EmptyMatrix);
        }
        let mut set = EmbeddingSet::new(cols);
        for (r, chunk) in data.chunks_exact(cols).enumerate() {
            let len = cur.u32()? as usize;
            let id = std::str::from_utf8(cur.take(len)?)
                .map_err(|_| Error::InvalidArgument(format!("{origin}: id {r} is not UTF-8")))?
                .to_string();
            set.push(Embedding {
                id,
                values: chunk.to_vec(),
            })?;
        }
        if !cur.is_at_end() {
            return Err(Error::InvalidArgument(format!("{origin}: trailing bytes")));
        }
        Ok(set)
    }
}

impl<'a> IntoIterator for &'a EmbeddingSet {
    type Item = &'a Embedding;
    type IntoIter = std::slice::Iter<'a, Embedding>;

    fn into_iter(self) -> Self::IntoIter {
        self.items.iter()
    }
}

pub fn write_embeddings(path: impl AsRef<Path>, set: &EmbeddingSet) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, set.to_bytes()).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    EmbeddingSet::from_bytes(&bytes, &path.display().to_string())
}

fn encode_body(out: &mut Vec<u8>, rows: usize, cols: usize, data: &[f32]) {
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn decode_body(cur: &mut Cursor<'_>) -> Result<(usize, usize, Vec<f32>)> {
    let rows = cur.u32()? as usize;
    let cols = cur.u32()? as usize;
    if rows == 0 || cols == 0 {
        return Err(Error::EmptyMatrix);
    }
    let n = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Truncated(cur.origin.to_string()))?;
    let payload = cur.take(n)?;
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Ok((rows, cols, data))
}

/// Little-endian reader over a byte slice.
pub(crate) struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    pub(crate) origin: &'a str,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(bytes: &'a [u8], origin: &'a str) -> Self {
        Cursor { bytes, pos: 0, origin }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Truncated(self.origin.to_string())),
        }
    }

    pub(crate) fn magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        match self.take(4) {
            Ok(m) if m == magic => Ok(()),
            _ => Err(Error::BadMagic(self.origin.to_string())),
        }
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub(crate) fn i32(&mut self) -> Result<i32> {
        let b = self.take(4)?;
        Ok(i32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub(crate) fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Truncated(self.origin.to_string()))?)?;
        let out: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        if let Some(i) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{} value {i}", self.origin)));
        }
        Ok(out)
    }

    pub(crate) fn is_at_end(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

pub(crate) fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_round_trip() {
        let m = FeatureMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let bytes = m.to_bytes();
        assert_eq!(bytes.len(), 4 + 4 + 4 + 16);
        assert_eq!(&bytes[..4], b"SVM1");
        assert_eq!(&bytes[4..8], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &1.0f32.to_le_bytes());
        assert_eq!(FeatureMatrix::from_bytes(&bytes, "mem").unwrap(), m);
    }

    #[test]
    fn zero_row_header_is_empty_matrix() {
        let mut bytes = b"SVM1".to_vec();
        bytes.extend_from_slice(&0u32.to_le_bytes());
        bytes.extend_from_slice(&3u32.to_le_bytes());
        let err = FeatureMatrix::from_bytes(&bytes, "mem").unwrap_err();
        assert_eq!(err.to_string(), "empty matrix");
    }

    #[test]
    fn bad_magic_truncation_and_nan_rejected() {
        let m = FeatureMatrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let mut bytes = m.to_bytes();
        bytes[0] = b'X';
        assert!(matches!(FeatureMatrix::from_bytes(&bytes, "m"), Err(Error::BadMagic(_))));

        let bytes = m.to_bytes();
        assert!(matches!(
            FeatureMatrix::from_bytes(&bytes[..bytes.len() - 1], "m"),
            Err(Error::Truncated(_))
        ));

        let mut bytes = m.to_bytes();
        bytes[12..16].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(FeatureMatrix::from_bytes(&bytes, "m"), Err(Error::NonFinite(_))));
    }

    #[test]
    fn embedding_file_round_trip() {
        let mut set = EmbeddingSet::new(3);
        set.push(Embedding { id: "r1".into(), values: vec![1.0, -2.0, 0.5] }).unwrap();
        set.push(Embedding { id: "réc-2".into(), values: vec![0.0, 3.0, 1e-3] }).unwrap();
        let bytes = set.to_bytes();
        assert_eq!(&bytes[..4], b"SVE1");
        let back = EmbeddingSet::from_bytes(&bytes, "mem").unwrap();
        assert_eq!(back, set);
        assert!(set.push(Embedding { id: "bad".into(), values: vec![1.0] }).is_err());
    }

    #[test]
    fn vstack_concatenates_rows() {
        let a = FeatureMatrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let b = FeatureMatrix::from_rows(&[vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        let s = FeatureMatrix::vstack(&[&a, &b]).unwrap();
        assert_eq!(s.rows(), 3);
        assert_eq!(s.row(2), &[5.0, 6.0]);
    }
}
