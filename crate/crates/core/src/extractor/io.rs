//! `SVX1` model file.
//!
//! ```text
//! "SVX1"
//! u32 frame layer count
//!   per frame layer: u32 offset count, i32 offsets, u32 input dim,
//!   u32 output dim, u8 nonlinearity (1 = ReLU), f64 weights, f64 bias
//! u32 segment layer count
//!   per segment layer: u32 in, u32 out, f64 weights, f64 bias
//! head: u32 in, u32 out, f64 weights, f64 bias
//! u32 embedding tap
//! ```
//!
//! All integers and floats little-endian; weights row-major.

use std::fs;
use std::path::Path;

use super::layers::{Affine, Nonlinearity};
use super::model::{ExtractorModel, TdnnLayer, TdnnLayerSpec};
use crate::error::{Error, Result};
use crate::matrix::{put_f64s, Cursor};

pub const MODEL_MAGIC: &[u8; 4] = b"SVX1";

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_affine(out: &mut Vec<u8>, a: &Affine) {
    put_f64s(out, &a.weight);
    put_f64s(out, &a.bias);
}

fn get_affine(cur: &mut Cursor<'_>, in_dim: usize, out_dim: usize) -> Result<Affine> {
    let weight = cur.f64s(in_dim * out_dim)?;
    let bias = cur.f64s(out_dim)?;
    Ok(Affine {
        in_dim,
        out_dim,
        weight,
        bias,
    })
}

impl ExtractorModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = MODEL_MAGIC.to_vec();
        put_u32(&mut out, self.frame_layers.len());
        for l in &self.frame_layers {
            put_u32(&mut out, l.spec.context_offsets.len());
            for o in &l.spec.context_offsets {
                out.extend_from_slice(&o.to_le_bytes());
            }
            put_u32(&mut out, l.spec.input_dim);
            put_u32(&mut out, l.spec.output_dim);
            out.push(matches!(l.spec.nonlinearity, Nonlinearity::Relu) as u8);
            put_affine(&mut out, &l.affine);
        }
        put_u32(&mut out, self.segment_layers.len());
        for s in &self.segment_layers {
            put_u32(&mut out, s.in_dim);
            put_u32(&mut out, s.out_dim);
            put_affine(&mut out, s);
        }
        put_u32(&mut out, self.head.in_dim);
        put_u32(&mut out, self.head.out_dim);
        put_affine(&mut out, &self.head);
        put_u32(&mut out, self.embedding_tap);
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<Self> {
        let mut cur = Cursor::new(bytes, origin);
        cur.magic(MODEL_MAGIC)?;
        let n_frame = cur.u32()? as usize;
        let mut frame_layers = Vec::with_capacity(n_frame.min(64));
        for _ in 0..n_frame {
            let k = cur.u32()? as usize;
            let mut offsets = Vec::with_capacity(k.min(64));
            for _ in 0..k {
                offsets.push(cur.i32()?);
            }
            let input_dim = cur.u32()? as usize;
            let output_dim = cur.u32()? as usize;
            let nonlinearity = match cur.u8()? {
                0 => Nonlinearity::None,
                1 => Nonlinearity::Relu,
                v => return Err(Error::InvalidArgument(format!("{origin}: bad nonlinearity tag {v}"))),
            };
            let affine = get_affine(&mut cur, k * input_dim, output_dim)?;
            frame_layers.push(TdnnLayer {
                spec: TdnnLayerSpec {
                    context_offsets: offsets,
                    input_dim,
                    output_dim,
                    nonlinearity,
                },
                affine,
            });
        }
        let n_seg = cur.u32()? as usize;
        let mut segment_layers = Vec::with_capacity(n_seg.min(16));
        for _ in 0..n_seg {
            let i = cur.u32()? as usize;
            let o = cur.u32()? as usize;
            segment_layers.push(get_affine(&mut cur, i, o)?);
        }
        let hi = cur.u32()? as usize;
        let ho = cur.u32()? as usize;
        let head = get_affine(&mut cur, hi, ho)?;
        let embedding_tap = cur.u32()? as usize;
        if !cur.is_at_end() {
            return Err(Error::InvalidArgument(format!("{origin}: trailing bytes")));
        }
        if frame_layers.is_empty() {
            return Err(Error::InvalidArgument(format!("{origin}: model has no frame layers")));
        }
        let model = ExtractorModel {
            frame_layers,
            segment_layers,
            head,
            embedding_tap,
        };
        model.validate()?;
        Ok(model)
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
