use std::path::Path;

use rayon::prelude::*;

use super::layers::Affine;
use super::model::{argmax, ExtractorModel};
use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::features::feature_path;
use crate::manifest::Manifest;
use crate::matrix::{read_matrix, FeatureMatrix};
use crate::rng::SeededRng;

/// Stream id used to derive the seed of a re-initialized output layer.
const HEAD_INIT_STREAM: u64 = 0x4845_4144;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub minibatch_size: usize,
    /// Crop length; shorter recordings are loop-padded.
    pub segment_frames: usize,
    pub epochs: usize,
    /// Random crops drawn from each recording per epoch.
    pub crops_per_recording: usize,
    pub rng_seed: u64,
    /// Worker threads for per-segment gradients. Results do not depend on it.
    pub jobs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            momentum: 0.9,
            minibatch_size: 64,
            segment_frames: 200,
            epochs: 5,
            crops_per_recording: 1,
            rng_seed: 0,
            jobs: 1,
        }
    }
}

impl TrainConfig {
    pub const KEYS: &'static [&'static str] = &[
        "learning_rate",
        "momentum",
        "minibatch_size",
        "segment_frames",
        "epochs",
        "crops_per_recording",
        "seed",
    ];

    /// Reads the recognised keys of `kv`, leaving the rest untouched.
    pub fn from_kv(kv: &KvConfig, base: &TrainConfig) -> Result<Self> {
        Ok(TrainConfig {
            learning_rate: kv.get_or("learning_rate", base.learning_rate)?,
            momentum: kv.get_or("momentum", base.momentum)?,
            minibatch_size: kv.get_or("minibatch_size", base.minibatch_size)?,
            segment_frames: kv.get_or("segment_frames", base.segment_frames)?,
            epochs: kv.get_or("epochs", base.epochs)?,
            crops_per_recording: kv.get_or("crops_per_recording", base.crops_per_recording)?,
            rng_seed: kv.get_or("seed", base.rng_seed)?,
            jobs: base.jobs,
        })
    }

    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument("momentum must lie in [0, 1)".into()));
        }
        if self.minibatch_size == 0 || self.segment_frames == 0 || self.crops_per_recording == 0 || self.jobs == 0 {
            return Err(Error::InvalidArgument("batch size, crop length, crops and jobs must be positive".into()));
        }
        Ok(())
    }
}

/// Labelled feature matrices. Labels index `speakers`.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub speakers: Vec<String>,
    pub items: Vec<(String, FeatureMatrix, usize)>,
}

impl TrainingSet {
    /// Loads every recording of the manifest; labels follow speaker order
    /// in the manifest.
    pub fn load(manifest: &Manifest, features_dir: &Path) -> Result<Self> {
        Self::from_manifest(manifest, |id| read_matrix(feature_path(features_dir, id)))
    }

    pub fn from_manifest(
        manifest: &Manifest,
        mut load: impl FnMut(&str) -> Result<FeatureMatrix>,
    ) -> Result<Self> {
        let speakers: Vec<String> = manifest.speakers().iter().map(|s| s.speaker_id.clone()).collect();
        let index: std::collections::HashMap<&str, usize> =
            speakers.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let mut items = Vec::with_capacity(manifest.recordings().len());
        let mut seen = vec![false; speakers.len()];
        for r in manifest.recordings() {
            let label = index[r.speaker_id.as_str()];
            seen[label] = true;
            items.push((r.recording_id.clone(), load(&r.recording_id)?, label));
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::Precondition(format!("speaker `{}` has no recordings", speakers[i])));
        }
        let set = TrainingSet { speakers, items };
        set.validate()?;
        Ok(set)
    }

    fn validate(&self) -> Result<()> {
        if self.speakers.len() < 2 {
            return Err(Error::Precondition(format!(
                "training needs at least 2 speakers, got {}",
                self.speakers.len()
            )));
        }
        Ok(())
    }

    pub fn num_speakers(&self) -> usize {
        self.speakers.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochStats>,
}

impl TrainLog {
    /// `epoch<TAB>loss<TAB>accuracy` lines.
    pub fn to_tsv(&self) -> String {
        self.epochs
            .iter()
            .map(|e| format!("{}\t{}\t{}\n", e.epoch, e.loss, e.accuracy))
            .collect()
    }
}

/// Fixed-length crop starting at a random frame; short inputs wrap around.
pub fn crop_segment(m: &FeatureMatrix, frames: usize, rng: &mut SeededRng) -> Vec<f64> {
    let rows = m.rows();
    let start = if rows > frames { rng.below(rows - frames + 1) } else { 0 };
    let mut out = Vec::with_capacity(frames * m.cols());
    for i in 0..frames {
        out.extend(m.row((start + i) % rows).iter().map(|&v| v as f64));
    }
    out
}

/// Minibatch SGD with momentum on the batch-mean cross-entropy.
pub fn train(model: &mut ExtractorModel, data: &TrainingSet, cfg: &TrainConfig) -> Result<TrainLog> {
    cfg.validate()?;
    data.validate()?;
    if model.num_speakers() != data.num_speakers() {
        return Err(Error::Precondition(format!(
            "model head has {} outputs but the data has {} speakers",
            model.num_speakers(),
            data.num_speakers()
        )));
    }
    if cfg.segment_frames < model.min_frames() {
        return Err(Error::InvalidArgument(format!(
            "segment of {} frames is shorter than the model context ({})",
            cfg.segment_frames,
            model.min_frames()
        )));
    }
    let dim = model.input_dim();
    if let Some((_, m, _)) = data.items.iter().find(|(_, m, _)| m.cols() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: m.cols(),
        });
    }

    let pool = if cfg.jobs > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.jobs)
                .build()
                .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?,
        )
    } else {
        None
    };

    let mut velocity = model.zeros_like();
    let mut log = TrainLog::default();
    for epoch in 0..cfg.epochs {
        let mut rng = SeededRng::derive(cfg.rng_seed, epoch as u64);
        let mut order: Vec<usize> = (0..data.items.len())
            .flat_map(|i| std::iter::repeat_n(i, cfg.crops_per_recording))
            .collect();
        rng.shuffle(&mut order);

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (batch_no, batch) in order.chunks(cfg.minibatch_size).enumerate() {
            let crops: Vec<(Vec<f64>, usize)> = batch
                .iter()
                .map(|&i| {
                    let (_, m, label) = &data.items[i];
                    (crop_segment(m, cfg.segment_frames, &mut rng), *label)
                })
                .collect();
            let scale = 1.0 / crops.len() as f64;
            let mut grad = model.zeros_like();
            let mut batch_loss = 0.0;

            let window = cfg.jobs.max(1);
            for chunk in crops.chunks(window) {
                let compute = |(x, y): &(Vec<f64>, usize)| {
                    let mut g = model.zeros_like();
                    model
                        .accumulate_gradient(x.clone(), cfg.segment_frames, dim, *y, scale, &mut g)
                        .map(|(l, c)| (l, c, g))
                };
                let results: Vec<Result<(f64, bool, ExtractorModel)>> = match &pool {
                    Some(p) => p.install(|| chunk.par_iter().map(compute).collect()),
                    None => chunk.iter().map(compute).collect(),
                };
                // reduce in segment order so thread count never changes the sum
                for r in results {
                    let (l, c, g) = r?;
                    batch_loss += l;
                    correct += c as usize;
                    for (acc, part) in grad.tensors_mut().into_iter().zip(g.tensors()) {
                        for (a, p) in acc.iter_mut().zip(part) {
                            *a += p;
                        }
                    }
                }
            }

            if !batch_loss.is_finite() || grad.tensors().iter().any(|t| t.iter().any(|v| !v.is_finite())) {
                let norms: Vec<String> = model
                    .tensor_names()
                    .into_iter()
                    .zip(model.tensors())
                    .map(|(n, t)| format!("{n}={:.3e}", t.iter().map(|v| v * v).sum::<f64>().sqrt()))
                    .collect();
                return Err(Error::Numerical(format!(
                    "non-finite loss at epoch {epoch}, batch {batch_no}; parameter norms: {}",
                    norms.join(", ")
                )));
            }
            loss_sum += batch_loss;

            for ((param, vel), g) in model
                .tensors_mut()
                .into_iter()
                .zip(velocity.tensors_mut())
                .zip(grad.tensors())
            {
                for ((p, v), gi) in param.iter_mut().zip(vel.iter_mut()).zip(g) {
                    *v = cfg.momentum * *v - cfg.learning_rate * gi;
                    *p += *v;
                }
            }
        }
        let n = order.len().max(1) as f64;
        let stats = EpochStats {
            epoch: epoch + 1,
            loss: loss_sum / n,
            accuracy: correct as f64 / n,
        };
        log::info!(target: "extractor", "epoch {} loss {:.5} accuracy {:.4}", stats.epoch, stats.loss, stats.accuracy);
        log.epochs.push(stats);
    }
    Ok(log)
}

/// Replaces the output layer with a freshly initialized one sized for the
/// new speaker set, then trains every layer on `data`.
pub fn fine_tune(model: &ExtractorModel, data: &TrainingSet, cfg: &TrainConfig) -> Result<(ExtractorModel, TrainLog)> {
    let mut tuned = reinitialize_head(model, data.num_speakers(), cfg.rng_seed);
    let log = train(&mut tuned, data, cfg)?;
    Ok((tuned, log))
}

/// Model surgery only: new `num_speakers x segment_dim` head, everything
/// else copied.
pub fn reinitialize_head(model: &ExtractorModel, num_speakers: usize, seed: u64) -> ExtractorModel {
    let mut rng = SeededRng::derive(seed, HEAD_INIT_STREAM);
    let mut out = model.clone();
    out.head = Affine::glorot(model.head.in_dim, num_speakers, &mut rng);
    out
}

/// Fraction of items whose whole-recording argmax matches the label.
pub fn accuracy(model: &ExtractorModel, data: &TrainingSet) -> Result<f64> {
    let mut correct = 0usize;
    for (_, m, label) in &data.items {
        let out = model.forward(m)?;
        correct += (argmax(&out.logits) == *label) as usize;
    }
    Ok(correct as f64 / data.items.len().max(1) as f64)
}
