//! Deep speaker-embedding extractor: TDNN frame layers, statistics pooling,
//! segment-level layers and a softmax speaker classifier.
//!
//! All parameters are `f64`. Frame layers use "valid" context: frames
//! without full left/right context are dropped, so each layer shortens the
//! sequence by its context span.

mod io;
mod layers;
mod model;
mod train;

use std::path::Path;

use rayon::prelude::*;

pub use io::MODEL_MAGIC;
pub use layers::{Affine, Nonlinearity};
pub use model::{
    ce_loss, stats_pool, stats_pool_f64, ExtractorArch, ExtractorModel, ForwardOutput, TdnnLayer, TdnnLayerSpec,
    POOL_EPSILON,
};
pub use train::{
    accuracy, crop_segment, fine_tune, reinitialize_head, train, EpochStats, TrainConfig, TrainLog, TrainingSet,
};

use crate::error::{Error, Result};
use crate::features::feature_path;
use crate::manifest::Manifest;
use crate::matrix::{read_matrix, Embedding, EmbeddingSet, FeatureMatrix};

impl ExtractorModel {
    /// Batch-mean cross-entropy over whole inputs and its gradient with
    /// respect to every parameter (same layout as the model).
    pub fn loss_and_gradient(&self, batch: &[(FeatureMatrix, usize)]) -> Result<(f64, ExtractorModel)> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let scale = 1.0 / batch.len() as f64;
        let mut grad = self.zeros_like();
        let mut loss = 0.0;
        for (m, label) in batch {
            let input = m.as_slice().iter().map(|&v| v as f64).collect();
            let (l, _) = self.accumulate_gradient(input, m.rows(), m.cols(), *label, scale, &mut grad)?;
            loss += l;
        }
        Ok((loss * scale, grad))
    }
}

#[derive(Debug, Default)]
pub struct ExtractionReport {
    pub embeddings: EmbeddingSet,
    /// Inputs shorter than the model context, with the reason.
    pub skipped: Vec<(String, String)>,
}

/// Embeds each `(id, features)` item. Items too short for the model context
/// are skipped and listed in the report; output order follows input order
/// regardless of `jobs`.
pub fn extract_embeddings(model: &ExtractorModel, items: &[(String, FeatureMatrix)], jobs: usize) -> Result<ExtractionReport> {
    let run = |(id, m): &(String, FeatureMatrix)| (id.clone(), model.embed(m));
    let results: Vec<(String, Result<Vec<f64>>)> = if jobs > 1 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?
            .install(|| items.par_iter().map(run).collect())
    } else {
        items.iter().map(run).collect()
    };
    let mut report = ExtractionReport {
        embeddings: EmbeddingSet::new(model.embedding_dim()),
        skipped: Vec::new(),
    };
    for (id, r) in results {
        match r {
            Ok(v) => report.embeddings.push(Embedding {
                id,
                values: v.iter().map(|&x| x as f32).collect(),
            })?,
            Err(Error::Precondition(msg)) => {
                log::warn!(target: "extractor", "skipping `{id}`: {msg}");
                report.skipped.push((id, msg));
            }
            Err(e) => return Err(e),
        }
    }
    Ok(report)
}

/// One embedding per manifest recording, read from `features_dir`.
pub fn extract_manifest_embeddings(
    model: &ExtractorModel,
    manifest: &Manifest,
    features_dir: &Path,
    jobs: usize,
) -> Result<ExtractionReport> {
    let items = manifest
        .recordings()
        .iter()
        .map(|r| Ok((r.recording_id.clone(), read_matrix(feature_path(features_dir, &r.recording_id))?)))
        .collect::<Result<Vec<_>>>()?;
    extract_embeddings(model, &items, jobs)
}
