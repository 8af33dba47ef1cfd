//! Embeddings keyed the way trial lists refer to them.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rayon::prelude::*;
use verifkit_core::extractor::ExtractorModel;
use verifkit_core::features::feature_path;
use verifkit_core::matrix::read_matrix;
use verifkit_core::plda::PreprocessChain;
use verifkit_core::trials::{verification_units, SectionEMode};
use verifkit_core::{Embedding, EmbeddingSet, Error, FeatureMatrix, Manifest, Result};

/// Loads the feature matrix of every manifest recording.
pub fn load_features(manifest: &Manifest, dir: &Path) -> Result<BTreeMap<String, FeatureMatrix>> {
    manifest
        .recordings()
        .iter()
        .map(|r| Ok((r.recording_id.clone(), read_matrix(feature_path(dir, &r.recording_id))?)))
        .collect()
}

/// One embedding per recording, except that in concatenated mode each
/// speaker's section E recordings are stacked and embedded once under the
/// unit id. Items too short for the model are skipped and returned.
pub fn embed_for_scoring(
    model: &ExtractorModel,
    manifest: &Manifest,
    features: &BTreeMap<String, FeatureMatrix>,
    mode: SectionEMode,
    jobs: usize,
) -> Result<(EmbeddingSet, Vec<(String, String)>)> {
    let mut items: Vec<(String, Vec<&FeatureMatrix>)> = Vec::new();
    let mut grouped = std::collections::HashSet::new();
    if mode == SectionEMode::Concatenated {
        for u in verification_units(manifest, mode) {
            if u.recording_ids.len() > 1 || u.section == verifkit_core::Section::E {
                let parts = u
                    .recording_ids
                    .iter()
                    .map(|id| features.get(id).ok_or_else(|| missing(id)))
                    .collect::<Result<Vec<_>>>()?;
                grouped.extend(u.recording_ids.iter().cloned());
                items.push((u.id.clone(), parts));
            }
        }
    }
    for r in manifest.recordings() {
        if !grouped.contains(&r.recording_id) {
            let m = features.get(&r.recording_id).ok_or_else(|| missing(&r.recording_id))?;
            items.push((r.recording_id.clone(), vec![m]));
        }
    }
    items.sort_by(|a, b| a.0.cmp(&b.0));

    let run = |(id, parts): &(String, Vec<&FeatureMatrix>)| -> (String, Result<Vec<f64>>) {
        let r = if parts.len() == 1 {
            model.embed(parts[0])
        } else {
            FeatureMatrix::vstack(parts).and_then(|m| model.embed(&m))
        };
        (id.clone(), r)
    };
    let results: Vec<(String, Result<Vec<f64>>)> = if jobs > 1 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?
            .install(|| items.par_iter().map(run).collect())
    } else {
        items.iter().map(run).collect()
    };
    let mut set = EmbeddingSet::new(model.embedding_dim());
    let mut skipped = Vec::new();
    for (id, r) in results {
        match r {
            Ok(v) => set.push(Embedding {
                id,
                values: v.iter().map(|&x| x as f32).collect(),
            })?,
            Err(Error::Precondition(msg)) => {
                log::warn!(target: "embeddings", "skipping `{id}`: {msg}");
                skipped.push((id, msg));
            }
            Err(e) => return Err(e),
        }
    }
    Ok((set, skipped))
}

fn missing(id: &str) -> Error {
    Error::Precondition(format!("no features for recording `{id}`"))
}

/// Applies the chain to every embedding.
pub fn preprocess(set: &EmbeddingSet, chain: &PreprocessChain) -> Result<HashMap<String, Vec<f64>>> {
    set.iter().map(|e| Ok((e.id.clone(), chain.apply_f32(&e.values)?))).collect()
}

/// Chain-processed embeddings grouped by speaker, in manifest speaker
/// order; speakers without embeddings are left out.
pub fn group_by_speaker(manifest: &Manifest, set: &EmbeddingSet, chain: &PreprocessChain) -> Result<Vec<Vec<Vec<f64>>>> {
    let mut by: HashMap<&str, Vec<Vec<f64>>> = HashMap::new();
    for e in set.iter() {
        let s = manifest
            .speaker_of(&e.id)
            .ok_or_else(|| Error::Precondition(format!("embedding `{}` is not a manifest recording", e.id)))?;
        by.entry(s.speaker_id.as_str()).or_default().push(chain.apply_f32(&e.values)?);
    }
    Ok(manifest
        .speakers()
        .iter()
        .filter_map(|s| by.remove(s.speaker_id.as_str()))
        .collect())
}

/// Raw embeddings with the speaker id of each, for fitting the chain.
pub fn labelled(manifest: &Manifest, set: &EmbeddingSet) -> Result<(Vec<Vec<f64>>, Vec<String>)> {
    let mut xs = Vec::with_capacity(set.len());
    let mut labels = Vec::with_capacity(set.len());
    for e in set.iter() {
        let s = manifest
            .speaker_of(&e.id)
            .ok_or_else(|| Error::Precondition(format!("embedding `{}` is not a manifest recording", e.id)))?;
        xs.push(e.to_f64());
        labels.push(s.speaker_id.clone());
    }
    Ok((xs, labels))
}
