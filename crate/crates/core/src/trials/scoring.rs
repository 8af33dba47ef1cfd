use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;

use super::Trial;
use crate::error::{Error, Result};
use crate::manifest::Manifest;
use crate::plda::PldaScorer;

/// Per-speaker enrolment vectors.
#[derive(Debug, Clone, Default)]
pub struct Enrolments {
    pub by_speaker: BTreeMap<String, Vec<f64>>,
    /// Speakers without any section A/B embedding.
    pub excluded: Vec<String>,
}

impl Enrolments {
    pub fn get(&self, speaker_id: &str) -> Option<&[f64]> {
        self.by_speaker.get(speaker_id).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.by_speaker.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_speaker.is_empty()
    }
}

/// Averages each speaker's section A/B embeddings and rescales the mean to
/// `target_norm` when given. Recordings without an embedding are ignored.
pub fn build_enrolments(
    manifest: &Manifest,
    embeddings: &HashMap<String, Vec<f64>>,
    target_norm: Option<f64>,
) -> Result<Enrolments> {
    let mut sums: BTreeMap<&str, (Vec<f64>, usize)> = BTreeMap::new();
    for r in manifest.recordings().iter().filter(|r| r.section.is_enrolment()) {
        let Some(e) = embeddings.get(&r.recording_id) else {
            continue;
        };
        let entry = sums.entry(&r.speaker_id).or_insert_with(|| (vec![0.0; e.len()], 0));
        if entry.0.len() != e.len() {
            return Err(Error::DimensionMismatch {
                expected: entry.0.len(),
                actual: e.len(),
            });
        }
        for (a, v) in entry.0.iter_mut().zip(e) {
            *a += v;
        }
        entry.1 += 1;
    }
    let mut out = Enrolments::default();
    for s in manifest.speakers() {
        match sums.remove(s.speaker_id.as_str()) {
            Some((mut sum, n)) => {
                sum.iter_mut().for_each(|v| *v /= n as f64);
                if let Some(norm) = target_norm {
                    crate::plda::scale_to_norm(&mut sum, norm);
                }
                out.by_speaker.insert(s.speaker_id.clone(), sum);
            }
            None => out.excluded.push(s.speaker_id.clone()),
        }
    }
    if !out.excluded.is_empty() {
        log::warn!(
            target: "trials",
            "{} speaker(s) have no enrolment embedding and are excluded: {}",
            out.excluded.len(),
            out.excluded.iter().take(5).cloned().collect::<Vec<_>>().join(", ")
        );
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ScoringSummary {
    pub scored: u64,
    /// Trials whose enrolment or test embedding is missing.
    pub skipped: u64,
}

const SCORE_CHUNK: usize = 16_384;

/// Scores a trial stream and hands each result to `sink` in stream order.
/// Chunks are scored on `jobs` threads.
pub fn score_trials(
    trials: impl Iterator<Item = Trial>,
    enrolments: &Enrolments,
    tests: &HashMap<String, Vec<f64>>,
    scorer: &PldaScorer,
    jobs: usize,
    mut sink: impl FnMut(&Trial, f64) -> Result<()>,
) -> Result<ScoringSummary> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let mut summary = ScoringSummary::default();
    let mut chunk = Vec::with_capacity(SCORE_CHUNK);
    let mut trials = trials.peekable();
    while trials.peek().is_some() {
        chunk.clear();
        chunk.extend(trials.by_ref().take(SCORE_CHUNK));
        let scores: Vec<Option<Result<f64>>> = pool.install(|| {
            chunk
                .par_iter()
                .map(|t| {
                    let e = enrolments.get(&t.enrol_speaker_id)?;
                    let v = tests.get(&t.verify_id)?;
                    Some(scorer.score(e, v))
                })
                .collect()
        });
        for (t, s) in chunk.iter().zip(scores) {
            match s {
                Some(score) => {
                    sink(t, score?)?;
                    summary.scored += 1;
                }
                None => summary.skipped += 1,
            }
        }
    }
    if summary.skipped > 0 {
        log::warn!(target: "trials", "{} trial(s) skipped for missing embeddings", summary.skipped);
    }
    Ok(summary)
}
