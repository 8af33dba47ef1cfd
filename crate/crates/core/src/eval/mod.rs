//! Error rates, detection curves, false-alarm breakdowns and score fusion.

mod breakdown;
mod det;
mod sample;

use std::path::Path;

pub use breakdown::{fa_breakdown, AttributeKind, FaBreakdown};
pub use det::{compute_det, compute_eer, DetCurve, DetPoint, Eer};
pub use sample::{stratified_sample, StratifiedSample};

use crate::error::{Error, Result};
use crate::trials::{read_scores, ScoredTrial, Trial};

/// Trials with their scores, in trial-list order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreSet {
    trials: Vec<Trial>,
    scores: Vec<f64>,
}

impl ScoreSet {
    pub fn new(trials: Vec<Trial>, scores: Vec<f64>) -> Result<Self> {
        if trials.len() != scores.len() {
            return Err(Error::InvalidArgument(format!(
                "{} trials but {} scores",
                trials.len(),
                scores.len()
            )));
        }
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!("score of trial {}", i + 1)));
        }
        Ok(ScoreSet { trials, scores })
    }

    pub fn from_scored(items: Vec<ScoredTrial>) -> Result<Self> {
        let (trials, scores) = items.into_iter().map(|s| (s.trial, s.score)).unzip();
        ScoreSet::new(trials, scores)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        ScoreSet::from_scored(read_scores(path)?)
    }

    pub fn push(&mut self, trial: Trial, score: f64) -> Result<()> {
        if !score.is_finite() {
            return Err(Error::NonFinite(format!("score of trial {}", self.len() + 1)));
        }
        self.trials.push(trial);
        self.scores.push(score);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn trials(&self) -> &[Trial] {
        &self.trials
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Trial, f64)> {
        self.trials.iter().zip(self.scores.iter().copied())
    }

    /// `(target scores, nontarget scores)`.
    pub fn split(&self) -> (Vec<f64>, Vec<f64>) {
        let mut tar = Vec::new();
        let mut non = Vec::new();
        for (t, s) in self.iter() {
            if t.label.is_target() {
                tar.push(s);
            } else {
                non.push(s);
            }
        }
        (tar, non)
    }

    /// Score file text, one `format_scored_trial` line per trial.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (t, s) in self.iter() {
            out.push_str(&crate::trials::format_scored_trial(t, s));
            out.push('\n');
        }
        out
    }
}

/// Per-trial `weight_a * a + weight_b * b`. Both sets must list the same
/// trials in the same order.
pub fn fuse(a: &ScoreSet, b: &ScoreSet, weight_a: f64, weight_b: f64) -> Result<ScoreSet> {
    if !(weight_a.is_finite() && weight_b.is_finite()) {
        return Err(Error::InvalidArgument("fusion weights must be finite".into()));
    }
    for (i, (ta, tb)) in a.trials.iter().zip(&b.trials).enumerate() {
        if ta != tb {
            return Err(Error::Precondition(format!(
                "trial lists differ at line {}: `{}` vs `{}`",
                i + 1,
                crate::trials::format_trial(ta),
                crate::trials::format_trial(tb)
            )));
        }
    }
    if a.len() != b.len() {
        return Err(Error::Precondition(format!(
            "trial lists differ at line {}: lengths {} and {}",
            a.len().min(b.len()) + 1,
            a.len(),
            b.len()
        )));
    }
    let scores = a
        .scores
        .iter()
        .zip(&b.scores)
        .map(|(x, y)| weight_a * x + weight_b * y)
        .collect();
    ScoreSet::new(a.trials.clone(), scores)
}

pub const DEFAULT_FUSION_WEIGHTS: (f64, f64) = (0.7, 0.3);
