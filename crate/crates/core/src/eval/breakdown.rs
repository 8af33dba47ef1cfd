use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use super::ScoreSet;
use crate::error::{Error, Result};
use crate::manifest::Manifest;
use crate::types::{MergedGrade, SpeakerRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttributeKind {
    Grade,
    L1,
}

impl AttributeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AttributeKind::Grade => "grade",
            AttributeKind::L1 => "l1",
        }
    }

    /// Sort key and display value of a speaker's attribute.
    pub(crate) fn value_of(self, s: &SpeakerRecord) -> (u8, String) {
        match self {
            AttributeKind::Grade => {
                let g = s.grade.merged();
                let rank = MergedGrade::ALL.iter().position(|x| *x == g).unwrap_or(0) as u8;
                (rank, g.as_str().to_string())
            }
            AttributeKind::L1 => (0, s.l1.as_str().to_string()),
        }
    }
}

impl FromStr for AttributeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "grade" => Ok(AttributeKind::Grade),
            "l1" => Ok(AttributeKind::L1),
            _ => Err(Error::UnknownToken {
                kind: "attribute",
                token: s.to_string(),
            }),
        }
    }
}

/// False-alarm counts by reference-speaker attribute (rows) and impostor
/// attribute (columns). Rows and columns list every value in the manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct FaBreakdown {
    pub attribute: AttributeKind,
    pub threshold: f64,
    pub values: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl FaBreakdown {
    pub fn row_total(&self, row: usize) -> u64 {
        self.counts[row].iter().sum()
    }

    pub fn total(&self) -> u64 {
        (0..self.values.len()).map(|r| self.row_total(r)).sum()
    }

    /// True when no nontarget trial scored at or above the threshold.
    pub fn is_empty(&self) -> bool {
        self.total() == 0
    }

    /// Percentage of the row's false alarms falling in `col`; `None` for a
    /// row without false alarms.
    pub fn percent(&self, row: usize, col: usize) -> Option<f64> {
        let total = self.row_total(row);
        (total > 0).then(|| 100.0 * self.counts[row][col] as f64 / total as f64)
    }

    pub fn index_of(&self, value: &str) -> Option<usize> {
        self.values.iter().position(|v| v == value)
    }

    /// Tab-separated percentage matrix with attribute values as header row
    /// and first column; rows without false alarms print `NA`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("reference");
        for v in &self.values {
            out.push('\t');
            out.push_str(v);
        }
        out.push('\n');
        for (r, v) in self.values.iter().enumerate() {
            out.push_str(v);
            for c in 0..self.values.len() {
                match self.percent(r, c) {
                    Some(p) => {
                        let _ = write!(out, "\t{p:.2}");
                    }
                    None => out.push_str("\tNA"),
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path.display().to_string(), e))
    }
}

/// Tallies nontarget trials scoring at or above `threshold`.
pub fn fa_breakdown(scores: &ScoreSet, manifest: &Manifest, attribute: AttributeKind, threshold: f64) -> Result<FaBreakdown> {
    if !threshold.is_finite() {
        return Err(Error::InvalidArgument("breakdown threshold must be finite".into()));
    }
    let mut keyed: BTreeMap<(u8, String), ()> = BTreeMap::new();
    for s in manifest.speakers() {
        keyed.insert(attribute.value_of(s), ());
    }
    let values: Vec<String> = keyed.into_keys().map(|(_, v)| v).collect();
    let index: std::collections::HashMap<&str, usize> =
        values.iter().enumerate().map(|(i, v)| (v.as_str(), i)).collect();
    let mut counts = vec![vec![0u64; values.len()]; values.len()];
    for (t, score) in scores.iter() {
        if t.label.is_target() || score < threshold {
            continue;
        }
        let reference = manifest.speaker(&t.enrol_speaker_id).ok_or_else(|| {
            Error::Precondition(format!("speaker `{}` is not in the manifest", t.enrol_speaker_id))
        })?;
        let impostor = manifest
            .speaker_of(&t.verify_id)
            .ok_or_else(|| Error::Precondition(format!("recording `{}` is not in the manifest", t.verify_id)))?;
        let r = index[attribute.value_of(reference).1.as_str()];
        let c = index[attribute.value_of(impostor).1.as_str()];
        counts[r][c] += 1;
    }
    Ok(FaBreakdown {
        attribute,
        threshold,
        values,
        counts,
    })
}
