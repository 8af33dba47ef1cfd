//! Verification units, attribute-restricted trial lists and scoring.

mod io;
mod scoring;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

pub use io::{format_scored_trial, format_trial, parse_scored_trial, parse_trial, read_scores, read_trials, write_trials, ScoredTrial};
pub use scoring::{build_enrolments, score_trials, Enrolments, ScoringSummary};

use crate::error::{Error, Result};
use crate::manifest::Manifest;
use crate::types::{Gender, L1Label, MergedGrade, Section, SpeakerRecord};

/// Which impostors a reference speaker is tested against. Every enabled
/// flag must hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct RestrictionSet {
    pub gender: bool,
    pub l1: bool,
    pub grade_equal: bool,
    pub grade_higher: bool,
}

impl RestrictionSet {
    pub fn new(gender: bool, l1: bool, grade_equal: bool, grade_higher: bool) -> Result<Self> {
        let r = RestrictionSet {
            gender,
            l1,
            grade_equal,
            grade_higher,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grade_equal && self.grade_higher {
            return Err(Error::InvalidArgument(
                "grade and grade-higher restrictions are mutually exclusive".into(),
            ));
        }
        Ok(())
    }

    /// The six evaluation conditions: gender alone, then combined with
    /// grade, higher grade, L1, L1 and grade, L1 and higher grade.
    pub fn evaluation_conditions() -> [(&'static str, RestrictionSet); 6] {
        let r = |l1, grade_equal, grade_higher| RestrictionSet {
            gender: true,
            l1,
            grade_equal,
            grade_higher,
        };
        [
            ("gender", r(false, false, false)),
            ("gender+grade", r(false, true, false)),
            ("gender+>grade", r(false, false, true)),
            ("gender+L1", r(true, false, false)),
            ("gender+L1+grade", r(true, true, false)),
            ("gender+L1+>grade", r(true, false, true)),
        ]
    }

    pub fn admits(&self, reference: &SpeakerRecord, impostor: &SpeakerRecord) -> bool {
        self.admits_attrs(
            (reference.gender, &reference.l1, reference.grade.merged()),
            (impostor.gender, &impostor.l1, impostor.grade.merged()),
        )
    }

    fn admits_attrs(&self, reference: (Gender, &L1Label, MergedGrade), impostor: (Gender, &L1Label, MergedGrade)) -> bool {
        if self.gender && reference.0 != impostor.0 {
            return false;
        }
        if self.l1 && reference.1 != impostor.1 {
            return false;
        }
        if self.grade_equal && reference.2 != impostor.2 {
            return false;
        }
        if self.grade_higher {
            let ok = if reference.2 == MergedGrade::C {
                impostor.2 == MergedGrade::C
            } else {
                impostor.2 > reference.2
            };
            if !ok {
                return false;
            }
        }
        true
    }
}

impl fmt::Display for RestrictionSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if self.gender {
            parts.push("gender");
        }
        if self.l1 {
            parts.push("l1");
        }
        if self.grade_equal {
            parts.push("grade");
        }
        if self.grade_higher {
            parts.push("grade-higher");
        }
        if parts.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&parts.join(","))
        }
    }
}

/// Comma-separated flags: `gender`, `l1`, `grade`, `grade-higher`; `none`
/// or the empty string disables all.
impl FromStr for RestrictionSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut r = RestrictionSet::default();
        for token in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            match token.to_ascii_lowercase().as_str() {
                "none" => {}
                "gender" => r.gender = true,
                "l1" => r.l1 = true,
                "grade" | "grade-equal" => r.grade_equal = true,
                "grade-higher" | ">grade" => r.grade_higher = true,
                _ => {
                    return Err(Error::UnknownToken {
                        kind: "restriction",
                        token: token.to_string(),
                    })
                }
            }
        }
        r.validate()?;
        Ok(r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrialLabel {
    Target,
    Nontarget,
}

impl TrialLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            TrialLabel::Target => "target",
            TrialLabel::Nontarget => "nontarget",
        }
    }

    pub fn is_target(self) -> bool {
        self == TrialLabel::Target
    }
}

impl FromStr for TrialLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "target" => Ok(TrialLabel::Target),
            "nontarget" => Ok(TrialLabel::Nontarget),
            _ => Err(Error::UnknownToken {
                kind: "trial label",
                token: s.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Trial {
    pub enrol_speaker_id: String,
    pub verify_id: String,
    pub label: TrialLabel,
}

/// How section E responses become verification units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SectionEMode {
    /// All of a speaker's section E recordings form one unit, named after
    /// the lexicographically first of them.
    #[default]
    Concatenated,
    PerResponse,
}

impl FromStr for SectionEMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concatenated" => Ok(SectionEMode::Concatenated),
            "per-response" => Ok(SectionEMode::PerResponse),
            _ => Err(Error::UnknownToken {
                kind: "section E mode",
                token: s.to_string(),
            }),
        }
    }
}

/// One verification test segment: a section C or D recording, or section
/// E material.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerificationUnit {
    pub id: String,
    pub speaker_id: String,
    pub section: Section,
    /// Member recordings in id order; feature matrices are stacked in this
    /// order.
    pub recording_ids: Vec<String>,
}

/// Verification units sorted by id.
pub fn verification_units(manifest: &Manifest, mode: SectionEMode) -> Vec<VerificationUnit> {
    let mut units = Vec::new();
    let mut section_e: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for r in manifest.recordings() {
        match (r.section, mode) {
            (Section::C | Section::D, _) | (Section::E, SectionEMode::PerResponse) => units.push(VerificationUnit {
                id: r.recording_id.clone(),
                speaker_id: r.speaker_id.clone(),
                section: r.section,
                recording_ids: vec![r.recording_id.clone()],
            }),
            (Section::E, SectionEMode::Concatenated) => {
                section_e.entry(&r.speaker_id).or_default().push(&r.recording_id);
            }
            _ => {}
        }
    }
    for (speaker, mut ids) in section_e {
        ids.sort_unstable();
        units.push(VerificationUnit {
            id: ids[0].to_string(),
            speaker_id: speaker.to_string(),
            section: Section::E,
            recording_ids: ids.into_iter().map(String::from).collect(),
        });
    }
    units.sort_by(|a, b| a.id.cmp(&b.id));
    units
}

struct Speaker<'a> {
    id: &'a str,
    attrs: (Gender, &'a L1Label, MergedGrade),
}

/// Streams trials ordered by (enrolment speaker id, verification unit id).
/// Memory is proportional to the manifest, not to the number of trials.
pub struct TrialStream<'a> {
    speakers: Vec<Speaker<'a>>,
    /// (unit id, owning speaker index), sorted by unit id.
    units: Vec<(String, usize)>,
    restrictions: RestrictionSet,
    speaker: usize,
    unit: usize,
}

impl<'a> TrialStream<'a> {
    fn new(manifest: &'a Manifest, restrictions: RestrictionSet, mode: SectionEMode) -> Self {
        let mut speakers: Vec<Speaker<'a>> = manifest
            .speakers()
            .iter()
            .map(|s| Speaker {
                id: &s.speaker_id,
                attrs: (s.gender, &s.l1, s.grade.merged()),
            })
            .collect();
        speakers.sort_by(|a, b| a.id.cmp(b.id));
        let index: HashMap<&str, usize> = speakers.iter().enumerate().map(|(i, s)| (s.id, i)).collect();
        let units = verification_units(manifest, mode)
            .into_iter()
            .map(|u| {
                let owner = index[u.speaker_id.as_str()];
                (u.id, owner)
            })
            .collect();
        TrialStream {
            speakers,
            units,
            restrictions,
            speaker: 0,
            unit: 0,
        }
    }
}

impl Iterator for TrialStream<'_> {
    type Item = Trial;

    fn next(&mut self) -> Option<Trial> {
        while self.speaker < self.speakers.len() {
            while self.unit < self.units.len() {
                let (id, owner) = &self.units[self.unit];
                self.unit += 1;
                let reference = &self.speakers[self.speaker];
                let label = if *owner == self.speaker {
                    TrialLabel::Target
                } else if self.restrictions.admits_attrs(reference.attrs, self.speakers[*owner].attrs) {
                    TrialLabel::Nontarget
                } else {
                    continue;
                };
                return Some(Trial {
                    enrol_speaker_id: reference.id.to_string(),
                    verify_id: id.clone(),
                    label,
                });
            }
            self.speaker += 1;
            self.unit = 0;
        }
        None
    }
}

pub fn generate_trials(manifest: &Manifest, restrictions: RestrictionSet, mode: SectionEMode) -> Result<TrialStream<'_>> {
    restrictions.validate()?;
    Ok(TrialStream::new(manifest, restrictions, mode))
}

/// `(targets, nontargets)` that [`generate_trials`] would emit, computed
/// from per-attribute unit counts.
pub fn count_trials(manifest: &Manifest, restrictions: RestrictionSet, mode: SectionEMode) -> Result<(u64, u64)> {
    restrictions.validate()?;
    let units = verification_units(manifest, mode);
    let mut per_speaker: HashMap<&str, u64> = HashMap::new();
    for u in &units {
        *per_speaker.entry(u.speaker_id.as_str()).or_default() += 1;
    }
    let mut buckets: HashMap<(Gender, &L1Label, MergedGrade), u64> = HashMap::new();
    for s in manifest.speakers() {
        let n = per_speaker.get(s.speaker_id.as_str()).copied().unwrap_or(0);
        *buckets.entry((s.gender, &s.l1, s.grade.merged())).or_default() += n;
    }
    let mut targets = 0;
    let mut nontargets = 0;
    for s in manifest.speakers() {
        let own = per_speaker.get(s.speaker_id.as_str()).copied().unwrap_or(0);
        let attrs = (s.gender, &s.l1, s.grade.merged());
        targets += own;
        for (&bucket, &n) in &buckets {
            if restrictions.admits_attrs(attrs, bucket) {
                nontargets += n;
            }
        }
        if restrictions.admits_attrs(attrs, attrs) {
            nontargets -= own;
        }
    }
    Ok((targets, nontargets))
}
