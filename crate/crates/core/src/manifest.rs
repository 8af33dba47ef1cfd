//! Line-oriented, tab-separated speaker/recording manifest.
//!
//! ```text
//! # comment
//! SPK<TAB>speaker_id<TAB>M|F<TAB>l1<TAB>grade
//! REC<TAB>recording_id<TAB>speaker_id<TAB>A|B|C|D|E<TAB>path
//! ```
//!
//! Speakers and recordings keep their document order, so serializing a
//! parsed manifest reproduces it.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{L1Label, RecordingRecord, Section, SpeakerRecord};

#[derive(Debug, Clone, Default)]
pub struct Manifest {
    speakers: Vec<SpeakerRecord>,
    recordings: Vec<RecordingRecord>,
    speaker_index: HashMap<String, usize>,
    recording_index: HashMap<String, usize>,
}

impl PartialEq for Manifest {
    fn eq(&self, other: &Self) -> bool {
        self.speakers == other.speakers && self.recordings == other.recordings
    }
}

impl Eq for Manifest {}

fn check_field(kind: &'static str, value: &str) -> Result<()> {
    if value.is_empty() || value.contains(['\t', '\n']) {
        return Err(Error::InvalidArgument(format!(
            "{kind} must be non-empty and free of tabs/newlines: {value:?}"
        )));
    }
    Ok(())
}

impl Manifest {
    /// Builds a manifest, checking id uniqueness and that every recording
    /// points at a known speaker.
    pub fn new(speakers: Vec<SpeakerRecord>, recordings: Vec<RecordingRecord>) -> Result<Self> {
        let mut speaker_index = HashMap::with_capacity(speakers.len());
        for (i, s) in speakers.iter().enumerate() {
            check_field("speaker id", &s.speaker_id)?;
            if speaker_index.insert(s.speaker_id.clone(), i).is_some() {
                return Err(Error::DuplicateId {
                    kind: "speaker",
                    id: s.speaker_id.clone(),
                });
            }
        }
        let mut recording_index = HashMap::with_capacity(recordings.len());
        for (i, r) in recordings.iter().enumerate() {
            check_field("recording id", &r.recording_id)?;
            check_field("source path", &r.source_path)?;
            if recording_index.insert(r.recording_id.clone(), i).is_some() {
                return Err(Error::DuplicateId {
                    kind: "recording",
                    id: r.recording_id.clone(),
                });
            }
            if !speaker_index.contains_key(&r.speaker_id) {
                return Err(Error::DanglingSpeaker {
                    recording: r.recording_id.clone(),
                    speaker: r.speaker_id.clone(),
                });
            }
        }
        Ok(Manifest {
            speakers,
            recordings,
            speaker_index,
            recording_index,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut speakers = Vec::new();
        let mut recordings = Vec::new();
        // first line each id was seen on, for error reporting
        let mut speaker_lines: HashMap<String, usize> = HashMap::new();
        let mut recording_lines: HashMap<String, usize> = HashMap::new();

        for (idx, line) in text.lines().enumerate() {
            let lineno = idx + 1;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let at = |e: Error| Error::Parse {
                line: lineno,
                message: e.to_string(),
            };
            match fields.as_slice() {
                ["SPK", id, gender, l1, grade] => {
                    if id.is_empty() {
                        return Err(at(Error::InvalidArgument("empty speaker id".into())));
                    }
                    if speaker_lines.insert(id.to_string(), lineno).is_some() {
                        return Err(at(Error::DuplicateId {
                            kind: "speaker",
                            id: id.to_string(),
                        }));
                    }
                    speakers.push(SpeakerRecord {
                        speaker_id: id.to_string(),
                        gender: gender.parse().map_err(at)?,
                        l1: L1Label::new(l1).map_err(at)?,
                        grade: grade.parse().map_err(at)?,
                    });
                }
                ["REC", id, speaker, section, path] => {
                    if id.is_empty() || path.is_empty() {
                        return Err(at(Error::InvalidArgument("empty recording field".into())));
                    }
                    if recording_lines.insert(id.to_string(), lineno).is_some() {
                        return Err(at(Error::DuplicateId {
                            kind: "recording",
                            id: id.to_string(),
                        }));
                    }
                    recordings.push(RecordingRecord {
                        recording_id: id.to_string(),
                        speaker_id: speaker.to_string(),
                        section: section.parse().map_err(at)?,
                        source_path: path.to_string(),
                    });
                }
                _ => {
                    return Err(Error::Parse {
                        line: lineno,
                        message: format!("malformed line `{line}`"),
                    })
                }
            }
        }

        for r in &recordings {
            if !speaker_lines.contains_key(&r.speaker_id) {
                return Err(Error::Parse {
                    line: recording_lines[&r.recording_id],
                    message: Error::DanglingSpeaker {
                        recording: r.recording_id.clone(),
                        speaker: r.speaker_id.clone(),
                    }
                    .to_string(),
                });
            }
        }
        Manifest::new(speakers, recordings)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for s in &self.speakers {
            let _ = writeln!(out, "SPK\t{}\t{}\t{}\t{}", s.speaker_id, s.gender, s.l1, s.grade);
        }
        for r in &self.recordings {
            let _ = writeln!(
                out,
                "REC\t{}\t{}\t{}\t{}",
                r.recording_id, r.speaker_id, r.section, r.source_path
            );
        }
        out
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Manifest::parse(&text)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn speakers(&self) -> &[SpeakerRecord] {
        &self.speakers
    }

    pub fn recordings(&self) -> &[RecordingRecord] {
        &self.recordings
    }

    pub fn speaker(&self, id: &str) -> Option<&SpeakerRecord> {
        self.speaker_index.get(id).map(|&i| &self.speakers[i])
    }

    pub fn recording(&self, id: &str) -> Option<&RecordingRecord> {
        self.recording_index.get(id).map(|&i| &self.recordings[i])
    }

    /// Speaker owning a recording.
    pub fn speaker_of(&self, recording_id: &str) -> Option<&SpeakerRecord> {
        self.recording(recording_id).and_then(|r| self.speaker(&r.speaker_id))
    }

    pub fn recordings_of<'a>(&'a self, speaker_id: &'a str) -> impl Iterator<Item = &'a RecordingRecord> + 'a {
        self.recordings.iter().filter(move |r| r.speaker_id == speaker_id)
    }

    pub fn is_empty(&self) -> bool {
        self.speakers.is_empty()
    }

    /// Speakers with at least one section A or B recording.
    pub fn enrollable_speakers(&self) -> Vec<&SpeakerRecord> {
        self.speakers
            .iter()
            .filter(|s| self.recordings_of(&s.speaker_id).any(|r| r.section.is_enrolment()))
            .collect()
    }

    /// Restricts the manifest to the given speakers and their recordings,
    /// keeping document order.
    pub fn subset<S: AsRef<str>>(&self, speaker_ids: &[S]) -> Result<Self> {
        let keep: std::collections::HashSet<&str> = speaker_ids.iter().map(|s| s.as_ref()).collect();
        for id in &keep {
            if !self.speaker_index.contains_key(*id) {
                return Err(Error::InvalidArgument(format!("unknown speaker `{id}`")));
            }
        }
        let speakers = self
            .speakers
            .iter()
            .filter(|s| keep.contains(s.speaker_id.as_str()))
            .cloned()
            .collect();
        let recordings = self
            .recordings
            .iter()
            .filter(|r| keep.contains(r.speaker_id.as_str()))
            .cloned()
            .collect();
        Manifest::new(speakers, recordings)
    }

    /// Appends recordings, validating the result.
    pub fn with_recordings(&self, extra: Vec<RecordingRecord>) -> Result<Self> {
        let mut recordings = self.recordings.clone();
        recordings.extend(extra);
        Manifest::new(self.speakers.clone(), recordings)
    }

    pub fn sections_of(&self, speaker_id: &str) -> Vec<Section> {
        self.recordings_of(speaker_id).map(|r| r.section).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Gender, Grade};
    use proptest::prelude::*;

    #[test]
    fn minimal_manifest() {
        let m = Manifest::parse("SPK\ts1\tF\tThai\tB1\nREC\tr1\ts1\tA\tpath\n").unwrap();
        assert_eq!(m.speakers().len(), 1);
        assert_eq!(m.recordings().len(), 1);
        let s = m.speaker("s1").unwrap();
        assert_eq!(s.gender, Gender::Female);
        assert_eq!(s.grade, Grade::B1);
        assert_eq!(m.recording("r1").unwrap().section, Section::A);
    }

    #[test]
    fn dangling_reference_names_speaker() {
        let err = Manifest::parse("SPK\ts1\tF\tThai\tB1\nREC\tr1\ts9\tA\tpath\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("s9"), "{msg}");
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn comments_are_skipped() {
        let m = Manifest::parse("# header\nSPK\ts1\tm\tThai\tC2\n").unwrap();
        assert_eq!(m.speakers()[0].gender, Gender::Male);
        assert!(m.recordings().is_empty());
    }

    #[test]
    fn errors_report_line_numbers() {
        let err = Manifest::parse("SPK\ts1\tF\tThai\tB1\nSPK\ts2\tF\tThai\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));

        let err = Manifest::parse("SPK\ts1\tF\tThai\tB1\nSPK\ts1\tM\tThai\tB1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        assert!(err.to_string().contains("duplicate"));

        let err = Manifest::parse("SPK\ts1\tF\tThai\tD1\n").unwrap_err();
        assert!(err.to_string().contains("grade"));

        let err = Manifest::parse("SPK\ts1\tF\tThai\tB1\nREC\tr1\ts1\tZ\tp\n").unwrap_err();
        assert!(err.to_string().contains("section"));

        let err =
            Manifest::parse("SPK\ts1\tF\tThai\tB1\nREC\tr1\ts1\tA\tp\nREC\tr1\ts1\tB\tq\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }));
    }

    fn arb_manifest() -> impl Strategy<Value = Manifest> {
        let speaker = (
            prop_oneof![Just(Gender::Male), Just(Gender::Female)],
            "[A-Z][a-z]{1,6}( [A-Z][a-z]{1,4})?",
            0usize..6,
        );
        (
            proptest::collection::vec(speaker, 1..6),
            proptest::collection::vec((any::<prop::sample::Index>(), 0usize..5, "[a-z0-9/._@-]{1,12}"), 0..10),
        )
            .prop_map(|(spk, recs)| {
                let speakers: Vec<SpeakerRecord> = spk
                    .into_iter()
                    .enumerate()
                    .map(|(i, (gender, l1, g))| SpeakerRecord {
                        speaker_id: format!("spk{i}"),
                        gender,
                        l1: L1Label::new(&l1).unwrap(),
                        grade: Grade::ALL[g],
                    })
                    .collect();
                let recordings = recs
                    .into_iter()
                    .enumerate()
                    .map(|(i, (owner, sec, path))| RecordingRecord {
                        recording_id: format!("rec{i}"),
                        speaker_id: owner.get(&speakers).speaker_id.clone(),
                        section: Section::ALL[sec],
                        source_path: path,
                    })
                    .collect();
                Manifest::new(speakers, recordings).unwrap()
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn parse_serialize_round_trip(m in arb_manifest()) {
            let text = m.to_text();
            let back = Manifest::parse(&text).unwrap();
            prop_assert_eq!(back, m);
        }
    }
}
