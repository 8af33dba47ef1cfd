//! Speaker and recording metadata.

use std::fmt;
use std::str::FromStr;

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Gender {
    Male,
    Female,
}

impl Gender {
    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Male => "M",
            Gender::Female => "F",
        }
    }
}

impl FromStr for Gender {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "M" | "m" => Ok(Gender::Male),
            "F" | "f" => Ok(Gender::Female),
            _ => Err(Error::UnknownToken {
                kind: "gender",
                token: s.to_string(),
            }),
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// CEFR proficiency grade at full six-level granularity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Grade {
    A1,
    A2,
    B1,
    B2,
    C1,
    C2,
}

impl Grade {
    pub const ALL: [Grade; 6] = [Grade::A1, Grade::A2, Grade::B1, Grade::B2, Grade::C1, Grade::C2];

    pub fn merged(self) -> MergedGrade {
        match self {
            Grade::A1 => MergedGrade::A1,
            Grade::A2 => MergedGrade::A2,
            Grade::B1 => MergedGrade::B1,
            Grade::B2 => MergedGrade::B2,
            Grade::C1 | Grade::C2 => MergedGrade::C,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Grade::A1 => "A1",
            Grade::A2 => "A2",
            Grade::B1 => "B1",
            Grade::B2 => "B2",
            Grade::C1 => "C1",
            Grade::C2 => "C2",
        }
    }
}

impl FromStr for Grade {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Grade::ALL
            .iter()
            .copied()
            .find(|g| g.as_str() == s)
            .ok_or_else(|| Error::UnknownToken {
                kind: "grade",
                token: s.to_string(),
            })
    }
}

impl fmt::Display for Grade {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Five-level grade scale with C1 and C2 collapsed into C. All grade
/// comparisons and trial restrictions use this scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MergedGrade {
    A1,
    A2,
    B1,
    B2,
    C,
}

impl MergedGrade {
    pub const ALL: [MergedGrade; 5] = [
        MergedGrade::A1,
        MergedGrade::A2,
        MergedGrade::B1,
        MergedGrade::B2,
        MergedGrade::C,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MergedGrade::A1 => "A1",
            MergedGrade::A2 => "A2",
            MergedGrade::B1 => "B1",
            MergedGrade::B2 => "B2",
            MergedGrade::C => "C",
        }
    }
}

impl fmt::Display for MergedGrade {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// First-language label. Open set; compared exactly after trimming.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct L1Label(String);

impl L1Label {
    pub fn new(label: &str) -> Result<Self, Error> {
        let trimmed = label.trim();
        if trimmed.is_empty() {
            return Err(Error::InvalidArgument("empty L1 label".into()));
        }
        Ok(L1Label(trimmed.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for L1Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Test section a recording was taken from. A and B are used for
/// enrolment, C, D and E for verification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Section {
    A,
    B,
    C,
    D,
    E,
}

impl Section {
    pub const ALL: [Section; 5] = [Section::A, Section::B, Section::C, Section::D, Section::E];

    pub fn is_enrolment(self) -> bool {
        matches!(self, Section::A | Section::B)
    }

    pub fn is_verification(self) -> bool {
        !self.is_enrolment()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Section::A => "A",
            Section::B => "B",
            Section::C => "C",
            Section::D => "D",
            Section::E => "E",
        }
    }
}

impl FromStr for Section {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Section::ALL
            .iter()
            .copied()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| Error::UnknownToken {
                kind: "section",
                token: s.to_string(),
            })
    }
}

impl fmt::Display for Section {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpeakerRecord {
    pub speaker_id: String,
    pub gender: Gender,
    pub l1: L1Label,
    pub grade: Grade,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordingRecord {
    pub recording_id: String,
    pub speaker_id: String,
    pub section: Section,
    pub source_path: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gender_parse_is_case_insensitive() {
        assert_eq!("m".parse::<Gender>().unwrap(), Gender::Male);
        assert_eq!("F".parse::<Gender>().unwrap(), Gender::Female);
        assert!("x".parse::<Gender>().is_err());
        assert!("Male".parse::<Gender>().is_err());
    }

    #[test]
    fn merged_grade_collapses_c_levels() {
        assert_eq!(Grade::C1.merged(), MergedGrade::C);
        assert_eq!(Grade::C2.merged(), MergedGrade::C);
        assert_eq!(Grade::B2.merged(), MergedGrade::B2);
        for g in Grade::ALL {
            // merging twice is the same as merging once
            let m = g.merged();
            let again = match m {
                MergedGrade::C => Grade::C1.merged(),
                other => other.as_str().parse::<Grade>().unwrap().merged(),
            };
            assert_eq!(m, again);
        }
    }

    #[test]
    fn merged_order_is_total_and_antisymmetric() {
        let all = MergedGrade::ALL;
        for (i, a) in all.iter().enumerate() {
            for (j, b) in all.iter().enumerate() {
                assert_eq!(a < b, i < j);
                if a <= b && b <= a {
                    assert_eq!(a, b);
                }
            }
        }
    }

    #[test]
    fn unknown_grade_and_section_rejected() {
        assert!("C".parse::<Grade>().is_err());
        assert!("F".parse::<Section>().is_err());
    }

    #[test]
    fn l1_trims_and_keeps_case() {
        let a = L1Label::new("  Thai ").unwrap();
        assert_eq!(a.as_str(), "Thai");
        assert_ne!(a, L1Label::new("thai").unwrap());
        assert!(L1Label::new("   ").is_err());
    }
}
