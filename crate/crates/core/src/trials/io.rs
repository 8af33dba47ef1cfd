//! Trial and score files.
//!
//! ```text
//! enrol_speaker_id<TAB>verify_id<TAB>target|nontarget
//! enrol_speaker_id<TAB>verify_id<TAB>target|nontarget<TAB>score
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::{Trial, TrialLabel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredTrial {
    pub trial: Trial,
    pub score: f64,
}

pub fn format_trial(t: &Trial) -> String {
    format!("{}\t{}\t{}", t.enrol_speaker_id, t.verify_id, t.label.as_str())
}

/// Scores print in shortest round-trip form.
pub fn format_scored_trial(t: &Trial, score: f64) -> String {
    format!("{}\t{score}", format_trial(t))
}

fn parse_fields(line: &str, line_no: usize, expected: usize) -> Result<Vec<&str>> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != expected {
        return Err(Error::Parse {
            line: line_no,
            message: format!("expected {expected} tab-separated fields, found {}", fields.len()),
        });
    }
    Ok(fields)
}

fn trial_from(fields: &[&str], line_no: usize) -> Result<Trial> {
    let label = fields[2].parse::<TrialLabel>().map_err(|e| Error::Parse {
        line: line_no,
        message: e.to_string(),
    })?;
    Ok(Trial {
        enrol_speaker_id: fields[0].to_string(),
        verify_id: fields[1].to_string(),
        label,
    })
}

pub fn parse_trial(line: &str, line_no: usize) -> Result<Trial> {
    trial_from(&parse_fields(line, line_no, 3)?, line_no)
}

pub fn parse_scored_trial(line: &str, line_no: usize) -> Result<ScoredTrial> {
    let fields = parse_fields(line, line_no, 4)?;
    let trial = trial_from(&fields, line_no)?;
    let score: f64 = fields[3].parse().map_err(|_| Error::Parse {
        line: line_no,
        message: format!("bad score `{}`", fields[3]),
    })?;
    if !score.is_finite() {
        return Err(Error::NonFinite(format!("score on line {line_no}")));
    }
    Ok(ScoredTrial { trial, score })
}

/// Writes one line per trial; returns the number written.
pub fn write_trials(trials: impl IntoIterator<Item = Trial>, out: &mut impl Write) -> Result<u64> {
    let mut n = 0;
    for t in trials {
        writeln!(out, "{}", format_trial(&t)).map_err(|e| Error::io("trial output", e))?;
        n += 1;
    }
    Ok(n)
}

fn read_lines<T>(path: &Path, parse: impl Fn(&str, usize) -> Result<T>) -> Result<Vec<T>> {
    let ctx = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(ctx.clone(), e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(ctx.clone(), e))?;
        if line.is_empty() {
            continue;
        }
        out.push(parse(&line, i + 1)?);
    }
    Ok(out)
}

pub fn read_trials(path: impl AsRef<Path>) -> Result<Vec<Trial>> {
    read_lines(path.as_ref(), parse_trial)
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<Vec<ScoredTrial>> {
    read_lines(path.as_ref(), parse_scored_trial)
}
