use std::fmt::Write as _;

use verifkit_core::eval::{Eer, FaBreakdown};
use verifkit_core::trials::RestrictionSet;

/// `NA` marks conditions lacking targets or nontargets.
fn percent(rate: f64) -> String {
    if rate.is_nan() {
        "NA".into()
    } else {
        format!("{:.4}", 100.0 * rate)
    }
}

fn or_na(v: f64) -> String {
    if v.is_nan() {
        "NA".into()
    } else {
        v.to_string()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionResult {
    pub name: String,
    pub restrictions: RestrictionSet,
    pub targets: u64,
    pub nontargets: u64,
    /// Trials without an enrolment or test embedding.
    pub skipped: u64,
    pub eer: Eer,
    /// Relative to the output directory.
    pub score_file: String,
    /// Empty when the EER is undefined.
    pub det_file: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedResult {
    pub name: String,
    pub weights: (f64, f64),
    pub eer: Eer,
    pub score_file: String,
}

/// Everything a pipeline run reports. The text form contains no timings
/// or absolute paths, so equal inputs give equal bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
    pub system: String,
    /// `(stage, summary)` lines in execution order.
    pub stages: Vec<(String, String)>,
    pub conditions: Vec<ConditionResult>,
    pub fused: Vec<FusedResult>,
    /// `(condition, table, file)`.
    pub breakdowns: Vec<(String, FaBreakdown, String)>,
}

impl Report {
    pub fn condition(&self, name: &str) -> Option<&ConditionResult> {
        self.conditions.iter().find(|c| c.name == name)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# verifkit report");
        let _ = writeln!(out, "version\t{}", self.version);
        let _ = writeln!(out, "seed\t{}", self.seed);
        let _ = writeln!(out, "config_hash\t{}", self.config_hash);
        let _ = writeln!(out, "system\t{}", self.system);

        out.push_str("\n[stages]\n");
        for (stage, summary) in &self.stages {
            let _ = writeln!(out, "{stage}\t{summary}");
        }

        out.push_str("\n[eer]\ncondition\trestrictions\ttargets\tnontargets\tskipped\teer_percent\tthreshold\n");
        for c in &self.conditions {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                c.name,
                c.restrictions,
                c.targets,
                c.nontargets,
                c.skipped,
                percent(c.eer.rate),
                or_na(c.eer.threshold)
            );
        }

        if !self.fused.is_empty() {
            out.push_str("\n[fusion]\ncondition\tweights\teer_percent\tthreshold\tscores\n");
            for f in &self.fused {
                let _ = writeln!(
                    out,
                    "{}\t{},{}\t{}\t{}\t{}",
                    f.name,
                    f.weights.0,
                    f.weights.1,
                    percent(f.eer.rate),
                    or_na(f.eer.threshold),
                    f.score_file
                );
            }
        }

        out.push_str("\n[det]\ncondition\tscores\tcurve\n");
        for c in &self.conditions {
            let curve = if c.det_file.is_empty() { "NA" } else { &c.det_file };
            let _ = writeln!(out, "{}\t{}\t{curve}", c.name, c.score_file);
        }

        for (condition, table, file) in &self.breakdowns {
            let _ = writeln!(
                out,
                "\n[breakdown {}]\ncondition\t{}\nthreshold\t{}\nfalse_alarms\t{}\nfile\t{}",
                table.attribute.as_str(),
                condition,
                table.threshold,
                table.total(),
                file
            );
            out.push_str(&table.to_tsv());
        }
        out
    }
}
