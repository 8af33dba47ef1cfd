//! Pipeline wiring behind the `verifkit` binary: configuration, the
//! end-to-end run, report emission and shared helpers for subcommands.

pub mod logging;
mod pipeline;
mod quickstart;
mod report;
pub mod units;

use std::fmt;

pub use pipeline::{
    condition_name, condition_slug, parse_conditions, run_pipeline, PipelineConfig, SystemKind, PIPELINE_KEYS,
};
pub use quickstart::{compare_systems, domain_config, quickstart, write_domains, Comparison, DomainParams, DomainPaths};
pub use report::{ConditionResult, FusedResult, Report};

use verifkit_core::{Error, ErrorClass};

/// A failure inside one pipeline stage.
#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub error: Error,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage `{}` failed: {}", self.stage, self.error)
    }
}

impl std::error::Error for StageError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl StageError {
    pub fn exit_code(&self) -> i32 {
        exit_code(&self.error)
    }
}

/// 1 usage, 2 data, 3 numerical.
pub fn exit_code(e: &Error) -> i32 {
    match e.class() {
        ErrorClass::Usage => 1,
        ErrorClass::Data => 2,
        ErrorClass::Numerical => 3,
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T, StageError>;
}

impl<T> StageExt<T> for verifkit_core::Result<T> {
    fn stage(self, stage: &'static str) -> Result<T, StageError> {
        self.map_err(|error| StageError { stage, error })
    }
}

/// Seed from the command line, else from `VERIFKIT_SEED`, else `fallback`.
pub fn resolve_seed(cli: Option<u64>, fallback: u64) -> Result<u64, Error> {
    if let Some(s) = cli {
        return Ok(s);
    }
    match std::env::var("VERIFKIT_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("VERIFKIT_SEED is not an unsigned integer: `{v}`"))),
        Err(_) => Ok(fallback),
    }
}
