//! Batch pipeline around the estimation library: configuration, stage
//! orchestration, persisted intermediates, SVG plots, and a markdown report.
//!
//! The pipeline is a fixed sequence of stages, each reading and writing
//! plain CSV/JSON files in one output directory. Running the monolithic
//! `run` command or the per-stage subcommands in order produces identical
//! bytes, because `run` simply executes the same stage functions.

pub mod artifacts;
pub mod config;
pub mod pipeline;
pub mod plots;

use std::path::PathBuf;

use thiserror::Error;

use reworkd_core::ErrorKind;

/// Anything a pipeline invocation can fail with, tagged well enough to
/// pick an exit code and point at the stage that broke.
#[derive(Debug, Error)]
pub enum CliError {
    /// An estimation-library failure inside a stage.
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: reworkd_core::Error,
    },

    /// A required intermediate file is absent: an earlier subcommand has
    /// not run yet.
    #[error("missing artifact `{artifact}`: run `reworkd {needed}` on this directory first")]
    MissingArtifact { artifact: String, needed: &'static str },

    #[error("config: {0}")]
    Config(String),

    #[error("output directory `{0}` is locked by another process (stale `.lock` file?)")]
    Locked(PathBuf),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("{context}: {source}")]
    Csv {
        context: String,
        #[source]
        source: csv::Error,
    },
}

impl CliError {
    /// Process exit code: 1 for validation and plumbing problems, 2 for
    /// estimation failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Stage { source, .. } => match source.kind() {
                ErrorKind::Validation => 1,
                ErrorKind::Estimation => 2,
            },
            _ => 1,
        }
    }

    pub(crate) fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> Self {
        let context = context.into();
        move |source| CliError::Io { context, source }
    }

    pub(crate) fn json(context: impl Into<String>) -> impl FnOnce(serde_json::Error) -> Self {
        let context = context.into();
        move |source| CliError::Json { context, source }
    }

    pub(crate) fn csv(context: impl Into<String>) -> impl FnOnce(csv::Error) -> Self {
        let context = context.into();
        move |source| CliError::Csv { context, source }
    }
}

/// Tags a library error with the stage it happened in.
pub(crate) fn in_stage(stage: impl Into<String>) -> impl FnOnce(reworkd_core::Error) -> CliError {
    let stage = stage.into();
    move |source| CliError::Stage { stage, source }
}

pub type Result<T> = std::result::Result<T, CliError>;
