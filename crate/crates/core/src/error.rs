//! Crate-wide error type.
//!
//! Errors split into two kinds: [`ErrorKind::Validation`] for malformed
//! inputs, schemas, and parameters (caller mistakes), and
//! [`ErrorKind::Estimation`] for conditions discovered while computing
//! (degenerate data, singular systems, failed overlap). The CLI maps the two
//! kinds to distinct exit codes.

use thiserror::Error;

/// Coarse classification of an [`Error`], used for exit-code mapping.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad input: schema, parse, parameter, or shape problems.
    Validation,
    /// Failure while estimating: degeneracy, singularity, loss of overlap.
    Estimation,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing required column `{column}`")]
    Schema { column: String },

    #[error("row {row}, column `{column}`: {detail}")]
    Parse {
        row: usize,
        column: String,
        detail: String,
    },

    #[error("{0}")]
    Validation(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("record {row} has no valid chips")]
    DegenerateRecord { row: usize },

    #[error("cannot fit rotation: {0}")]
    DegeneratePca(String),

    #[error("empty overlap region: lower cut {lo} exceeds upper cut {hi}")]
    OverlapFailure { lo: f64, hi: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("training data contains a single class: {0}")]
    DegenerateClass(String),

    #[error("singular system while {context}")]
    Singular { context: String },

    #[error("fold {fold} leaves no {group} rows to train on")]
    FoldDegeneracy { fold: usize, group: String },

    #[error("every candidate failed during tuning: {0}")]
    TuningFailed(String),

    #[error("degenerate support: {0}")]
    DegenerateSupport(String),

    #[error("evaluation point {value} lies outside the covered range [{lo}, {hi}]")]
    Extrapolation { value: f64, lo: f64, hi: f64 },

    #[error("policy requires feature `{name}` which the data does not provide")]
    MissingFeature { name: String },

    #[error("scores target {got} where {expected} is required")]
    EstimandMismatch { expected: String, got: String },

    #[error("oracle table has {oracle} rows but the dataset has {data}")]
    OracleMismatch { oracle: usize, data: usize },

    #[error("adjustment set is empty after omitting {0} columns")]
    EmptyAdjustmentSet(usize),

    #[error("simulation failed: {0}")]
    Generation(String),

    #[error("non-finite value produced while {context}")]
    NonFinite { context: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        use Error::*;
        match self {
            Schema { .. } | Parse { .. } | Validation(_) | Parameter(_) | Shape(_)
            | MissingFeature { .. } | EmptyAdjustmentSet(_) | Io(_) | Csv(_)
            | EstimandMismatch { .. } => ErrorKind::Validation,
            DegenerateRecord { .. } | DegeneratePca(_) | OverlapFailure { .. }
            | DegenerateClass(_) | Singular { .. } | FoldDegeneracy { .. } | TuningFailed(_)
            | DegenerateSupport(_) | Extrapolation { .. } | OracleMismatch { .. }
            | Generation(_) | NonFinite { .. } => ErrorKind::Estimation,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
