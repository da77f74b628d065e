use std::path::PathBuf;

use thiserror::Error;

use crate::optimizers::IterationSummary;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("bounds error: {0}")]
    Bounds(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("value {value} out of range (must be < {limit})")]
    Range { value: usize, limit: usize },

    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("pairing error: {0}")]
    Pairing(String),

    #[error("every candidate failed in iteration {iteration}")]
    AllCandidatesFailed {
        iteration: usize,
        trace: Vec<IterationSummary>,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag for the CLI error record.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::Bounds(_) => "bounds",
            Error::Domain(_) => "domain",
            Error::Range { .. } => "range",
            Error::Format { .. } => "format",
            Error::Config(_) => "config",
            Error::Degenerate(_) => "degenerate",
            Error::Pairing(_) => "pairing",
            Error::AllCandidatesFailed { .. } => "all_candidates_failed",
            Error::Io { .. } => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
