//! Crate-wide error type.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced by dataset I/O, index construction, sampling, and
/// estimation.
///
/// Variants split into two broad families that the CLI maps onto exit codes:
/// input problems (I/O, parsing, schema, malformed values) and domain
/// problems (violated preconditions, dimension mismatches, degenerate
/// configurations).
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate weights: {0}")]
    DegenerateWeights(String),

    #[error("degenerate subsample: {0}")]
    DegenerateSubsample(String),

    #[error("unsupported: {0}")]
    Unsupported(String),
}

impl Error {
    /// True for errors caused by unreadable or malformed input artifacts
    /// (files, schemas, encodings) as opposed to violated domain
    /// preconditions.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Io(_) | Error::Csv(_) | Error::Parse { .. } | Error::Schema(_) | Error::Data(_)
        )
    }
}
