use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the denoising library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),

    #[error("malformed image header: {0}")]
    MalformedHeader(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("block matching found {found} candidates in the search window, need {needed}")]
    InsufficientCandidates { found: usize, needed: usize },

    #[error("pixel ({row}, {col}) is not covered by any patch")]
    UncoveredPixel { row: usize, col: usize },

    #[error("degenerate samples: {0}")]
    DegenerateSamples(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dims(expected: (usize, usize), actual: (usize, usize)) -> Self {
        Error::DimensionMismatch {
            expected: format!("{}x{}", expected.0, expected.1),
            actual: format!("{}x{}", actual.0, actual.1),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
