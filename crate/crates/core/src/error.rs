use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScanError {
    #[error("empty input")]
    EmptyInput,

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("bad config: {0}")]
    BadConfig(String),

    #[error("no correspondences survived rejection")]
    NoCorrespondences,

    #[error("insufficient anchors: {found} registered observations, need at least 3")]
    InsufficientAnchors { found: usize },

    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),

    #[error("incomplete run: {0}")]
    IncompleteRun(String),

    #[error("malformed file {path}: {msg}")]
    Parse { path: PathBuf, msg: String },

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ScanError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ScanError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn bad_config(msg: impl Into<String>) -> Self {
        ScanError::BadConfig(msg.into())
    }

    pub fn degenerate(msg: impl Into<String>) -> Self {
        ScanError::DegenerateGeometry(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, ScanError>;
