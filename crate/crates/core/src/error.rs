use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate video id {0:?}")]
    DuplicateId(String),

    #[error("video {video_id:?}: vote {vote} outside the 1..=5 rating scale")]
    InvalidVote { video_id: String, vote: i64 },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("feature archive: bad magic bytes")]
    BadMagic,

    #[error("feature archive: unsupported version {0}")]
    UnsupportedVersion(u32),

    #[error("feature archive truncated: need {needed} payload bytes, {available} available")]
    Truncated { needed: u64, available: u64 },

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("backbone: {0}")]
    Backbone(String),

    #[error("frame {index}: {message}")]
    Decode { index: usize, message: String },

    #[error("insufficient votes: {0}")]
    InsufficientVotes(String),

    #[error("training diverged at epoch {epoch}: {message}")]
    Diverged { epoch: usize, message: String },

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("preprocessing: {0}")]
    Preprocess(String),

    #[error("external tool {tool:?}: {message}")]
    ExternalTool { tool: String, message: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    /// True for errors caused by bad user input (files, flags, data) rather
    /// than by a failure while running an otherwise valid request.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::DuplicateId(_)
                | Error::InvalidVote { .. }
                | Error::Validation(_)
                | Error::BadMagic
                | Error::UnsupportedVersion(_)
                | Error::Truncated { .. }
                | Error::NonFinite { .. }
                | Error::DimensionMismatch { .. }
                | Error::Empty(_)
                | Error::Degenerate(_)
                | Error::InsufficientVotes(_)
                | Error::ModelFormat(_)
                | Error::Preprocess(_)
        )
    }
}
