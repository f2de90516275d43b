use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A record in a line-delimited file could not be parsed. `line` is 1-based.
    #[error("parse error in {file} at line {line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("duplicate patient ids: {0:?}")]
    DuplicateIds(Vec<String>),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("missing feature vectors for patients: {0:?}")]
    MissingFeatures(Vec<String>),

    #[error("embedding failed for ids {ids:?}: {message}")]
    Embedding { ids: Vec<String>, message: String },

    #[error("transport error: {0}")]
    Transport(String),

    #[error("fixture miss for key {0}")]
    FixtureMiss(String),

    #[error("offline mode: live request to {0} refused")]
    OfflineRefused(String),

    #[error("backend error: {0}")]
    Backend(String),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category, used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::Validation(_) => "validation",
            Error::DuplicateIds(_) => "duplicate_ids",
            Error::Dimension { .. } => "dimension",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::MissingFeatures(_) => "missing_features",
            Error::Embedding { .. } => "embedding",
            Error::Transport(_) => "transport",
            Error::FixtureMiss(_) => "fixture_miss",
            Error::OfflineRefused(_) => "offline",
            Error::Backend(_) => "backend",
            Error::Config(_) => "config",
        }
    }
}
