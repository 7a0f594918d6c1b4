use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the toolkit reports. Each variant maps to a stable numeric
/// code (see [`Error::code`]) that the C ABI and the CLI exit status reuse.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("malformed header in {}: {reason}", path.display())]
    MalformedHeader { path: PathBuf, reason: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("checksum mismatch for {}: expected {expected}, found {found}", path.display())]
    ChecksumMismatch {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("model is frozen and cannot be trained")]
    FrozenModel,

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("input layout mismatch: model expects {expected}, got {found}")]
    LayoutMismatch { expected: String, found: String },

    #[error("non-finite loss at epoch {epoch}, step {step} (last finite loss {last_finite:?})")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        last_finite: Option<f64>,
    },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("incomplete scenario, missing fields: {}", .0.join(", "))]
    IncompleteScenario(Vec<String>),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error in {}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("image codec error in {}: {reason}", path.display())]
    Image { path: PathBuf, reason: String },
}

impl Error {
    /// Stable numeric identifier; zero is reserved for success.
    pub fn code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) => 1,
            Error::MissingFile(_) => 2,
            Error::MalformedHeader { .. } => 3,
            Error::DimensionMismatch(_) => 4,
            Error::ChecksumMismatch { .. } => 5,
            Error::FrozenModel => 6,
            Error::Contract(_) => 7,
            Error::LayoutMismatch { .. } => 8,
            Error::NonFiniteLoss { .. } => 9,
            Error::EmptyDataset(_) => 10,
            Error::IncompleteScenario(_) => 11,
            Error::Io { .. } => 12,
            Error::Json { .. } => 13,
            Error::Image { .. } => 14,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
