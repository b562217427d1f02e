use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("region {height}x{width} is too small to split")]
    RegionTooSmall { height: usize, width: usize },

    #[error("oracle call budget exhausted")]
    BudgetExhausted,

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("rank-deficient design: {0}")]
    RankDeficient(String),

    #[error("undefined distance: {0}")]
    UndefinedDistance(String),

    #[error("model `{model_id}` ({path}): {message}")]
    Backend {
        model_id: String,
        path: PathBuf,
        message: String,
    },

    #[error("{path}: {message}")]
    Data { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn data(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Data {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn dims(expected: impl std::fmt::Display, actual: impl std::fmt::Display) -> Self {
        Error::DimensionMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    /// Process exit code for this error class: 2 for data problems, 3 for
    /// model backend failures, 1 for anything caused by bad arguments.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Backend { .. } => 3,
            Error::InvalidArgument(_) => 1,
            _ => 2,
        }
    }
}
