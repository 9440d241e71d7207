use thiserror::Error;

use crate::types::{ImageSize, PixelRect};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("rect {rect} lies outside the {size} image")]
    OutOfBounds { rect: PixelRect, size: ImageSize },

    #[error("no consensus: every sample covers zero area")]
    NoConsensus,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("need at least {needed} values, got {got}")]
    TooFewValues { needed: usize, got: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("sampling failed: {0}")]
    Sampling(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
