use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("backscatter fit failed: {0}")]
    Fit(String),
    #[error("checkpoint stage mismatch: expected {expected}, found {found}")]
    Stage { expected: String, found: String },
    #[error("empty input: {0}")]
    Empty(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Errors caused by bad user input (arguments, config, file contents)
    /// rather than a failure while running. A missing input file counts as
    /// bad input.
    pub fn is_validation(&self) -> bool {
        if let Error::Io { source, .. } = self {
            return source.kind() == std::io::ErrorKind::NotFound;
        }
        matches!(
            self,
            Error::Format(_)
                | Error::Shape(_)
                | Error::Parameter(_)
                | Error::Stage { .. }
                | Error::Empty(_)
                | Error::Config(_)
                | Error::Json(_)
        )
    }
}
