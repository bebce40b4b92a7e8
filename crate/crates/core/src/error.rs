//! Error type shared by every module.

use thiserror::Error;

/// Failure modes of the library.
///
/// Variants split into two families: input validation problems and numerical
/// failures. [`Error::is_numerical`] tells them apart (the CLI maps them to
/// distinct exit codes).
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("series pole: {0}")]
    Pole(String),
    #[error("no convergence: {0}")]
    NonConvergence(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("empty window: no samples carry weight")]
    EmptyWindow,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("circulant embedding failed: {0}")]
    Embedding(String),
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Pole(_)
                | Error::NonConvergence(_)
                | Error::Embedding(_)
                | Error::Singular(_)
                | Error::Numerical(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
