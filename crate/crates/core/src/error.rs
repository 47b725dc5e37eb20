use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, SapError>;

/// Errors raised across the toolkit.
///
/// `category()` gives a stable, machine-parsable tag used by the command line.
#[derive(Debug, Error)]
pub enum SapError {
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed header {}: {msg}", path.display())]
    Header { path: PathBuf, msg: String },

    #[error("payload length mismatch: expected {expected} values, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("non-finite value at index {0}")]
    NonFinite(usize),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("zero-norm spectral vector")]
    ZeroNorm,

    #[error("empty input: {0}")]
    Empty(String),

    #[error("infeasible configuration: {0}")]
    Infeasible(String),

    #[error("divergence at iteration {iter}: {msg}")]
    Divergence { iter: usize, msg: String },

    #[error("weights error: {0}")]
    Weights(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl SapError {
    pub fn category(&self) -> &'static str {
        match self {
            SapError::MissingFile(_) => "missing_file",
            SapError::Io { .. } => "io",
            SapError::Header { .. } => "header",
            SapError::LengthMismatch { .. } => "length_mismatch",
            SapError::NonFinite(_) => "non_finite",
            SapError::Shape(_) => "shape",
            SapError::InvalidArgument(_) => "invalid_argument",
            SapError::ZeroNorm => "zero_norm",
            SapError::Empty(_) => "empty",
            SapError::Infeasible(_) => "infeasible",
            SapError::Divergence { .. } => "divergence",
            SapError::Weights(_) => "weights",
            SapError::Numerical(_) => "numerical",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            SapError::MissingFile(path)
        } else {
            SapError::Io { path, source }
        }
    }
}
