use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid coefficient: {0}")]
    InvalidCoefficient(String),
    #[error("expression error: {0}")]
    Expr(String),
    #[error("boundary ring of the iterate is not zero (max |G| = {0:e} on the boundary)")]
    NonZeroBoundary(f64),
    #[error("dense solve refused: {0}")]
    SolveGuard(String),
    #[error("singular system at pivot {0}")]
    Singular(usize),
    #[error("invalid source configuration: {0}")]
    InvalidSource(String),
    #[error("invalid model configuration: {0}")]
    InvalidModel(String),
    #[error("invalid training configuration: {0}")]
    InvalidTraining(String),
    #[error("missing reference field for sample {0}")]
    MissingReference(usize),
    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },
    #[error("invalid quadrature: {0}")]
    Quadrature(String),
    #[error("unknown case '{0}'")]
    UnknownCase(String),
    #[error("corrupt file {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint config mismatch: {0}")]
    ConfigMismatch(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn corrupt(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Corrupt {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
