use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input contains non-finite values")]
    NonFiniteInput,
    #[error("inverse transform has imaginary residue {residue:.3e} above tolerance {tolerance:.3e}")]
    NonRealResult { residue: f64, tolerance: f64 },
    #[error("spectrum centering flag mismatch: expected centered={expected}")]
    FlagMismatch { expected: bool },
    #[error("invalid passband {0}: must be a non-negative number")]
    InvalidPassband(f64),
    #[error("no pixel is nonzero in every channel")]
    InsufficientForeground,
    #[error("masking ratio {0} outside [0, 1]")]
    InvalidRatio(f64),
    #[error("coordinate ({x}, {y}) outside a {height}x{width} image")]
    CoordinateOutOfRange {
        x: usize,
        y: usize,
        height: usize,
        width: usize,
    },
    #[error("invalid ratio schedule: {0}")]
    InvalidSchedule(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("label {label} outside [0, {classes})")]
    LabelOutOfRange { label: i64, classes: usize },
    #[error("phantom generation failed after {0} attempts")]
    GenerationFailed(usize),
    #[error("malformed tensor container: {0}")]
    Format(String),
    #[error("truncated payload: header declares {expected} bytes, found {found}")]
    Truncation { expected: usize, found: usize },
    #[error("cannot split {0} samples into five folds")]
    InvalidSplit(usize),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("every sample in epoch {epoch} was skipped")]
    DataExhausted { epoch: usize },
    #[error("non-finite loss {value} at step {step}")]
    NonFiniteLoss { step: usize, value: f64 },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }
}
