use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the raster, edge, mask and tuning operations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid raster dimensions {width}x{height}")]
    InvalidDimensions { width: usize, height: usize },

    #[error("pixel buffer holds {actual} values, expected {expected}")]
    BufferLength { expected: usize, actual: usize },

    #[error("pixel value {0} is not a finite intensity in [0, 255]")]
    InvalidIntensity(f64),

    #[error("kernel size must be odd and at least 1, got {0}")]
    InvalidKernelSize(usize),

    #[error("gaussian sigma must be positive, got {0}")]
    InvalidSigma(f64),

    #[error("image is {width}x{height}, operation needs at least 3x3")]
    ImageTooSmall { width: usize, height: usize },

    #[error("mask has {0} foreground pixels, at least 3 are required")]
    MaskTooSmall(usize),

    #[error("invalid thresholds: {0}")]
    InvalidThresholds(String),

    #[error("invalid mask: {0}")]
    InvalidMask(String),

    #[error("raster dimensions differ: {left:?} vs {right:?}")]
    DimensionMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: {reason}")]
    Io { path: PathBuf, reason: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, reason: impl ToString) -> Self {
        Error::Io {
            path: path.into(),
            reason: reason.to_string(),
        }
    }
}
