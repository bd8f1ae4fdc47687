//! Error type shared by the core modules.

use alloc::string::String;
use alloc::vec::Vec;

/// Diagnostics raised by tensor ops, the network, objectives, and the
/// simulator. Each variant names the offending quantity so failures are
/// actionable without a debugger.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch, expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("{op}: invalid argument: {msg}")]
    InvalidArgument { op: &'static str, msg: String },
    #[error("log: domain error, non-positive value {value} at index {index}")]
    LogDomain { index: usize, value: f64 },
    #[error("gather: pixel ({row}, {col}) out of bounds for {height}x{width} map")]
    PixelOutOfBounds {
        row: usize,
        col: usize,
        height: usize,
        width: usize,
    },
    #[error("backward: loss must be a scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("optimizer: non-finite gradient in parameter {index}, step aborted")]
    NonFiniteGradient { index: usize },
    #[error("studentize: non-positive variance {value}")]
    NonPositiveVariance { value: f64 },
    #[error("depth map has no valid pixels")]
    AllPixelsInvalid,
    #[error("config: {msg}")]
    Config { msg: String },
    #[error("empty batch")]
    EmptyBatch,
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config { msg: msg.into() }
    }

    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            msg: msg.into(),
        }
    }
}
