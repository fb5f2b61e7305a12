//! Crate-wide error type shared by every module.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Input sequence or clip shorter than the operation's minimum.
    #[error("input too short: {0}")]
    InputTooShort(String),

    /// Audio samples out of contract (non-finite, empty).
    #[error("invalid audio: {0}")]
    InvalidAudio(String),

    /// Bad configuration value or out-of-range argument.
    #[error("config error: {0}")]
    ConfigError(String),

    /// Tensor/sequence dimensions do not line up.
    #[error("shape error: {0}")]
    ShapeError(String),

    /// Non-finite value or numerically invalid state, with the site that produced it.
    #[error("numerical error: {0}")]
    NumericalError(String),

    /// 6D rotation input whose Gram-Schmidt frame collapses.
    #[error("degenerate rotation: {0}")]
    DegenerateRotation(String),

    /// Matrix that is not a proper rotation (non-orthonormal or det < 0).
    #[error("invalid rotation: {0}")]
    InvalidRotation(String),

    /// Malformed serialized payload (bad magic, truncation, version skew).
    #[error("format error: {0}")]
    FormatError(String),
}

pub type Result<T> = std::result::Result<T, Error>;
