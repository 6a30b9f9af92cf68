use std::io;

use thiserror::Error;

/// Errors raised by the inversion toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("invalid grid {nx}x{ny}")]
    InvalidGrid { nx: usize, ny: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-embeddable spectrum: eigenvalue {min} below -{eta} * {max}")]
    NonEmbeddable { min: f64, max: f64, eta: f64 },

    #[error(
        "singular spectrum: eigenvalue square root {value} at index {index} is not above {zeta}"
    )]
    SingularSpectrum { index: usize, value: f64, zeta: f64 },

    #[error("imaginary residual {residual} exceeds tolerance {tolerance}")]
    ImaginaryResidual { residual: f64, tolerance: f64 },

    #[error("covariance block is not positive definite")]
    NotPositiveDefinite,

    #[error("value outside the open unit interval: {0}")]
    OutOfUnitInterval(f64),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("non-finite {0}")]
    NonFinite(String),

    #[error("missing gradient provider for MALA proposals")]
    MissingGradient,

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
