//! Crate-wide error type.

use crate::volume::Dims;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Structural problems: nonpositive dims, bad voxel sizes, bad configs.
    #[error("invalid argument: {0}")]
    InvalidArg(String),

    /// Two volumes/tensors that must agree in shape do not.
    #[error("dimension mismatch: expected {expected:?}, got {got:?}")]
    DimMismatch { expected: Dims, got: Dims },

    /// Tensor-level shape violation (conv arithmetic, concat, ...).
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Orientation vector is not unit length.
    #[error("orientation is not unit length (|v| = {norm})")]
    NonUnitOrientation { norm: f64 },

    /// Inverse FFT of a supposedly conjugate-symmetric spectrum left a
    /// non-negligible imaginary part.
    #[error("imaginary residue {max_abs:.3e} exceeds 1e-6 after inverse FFT")]
    ImaginaryResidue { max_abs: f64 },

    /// Metric denominators that must be nonzero are zero.
    #[error("reference volume has zero norm; {metric} is undefined")]
    ZeroNormReference { metric: &'static str },

    /// Training produced a non-finite loss or parameter.
    #[error("non-finite value during {what} at step {step}")]
    NonFinite { what: String, step: usize },

    /// Malformed on-disk artifact (.qvol, checkpoint).
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArg(msg.into())
    }

    /// True for errors that signal a numerical failure rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::ImaginaryResidue { .. } | Error::NonFinite { .. } | Error::ZeroNormReference { .. }
        )
    }
}
