//! Value-domain transforms between physical units and network space.
//!
//! Susceptibility is squashed through `tanh(gain * chi)` so the network
//! regresses a bounded target; fields are multiplied by `phase_scale` so
//! typical ppm magnitudes land near unit scale.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::scalar::Real;
use crate::volume::{Quantity, Volume};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TransformConfig {
    pub phase_scale: f64,
    pub tanh_gain: f64,
}

impl Default for TransformConfig {
    fn default() -> Self {
        TransformConfig { phase_scale: 100.0, tanh_gain: 10.0 }
    }
}

/// Margin kept away from ±1 when inverting the surrogate, so `atanh`
/// stays finite on saturated network outputs.
pub const SURROGATE_CLAMP: f64 = 1e-7;

/// `tanh(gain * chi)`; output lies in [-1, 1] (saturating to the exact
/// endpoints in floating point once `|gain * chi|` exceeds ~19).
pub fn to_surrogate<T: Real>(chi: &Volume<T>, cfg: &TransformConfig) -> Volume<T> {
    let g = T::fromf(cfg.tanh_gain);
    chi.map(Quantity::Arbitrary, |v| (g * v).tanh())
}

/// Odd-symmetric atanh. The std implementation loses ~7 digits on the
/// negative branch near -1; routing through `ln_1p(2|x|/(1-|x|))` keeps
/// both sides equally accurate and exactly mirrored.
fn atanh_stable<T: Real>(v: T) -> T {
    let a = v.abs();
    let y = ((a + a) / (T::one() - a)).ln_1p() * T::fromf(0.5);
    if v < T::zero() {
        -y
    } else {
        y
    }
}

/// Inverse of [`to_surrogate`]. Values outside ±(1 - 1e-7) are clamped
/// first; the second return is how many voxels were clamped.
pub fn from_surrogate<T: Real>(s: &Volume<T>, cfg: &TransformConfig) -> (Volume<T>, usize) {
    let g = T::fromf(cfg.tanh_gain);
    let lim = T::fromf(1.0 - SURROGATE_CLAMP);
    let mut clamped = 0usize;
    let chi = s.map(Quantity::SusceptibilityPpm, |v| {
        let v = if v > lim {
            clamped += 1;
            lim
        } else if v < -lim {
            clamped += 1;
            -lim
        } else {
            v
        };
        atanh_stable(v) / g
    });
    (chi, clamped)
}

/// `phase_scale * field`, moving ppm-scale fields toward unit magnitude.
pub fn scale_phase<T: Real>(field: &Volume<T>, cfg: &TransformConfig) -> Volume<T> {
    let s = T::fromf(cfg.phase_scale);
    field.map(Quantity::Arbitrary, |v| s * v)
}

/// Inverse of [`scale_phase`].
pub fn unscale_phase<T: Real>(scaled: &Volume<T>, cfg: &TransformConfig) -> Result<Volume<T>> {
    if cfg.phase_scale == 0.0 {
        return Err(crate::error::Error::invalid("phase scale must be nonzero".to_string()));
    }
    let s = T::fromf(cfg.phase_scale);
    Ok(scaled.map(Quantity::FieldShiftPpm, |v| v / s))
}
