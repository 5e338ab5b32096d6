//! Classical k-space dipole inversions: TKD, Tikhonov, COSMOS.
//!
//! All three act per k-space bin on `Y = fft(field)` and share conventions:
//! the DC bin of the output is zero (the volume-mean susceptibility is
//! unobservable) and the result is the real part of the inverse FFT.

use num_complex::Complex;

use crate::dipole::{build_kernel, DipoleKernel};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::volume::{fft_forward, fft_inverse, Orientation, Quantity, Volume};

/// Thresholded k-space division settings.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct TkdConfig {
    /// Kernel magnitude below which a bin counts as inside the cone.
    pub threshold: f64,
}

impl Default for TkdConfig {
    fn default() -> Self {
        TkdConfig { threshold: 0.15 }
    }
}

/// Per-bin TKD gain: straight `1/d` on well-conditioned bins, sign-preserving
/// `1/(sign(d)*t)` inside the cone. `d == 0` takes sign +1 so the rule stays
/// total (exact zeros do occur on integer grids at the magic angle).
#[inline]
fn tkd_gain(d: f64, t: f64) -> f64 {
    if d.abs() >= t {
        1.0 / d
    } else if d < 0.0 {
        -1.0 / t
    } else {
        1.0 / t
    }
}

/// Thresholded k-space division.
pub fn tkd_invert<T: Real>(
    field: &Volume<T>,
    kernel: &DipoleKernel<T>,
    cfg: &TkdConfig,
) -> Result<Volume<T>> {
    if cfg.threshold <= 0.0 || !cfg.threshold.is_finite() {
        return Err(Error::invalid(format!("TKD threshold must be positive, got {}", cfg.threshold)));
    }
    kernel.matches_grid(field)?;
    let mut spec = fft_forward(field);
    for (s, d) in spec.data_mut().iter_mut().zip(kernel.values()) {
        let g = T::fromf(tkd_gain(d.tof(), cfg.threshold));
        *s *= g;
    }
    spec.data_mut()[0] = Complex::new(T::zero(), T::zero());
    spec.set_quantity(Quantity::SusceptibilityPpm);
    fft_inverse(&spec)
}

/// Closed-form Tikhonov-regularized inversion: `chi(k) = d*Y/(d^2 + lambda)`.
pub fn tikhonov_invert<T: Real>(
    field: &Volume<T>,
    kernel: &DipoleKernel<T>,
    lambda: f64,
) -> Result<Volume<T>> {
    if lambda <= 0.0 || !lambda.is_finite() {
        return Err(Error::invalid(format!("Tikhonov lambda must be positive, got {lambda}")));
    }
    kernel.matches_grid(field)?;
    let mut spec = fft_forward(field);
    for (s, d) in spec.data_mut().iter_mut().zip(kernel.values()) {
        let d = d.tof();
        let g = T::fromf(d / (d * d + lambda));
        *s *= g;
    }
    spec.data_mut()[0] = Complex::new(T::zero(), T::zero());
    spec.set_quantity(Quantity::SusceptibilityPpm);
    fft_inverse(&spec)
}

/// Multi-orientation least-squares (COSMOS): per bin,
/// `chi(k) = sum_i d_i*Y_i / sum_i d_i^2`, zeroed where the denominator is
/// below 1e-10 (jointly ill-conditioned bins, including DC).
///
/// Orientations enter through the kernels; all fields live on one grid in
/// scanner frame (the subject is "rotated" by re-orienting B0).
pub fn cosmos_invert<T: Real>(
    fields: &[Volume<T>],
    orientations: &[Orientation],
) -> Result<Volume<T>> {
    if fields.is_empty() || orientations.is_empty() {
        return Err(Error::invalid("cosmos needs at least one field/orientation pair".to_string()));
    }
    if fields.len() != orientations.len() {
        return Err(Error::invalid(format!(
            "{} fields but {} orientations",
            fields.len(),
            orientations.len()
        )));
    }
    let dims = fields[0].dims();
    let voxel = fields[0].voxel_size_mm();
    for f in fields {
        fields[0].same_grid(f)?;
    }

    let mut num = vec![Complex::new(T::zero(), T::zero()); dims.len()];
    let mut den = vec![0.0f64; dims.len()];
    for (f, &o) in fields.iter().zip(orientations) {
        let kernel = build_kernel::<T>(dims, voxel, o)?;
        let spec = fft_forward(f);
        for ((n, d), (y, k)) in num
            .iter_mut()
            .zip(den.iter_mut())
            .zip(spec.data().iter().zip(kernel.values()))
        {
            *n += *y * *k;
            let kf = k.tof();
            *d += kf * kf;
        }
    }
    let chi: Vec<Complex<T>> = num
        .iter()
        .zip(&den)
        .map(|(n, &d)| {
            if d < 1e-10 {
                Complex::new(T::zero(), T::zero())
            } else {
                *n * T::fromf(1.0 / d)
            }
        })
        .collect();
    let spec = crate::volume::Spectrum::new(dims, voxel, Quantity::SusceptibilityPpm, chi)?;
    fft_inverse(&spec)
}
