//! Fourier-domain dipole kernel and the susceptibility-to-field forward model.
//!
//! With B0 normalized to 1 and fields expressed in ppm, the field shift in
//! k-space is `field(k) = D(k) * chi(k)` where
//!
//! ```text
//! D(k) = 1/3 - (k . b)^2 / |k|^2,      D(0) = 0
//! ```
//!
//! for unit main-field direction `b`. The DC value is a convention: the
//! volume-mean susceptibility is unobservable, so the kernel kills it. `D`
//! vanishes on the magic-angle cone (k at ~54.7 degrees to `b`), the source
//! of the ill-posedness all the inversions in this crate deal with.

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::volume::{fft_forward, fft_inverse, frequency_coords, Dims, Orientation, Quantity, Volume};

/// Precomputed real-valued dipole kernel over a k-space grid.
#[derive(Clone, Debug)]
pub struct DipoleKernel<T> {
    dims: Dims,
    voxel_size_mm: [f64; 3],
    orientation: Orientation,
    values: Vec<T>,
}

#[inline]
fn dipole_value(k: [f64; 3], b: [f64; 3]) -> f64 {
    let k2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
    if k2 == 0.0 {
        return 0.0;
    }
    let kb = k[0] * b[0] + k[1] * b[1] + k[2] * b[2];
    1.0 / 3.0 - (kb * kb) / k2
}

/// Builds the kernel for a grid and main-field direction.
///
/// Nyquist bins of even axes are self-aliased (they stand for both
/// `+1/(2d)` and `-1/(2d)`); the kernel there is the average over the alias
/// choices. That keeps `D` exactly even under wrapped negation for any
/// orientation, which in turn keeps `D * fft(real volume)`
/// conjugate-symmetric, so forward fields stay real to rounding.
pub fn build_kernel<T: Real>(
    dims: Dims,
    voxel_size_mm: [f64; 3],
    orientation: Orientation,
) -> Result<DipoleKernel<T>> {
    if dims.nx < 2 || dims.ny < 2 || dims.nz < 2 {
        return Err(Error::invalid(format!("kernel needs at least 2 samples per axis, got {dims:?}")));
    }
    let freqs = frequency_coords(dims, voxel_size_mm)?;
    let b = orientation.as_array();
    let n = dims.as_array();
    let nyquist = |ax: usize, j: usize| n[ax].is_multiple_of(2) && j == n[ax] / 2;
    let mut values = Vec::with_capacity(dims.len());
    for (z, &kz) in freqs[2].iter().enumerate() {
        for (y, &ky) in freqs[1].iter().enumerate() {
            for (x, &kx) in freqs[0].iter().enumerate() {
                let nyq = [nyquist(0, x), nyquist(1, y), nyquist(2, z)];
                let v = if nyq.iter().any(|&q| q) {
                    let mut terms: Vec<f64> = Vec::with_capacity(8);
                    for s in 0..8u8 {
                        let sign = |ax: usize| if s >> ax & 1 == 0 { 1.0 } else { -1.0 };
                        if (0..3).any(|ax| !nyq[ax] && s >> ax & 1 == 1) {
                            continue; // only Nyquist axes alias
                        }
                        terms.push(dipole_value([sign(0) * kx, sign(1) * ky, sign(2) * kz], b));
                    }
                    // Sorted summation: a bin and its mirror enumerate the
                    // same alias values in different orders; keep the average
                    // bit-identical on both.
                    terms.sort_by(f64::total_cmp);
                    terms.iter().sum::<f64>() / terms.len() as f64
                } else {
                    dipole_value([kx, ky, kz], b)
                };
                values.push(T::fromf(v));
            }
        }
    }
    Ok(DipoleKernel { dims, voxel_size_mm, orientation, values })
}

impl<T: Real> DipoleKernel<T> {
    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn voxel_size_mm(&self) -> [f64; 3] {
        self.voxel_size_mm
    }

    pub fn orientation(&self) -> Orientation {
        self.orientation
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    #[inline(always)]
    pub fn at(&self, x: usize, y: usize, z: usize) -> T {
        self.values[self.dims.index(x, y, z)]
    }

    pub fn matches_grid(&self, vol: &Volume<T>) -> Result<()> {
        if self.dims != vol.dims() {
            return Err(Error::DimMismatch { expected: self.dims, got: vol.dims() });
        }
        if self.voxel_size_mm != vol.voxel_size_mm() {
            return Err(Error::invalid(format!(
                "kernel voxel size {:?} != volume voxel size {:?}",
                self.voxel_size_mm,
                vol.voxel_size_mm()
            )));
        }
        Ok(())
    }
}

/// Applies the forward model: susceptibility (ppm) in, field shift (ppm) out.
pub fn forward_field<T: Real>(chi: &Volume<T>, kernel: &DipoleKernel<T>) -> Result<Volume<T>> {
    kernel.matches_grid(chi)?;
    let mut spec = fft_forward(chi);
    for (s, &d) in spec.data_mut().iter_mut().zip(kernel.values()) {
        *s *= d;
    }
    spec.set_quantity(Quantity::FieldShiftPpm);
    fft_inverse(&spec)
}

/// Binary k-space mask of the ill-conditioned cone: 1 where `|D| < threshold`.
///
/// Stored as a volume over the k-space grid (same layout as the kernel).
pub fn cone_mask<T: Real>(kernel: &DipoleKernel<T>, threshold: f64) -> Volume<T> {
    let data: Vec<T> = kernel
        .values()
        .iter()
        .map(|d| if d.tof().abs() < threshold { T::one() } else { T::zero() })
        .collect();
    Volume::new(kernel.dims(), kernel.voxel_size_mm(), Quantity::Mask, data)
        .expect("kernel grid is valid")
}
