//! Volumes, spectra and the 3-D FFT wrappers.
//!
//! Memory layout, used identically everywhere in the crate and in the
//! on-disk format: x varies fastest, i.e. `idx = x + nx*(y + ny*z)`.
//!
//! FFT convention is the numpy one: unnormalized forward, `1/N` inverse.

use num_complex::Complex;
use rayon::prelude::*;
use rustfft::{Fft, FftDirection, FftPlanner};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Grid dimensions `(nx, ny, nz)`.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct Dims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Dims {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Result<Self> {
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(Error::invalid(format!(
                "dims must be positive, got ({nx}, {ny}, {nz})"
            )));
        }
        Ok(Dims { nx, ny, nz })
    }

    pub fn cubic(n: usize) -> Result<Self> {
        Dims::new(n, n, n)
    }

    /// Total voxel count.
    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        false // constructor rejects zero extents
    }

    /// Flat index; x fastest.
    #[inline(always)]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        debug_assert!(x < self.nx && y < self.ny && z < self.nz);
        x + self.nx * (y + self.ny * z)
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }
}

/// What a volume's samples mean; carried through files and pipelines.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum Quantity {
    SusceptibilityPpm,
    PhaseRadians,
    FieldShiftPpm,
    Mask,
    Arbitrary,
}

/// Dense scalar volume over a regular grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume<T> {
    dims: Dims,
    voxel_size_mm: [f64; 3],
    quantity: Quantity,
    data: Vec<T>,
}

fn check_voxel_size(v: [f64; 3]) -> Result<()> {
    if v.iter().any(|d| !d.is_finite() || *d <= 0.0) {
        return Err(Error::invalid(format!("voxel size must be positive, got {v:?}")));
    }
    Ok(())
}

impl<T: Real> Volume<T> {
    pub fn new(dims: Dims, voxel_size_mm: [f64; 3], quantity: Quantity, data: Vec<T>) -> Result<Self> {
        check_voxel_size(voxel_size_mm)?;
        if data.len() != dims.len() {
            return Err(Error::invalid(format!(
                "data length {} does not match dims {:?} ({} voxels)",
                data.len(),
                dims,
                dims.len()
            )));
        }
        Ok(Volume { dims, voxel_size_mm, quantity, data })
    }

    pub fn zeros(dims: Dims, voxel_size_mm: [f64; 3], quantity: Quantity) -> Result<Self> {
        Self::new(dims, voxel_size_mm, quantity, vec![T::zero(); dims.len()])
    }

    /// Build from a per-voxel function of `(x, y, z)`.
    pub fn from_fn(
        dims: Dims,
        voxel_size_mm: [f64; 3],
        quantity: Quantity,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Result<Self> {
        check_voxel_size(voxel_size_mm)?;
        let mut data = Vec::with_capacity(dims.len());
        for z in 0..dims.nz {
            for y in 0..dims.ny {
                for x in 0..dims.nx {
                    data.push(f(x, y, z));
                }
            }
        }
        Ok(Volume { dims, voxel_size_mm, quantity, data })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn voxel_size_mm(&self) -> [f64; 3] {
        self.voxel_size_mm
    }

    pub fn quantity(&self) -> Quantity {
        self.quantity
    }

    pub fn set_quantity(&mut self, q: Quantity) {
        self.quantity = q;
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline(always)]
    pub fn at(&self, x: usize, y: usize, z: usize) -> T {
        self.data[self.dims.index(x, y, z)]
    }

    #[inline(always)]
    pub fn at_mut(&mut self, x: usize, y: usize, z: usize) -> &mut T {
        let i = self.dims.index(x, y, z);
        &mut self.data[i]
    }

    /// Same grid, new samples.
    pub fn map(&self, quantity: Quantity, mut f: impl FnMut(T) -> T) -> Volume<T> {
        Volume {
            dims: self.dims,
            voxel_size_mm: self.voxel_size_mm,
            quantity,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Precision conversion at module boundaries (I/O is always f64).
    pub fn cast<U: Real>(&self) -> Volume<U> {
        Volume {
            dims: self.dims,
            voxel_size_mm: self.voxel_size_mm,
            quantity: self.quantity,
            data: self.data.iter().map(|v| U::fromf(v.tof())).collect(),
        }
    }

    pub fn same_grid<U: Real>(&self, other: &Volume<U>) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::DimMismatch { expected: self.dims, got: other.dims });
        }
        Ok(())
    }
}

/// Complex k-space counterpart of a [`Volume`].
#[derive(Clone, Debug)]
pub struct Spectrum<T> {
    dims: Dims,
    voxel_size_mm: [f64; 3],
    quantity: Quantity,
    data: Vec<Complex<T>>,
}

impl<T: Real> Spectrum<T> {
    pub fn new(
        dims: Dims,
        voxel_size_mm: [f64; 3],
        quantity: Quantity,
        data: Vec<Complex<T>>,
    ) -> Result<Self> {
        check_voxel_size(voxel_size_mm)?;
        if data.len() != dims.len() {
            return Err(Error::invalid(format!(
                "spectrum length {} does not match dims {:?}",
                data.len(),
                dims
            )));
        }
        Ok(Spectrum { dims, voxel_size_mm, quantity, data })
    }

    pub fn zeros(dims: Dims, voxel_size_mm: [f64; 3], quantity: Quantity) -> Result<Self> {
        Self::new(dims, voxel_size_mm, quantity, vec![Complex::new(T::zero(), T::zero()); dims.len()])
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn voxel_size_mm(&self) -> [f64; 3] {
        self.voxel_size_mm
    }

    pub fn quantity(&self) -> Quantity {
        self.quantity
    }

    pub fn set_quantity(&mut self, q: Quantity) {
        self.quantity = q;
    }

    pub fn data(&self) -> &[Complex<T>] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex<T>] {
        &mut self.data
    }

    #[inline(always)]
    pub fn at(&self, x: usize, y: usize, z: usize) -> Complex<T> {
        self.data[self.dims.index(x, y, z)]
    }
}

/// Unit vector giving the main-field direction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct Orientation([f64; 3]);

impl Orientation {
    /// Accepts an already-unit vector (|v| within 1e-12 of 1).
    pub fn new(v: [f64; 3]) -> Result<Self> {
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if !norm.is_finite() || (norm - 1.0).abs() > 1e-12 {
            return Err(Error::NonUnitOrientation { norm });
        }
        Ok(Orientation(v))
    }

    /// Normalizes an arbitrary nonzero vector.
    pub fn normalized(v: [f64; 3]) -> Result<Self> {
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if !norm.is_finite() || norm < 1e-12 {
            return Err(Error::invalid(format!("cannot normalize orientation {v:?}")));
        }
        Ok(Orientation([v[0] / norm, v[1] / norm, v[2] / norm]))
    }

    /// Scanner frame z axis (the default B0 direction).
    pub fn z() -> Self {
        Orientation([0.0, 0.0, 1.0])
    }

    /// Unit vector tilted `polar_deg` away from z, rotated `azimuth_deg`
    /// around z (azimuth 0 tilts toward +x).
    pub fn tilted(polar_deg: f64, azimuth_deg: f64) -> Self {
        let th = polar_deg.to_radians();
        let ph = azimuth_deg.to_radians();
        Orientation::normalized([th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()])
            .expect("unit construction")
    }

    pub fn as_array(&self) -> [f64; 3] {
        self.0
    }
}

impl TryFrom<[f64; 3]> for Orientation {
    type Error = Error;
    fn try_from(v: [f64; 3]) -> Result<Self> {
        Orientation::new(v)
    }
}

impl From<Orientation> for [f64; 3] {
    fn from(o: Orientation) -> [f64; 3] {
        o.0
    }
}

/// numpy-style `fftfreq`: bin `j` carries `j/(n*d)` for `j < ceil(n/2)`,
/// `(j-n)/(n*d)` above (wraparound negatives).
fn fftfreq(n: usize, d: f64) -> Vec<f64> {
    let cutoff = n.div_ceil(2);
    (0..n)
        .map(|j| {
            let j = if j < cutoff { j as f64 } else { j as f64 - n as f64 };
            j / (n as f64 * d)
        })
        .collect()
}

/// Per-axis frequency grids (cycles/mm) for a volume's sampling.
pub fn frequency_coords(dims: Dims, voxel_size_mm: [f64; 3]) -> Result<[Vec<f64>; 3]> {
    check_voxel_size(voxel_size_mm)?;
    Ok([
        fftfreq(dims.nx, voxel_size_mm[0]),
        fftfreq(dims.ny, voxel_size_mm[1]),
        fftfreq(dims.nz, voxel_size_mm[2]),
    ])
}

fn line_pass<T: Real>(
    data: &mut [Complex<T>],
    plan: &Arc<dyn Fft<T>>,
    n: usize,
    count: usize,
    offset: impl Fn(usize, usize) -> usize, // (line, position within line) -> flat index
) {
    let mut line = vec![Complex::new(T::zero(), T::zero()); n];
    let mut scratch = vec![Complex::new(T::zero(), T::zero()); plan.get_inplace_scratch_len()];
    for l in 0..count {
        for (j, v) in line.iter_mut().enumerate() {
            *v = data[offset(l, j)];
        }
        plan.process_with_scratch(&mut line, &mut scratch);
        for (j, v) in line.iter().enumerate() {
            data[offset(l, j)] = *v;
        }
    }
}

fn fft3d_in_place<T: Real>(data: &mut [Complex<T>], dims: Dims, direction: FftDirection) {
    let Dims { nx, ny, nz } = dims;
    let mut planner = FftPlanner::new();
    // x axis: contiguous rows, parallel over rows.
    if nx > 1 {
        let plan = planner.plan_fft(nx, direction);
        data.par_chunks_mut(nx).for_each_init(
            || vec![Complex::new(T::zero(), T::zero()); plan.get_inplace_scratch_len()],
            |scratch, row| plan.process_with_scratch(row, scratch),
        );
    }
    // y axis: stride-nx lines within each z slab.
    if ny > 1 {
        let plan = planner.plan_fft(ny, direction);
        line_pass(data, &plan, ny, nx * nz, |l, j| {
            let (x, z) = (l % nx, l / nx);
            x + nx * (j + ny * z)
        });
    }
    // z axis: stride-(nx*ny) lines.
    if nz > 1 {
        let plan = planner.plan_fft(nz, direction);
        line_pass(data, &plan, nz, nx * ny, |l, j| l + nx * ny * j);
    }
}

/// Forward 3-D FFT of a real volume (unnormalized).
pub fn fft_forward<T: Real>(volume: &Volume<T>) -> Spectrum<T> {
    let mut data: Vec<Complex<T>> = volume
        .data()
        .iter()
        .map(|&v| Complex::new(v, T::zero()))
        .collect();
    fft3d_in_place(&mut data, volume.dims(), FftDirection::Forward);
    Spectrum {
        dims: volume.dims(),
        voxel_size_mm: volume.voxel_size_mm(),
        quantity: volume.quantity(),
        data,
    }
}

/// Inverse 3-D FFT (`1/N` normalization), returning the real part.
///
/// The spectrum is expected to be conjugate-symmetric; the discarded
/// imaginary residue is checked and an `ImaginaryResidue` error is raised
/// when its max-abs exceeds 1e-6 (well-formed inputs stay below 1e-9).
pub fn fft_inverse<T: Real>(spectrum: &Spectrum<T>) -> Result<Volume<T>> {
    let dims = spectrum.dims();
    let mut data = spectrum.data().to_vec();
    fft3d_in_place(&mut data, dims, FftDirection::Inverse);
    let scale = T::fromf(1.0 / dims.len() as f64);
    let mut max_imag = 0.0f64;
    let real: Vec<T> = data
        .iter()
        .map(|c| {
            let im = (c.im * scale).tof().abs();
            if im > max_imag {
                max_imag = im;
            }
            c.re * scale
        })
        .collect();
    if max_imag > 1e-6 {
        return Err(Error::ImaginaryResidue { max_abs: max_imag });
    }
    Volume::new(dims, spectrum.voxel_size_mm(), spectrum.quantity(), real)
}
