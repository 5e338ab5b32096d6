//! Synthetic susceptibility phantoms and the analytic sphere oracle.
//!
//! Geometry is expressed in voxel-index units (x fastest layout, voxel `i`
//! centered at coordinate `i`). Shape boundaries are hard-edge voxelized: a
//! voxel is inside iff its center is, no partial-volume weighting.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dipole::{build_kernel, forward_field};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::volume::{Dims, Orientation, Quantity, Volume};

/// Susceptibility element shapes.
///
/// `Cylinder` is axis-aligned with z and runs the full volume extent
/// (`size_voxels` is its radius). `GaussianBlob` adds a smooth
/// `exp(-d^2/(2*size^2))` profile; `PointSource` hits the voxel nearest to
/// its center (`size_voxels` ignored).
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum Shape {
    Sphere,
    Cylinder,
    GaussianBlob,
    PointSource,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Element {
    pub shape: Shape,
    pub center_voxel: [f64; 3],
    pub size_voxels: f64,
    pub delta_chi_ppm: f64,
}

/// Full description of a phantom; serializable, drives the CLI.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub dims: Dims,
    pub voxel_size_mm: [f64; 3],
    pub seed: u64,
    #[serde(default)]
    pub background_chi_ppm: f64,
    pub elements: Vec<Element>,
}

/// Ellipsoidal "brain" mask: semi-axes 0.49*n per axis about the grid
/// center, ~49% of the FOV.
fn brain_mask<T: Real>(dims: Dims, voxel_size_mm: [f64; 3]) -> Result<Volume<T>> {
    let c = [
        (dims.nx as f64 - 1.0) / 2.0,
        (dims.ny as f64 - 1.0) / 2.0,
        (dims.nz as f64 - 1.0) / 2.0,
    ];
    let r = [0.49 * dims.nx as f64, 0.49 * dims.ny as f64, 0.49 * dims.nz as f64];
    Volume::from_fn(dims, voxel_size_mm, Quantity::Mask, |x, y, z| {
        let u = (x as f64 - c[0]) / r[0];
        let v = (y as f64 - c[1]) / r[1];
        let w = (z as f64 - c[2]) / r[2];
        if u * u + v * v + w * w <= 1.0 {
            T::one()
        } else {
            T::zero()
        }
    })
}

fn add_element<T: Real>(chi: &mut Volume<T>, e: &Element) {
    let dims = chi.dims();
    let [cx, cy, cz] = e.center_voxel;
    let dchi = T::fromf(e.delta_chi_ppm);
    match e.shape {
        Shape::Sphere => {
            let r2 = e.size_voxels * e.size_voxels;
            for z in 0..dims.nz {
                for y in 0..dims.ny {
                    for x in 0..dims.nx {
                        let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) + (z as f64 - cz).powi(2);
                        if d2 <= r2 {
                            let v = chi.at_mut(x, y, z);
                            *v += dchi;
                        }
                    }
                }
            }
        }
        Shape::Cylinder => {
            let r2 = e.size_voxels * e.size_voxels;
            for z in 0..dims.nz {
                for y in 0..dims.ny {
                    for x in 0..dims.nx {
                        let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                        if d2 <= r2 {
                            let v = chi.at_mut(x, y, z);
                            *v += dchi;
                        }
                    }
                }
            }
        }
        Shape::GaussianBlob => {
            let two_s2 = 2.0 * e.size_voxels * e.size_voxels;
            for z in 0..dims.nz {
                for y in 0..dims.ny {
                    for x in 0..dims.nx {
                        let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) + (z as f64 - cz).powi(2);
                        let v = chi.at_mut(x, y, z);
                        *v += dchi * T::fromf((-d2 / two_s2).exp());
                    }
                }
            }
        }
        Shape::PointSource => {
            let xi = cx.round() as i64;
            let yi = cy.round() as i64;
            let zi = cz.round() as i64;
            if (0..dims.nx as i64).contains(&xi)
                && (0..dims.ny as i64).contains(&yi)
                && (0..dims.nz as i64).contains(&zi)
            {
                let v = chi.at_mut(xi as usize, yi as usize, zi as usize);
                *v += dchi;
            }
        }
    }
}

/// Voxelizes a spec into a susceptibility map and its brain mask.
/// Overlapping elements sum their contributions.
pub fn generate<T: Real>(spec: &PhantomSpec) -> Result<(Volume<T>, Volume<T>)> {
    let mut chi = Volume::from_fn(spec.dims, spec.voxel_size_mm, Quantity::SusceptibilityPpm, |_, _, _| {
        T::fromf(spec.background_chi_ppm)
    })?;
    for e in &spec.elements {
        if e.size_voxels < 0.0 || !e.size_voxels.is_finite() {
            return Err(Error::invalid(format!("element size must be finite and >= 0, got {}", e.size_voxels)));
        }
        add_element(&mut chi, e);
    }
    let mask = brain_mask(spec.dims, spec.voxel_size_mm)?;
    Ok((chi, mask))
}

/// Closed-form field of a uniformly susceptible sphere in a unit main field:
/// `(dchi/3)*(a/r)^3*(3cos^2(theta)-1)` outside, 0 inside (Lorentz-corrected,
/// matching the Fourier forward model's convention). Distances in voxel
/// units; the formula assumes an isotropic grid.
pub fn analytic_sphere_field<T: Real>(
    dims: Dims,
    voxel_size_mm: [f64; 3],
    center_voxel: [f64; 3],
    radius_voxels: f64,
    delta_chi_ppm: f64,
    orientation: Orientation,
) -> Result<Volume<T>> {
    if voxel_size_mm[0] != voxel_size_mm[1] || voxel_size_mm[1] != voxel_size_mm[2] {
        return Err(Error::invalid(
            "analytic sphere field is only valid on isotropic grids".to_string(),
        ));
    }
    if radius_voxels <= 0.0 {
        return Err(Error::invalid(format!("sphere radius must be positive, got {radius_voxels}")));
    }
    let [bx, by, bz] = orientation.as_array();
    let a3 = radius_voxels.powi(3);
    Volume::from_fn(dims, voxel_size_mm, Quantity::FieldShiftPpm, |x, y, z| {
        let dx = x as f64 - center_voxel[0];
        let dy = y as f64 - center_voxel[1];
        let dz = z as f64 - center_voxel[2];
        let r2 = dx * dx + dy * dy + dz * dz;
        if r2 <= radius_voxels * radius_voxels {
            return T::zero();
        }
        let cos = (dx * bx + dy * by + dz * bz) / r2.sqrt();
        T::fromf(delta_chi_ppm / 3.0 * a3 / (r2 * r2.sqrt()) * (3.0 * cos * cos - 1.0))
    })
}

/// One training subject: ground-truth susceptibility, measured field, mask.
#[derive(Clone, Debug)]
pub struct Sample<T> {
    pub chi: Volume<T>,
    pub field: Volume<T>,
    pub mask: Volume<T>,
}

/// Randomizes `template` into `n_subjects` phantoms and forward-models each
/// (B0 along z), adding Gaussian noise of `noise_std_ppm` in the field
/// domain. Per-subject ChaCha streams keep the whole set reproducible:
/// subject `i` is bitwise-stable regardless of how many subjects are drawn.
///
/// Randomization per element: center uniform in the central 60% of each
/// axis, size and delta-chi each scaled by an independent uniform factor in
/// [0.75, 1.25).
pub fn synth_dataset<T: Real>(
    n_subjects: usize,
    template: &PhantomSpec,
    noise_std_ppm: f64,
) -> Result<Vec<Sample<T>>> {
    if noise_std_ppm < 0.0 || !noise_std_ppm.is_finite() {
        return Err(Error::invalid(format!("noise std must be finite and >= 0, got {noise_std_ppm}")));
    }
    let kernel = build_kernel::<T>(template.dims, template.voxel_size_mm, Orientation::z())?;
    let mut out = Vec::with_capacity(n_subjects);
    for i in 0..n_subjects {
        let mut rng = ChaCha8Rng::seed_from_u64(template.seed);
        rng.set_stream(i as u64);
        let mut spec = template.clone();
        for e in &mut spec.elements {
            let d = spec.dims.as_array();
            let mut c = [0.0; 3];
            for (ax, cc) in c.iter_mut().enumerate() {
                let n = d[ax] as f64;
                *cc = rng.random_range(0.2 * n..0.8 * n);
            }
            e.center_voxel = c;
            e.size_voxels *= rng.random_range(0.75..1.25);
            e.delta_chi_ppm *= rng.random_range(0.75..1.25);
        }
        let (chi, mask) = generate::<T>(&spec)?;
        let mut field = forward_field(&chi, &kernel)?;
        if noise_std_ppm > 0.0 {
            let std = T::fromf(noise_std_ppm);
            for v in field.data_mut() {
                let n: f64 = StandardNormal.sample(&mut rng);
                *v += std * T::fromf(n);
            }
        }
        out.push(Sample { chi, field, mask });
    }
    Ok(out)
}
