//! Patch geometry, training-patch sampling, and inference tiling.
//!
//! Window convention: a patch of size `p` centered at voxel `c` spans
//! `[c - p/2, c - p/2 + p)` per axis (integer division, so even sizes put
//! the "center" just right of the true middle).

use rand::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::volume::{Dims, Volume};

/// Receptive-field geometry of one network pass: the input window is the
/// output window dilated by `margin()` on every side.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct PatchGeometry {
    pub input_size: usize,
    pub output_size: usize,
}

impl PatchGeometry {
    pub fn new(input_size: usize, output_size: usize) -> Result<Self> {
        let g = PatchGeometry { input_size, output_size };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.output_size == 0 {
            return Err(Error::invalid("output size must be positive".to_string()));
        }
        if self.input_size < self.output_size {
            return Err(Error::invalid(format!(
                "input size {} smaller than output size {}",
                self.input_size, self.output_size
            )));
        }
        if !(self.input_size - self.output_size).is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "margin must be integral: input {} output {}",
                self.input_size, self.output_size
            )));
        }
        Ok(())
    }

    /// Crop margin per side.
    pub fn margin(&self) -> usize {
        (self.input_size - self.output_size) / 2
    }

    /// Both sizes must survive `depth` halvings (U-Net pooling levels).
    pub fn check_depth(&self, depth: u32) -> Result<()> {
        let div = 1usize << depth;
        if !self.input_size.is_multiple_of(div) || !self.output_size.is_multiple_of(div) {
            return Err(Error::invalid(format!(
                "geometry {}->{} not divisible by 2^{depth}",
                self.input_size, self.output_size
            )));
        }
        Ok(())
    }
}

/// Training-patch sampling parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    /// Candidate-grid stride in voxels.
    pub grid_gap: usize,
    /// Fraction of draws whose center voxel lies inside the brain mask.
    pub brain_fraction: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig { grid_gap: 8, brain_fraction: 0.9 }
    }
}

/// Grid candidates whose *output* window lies fully inside the volume
/// (input windows may overrun; extraction zero-pads).
pub fn candidate_centers(dims: Dims, geom: &PatchGeometry, grid_gap: usize) -> Result<Vec<[usize; 3]>> {
    if grid_gap == 0 {
        return Err(Error::invalid("grid gap must be positive".to_string()));
    }
    geom.validate()?;
    let half = geom.output_size / 2;
    let fits = |c: usize, n: usize| c >= half && c + geom.output_size - half <= n;
    let axis = |n: usize| -> Vec<usize> {
        (0..n).step_by(grid_gap).filter(|&c| fits(c, n)).collect()
    };
    let (xs, ys, zs) = (axis(dims.nx), axis(dims.ny), axis(dims.nz));
    let mut out = Vec::with_capacity(xs.len() * ys.len() * zs.len());
    for &z in &zs {
        for &y in &ys {
            for &x in &xs {
                out.push([x, y, z]);
            }
        }
    }
    if out.is_empty() {
        return Err(Error::invalid(format!(
            "no candidate centers: dims {dims:?} too small for output size {}",
            geom.output_size
        )));
    }
    Ok(out)
}

/// Candidate centers split by the mask value at the center voxel.
pub struct CenterPools {
    pub brain: Vec<[usize; 3]>,
    pub background: Vec<[usize; 3]>,
}

pub fn split_by_mask<T: Real>(
    centers: &[[usize; 3]],
    mask: &Volume<T>,
) -> CenterPools {
    let mut brain = Vec::new();
    let mut background = Vec::new();
    for &c in centers {
        if mask.at(c[0], c[1], c[2]) != T::zero() {
            brain.push(c);
        } else {
            background.push(c);
        }
    }
    CenterPools { brain, background }
}

impl CenterPools {
    /// Draws one center: brain with probability `brain_fraction`, else
    /// background. An empty pool falls back to the other one.
    pub fn draw(&self, brain_fraction: f64, rng: &mut impl Rng) -> [usize; 3] {
        let want_brain = rng.random_range(0.0..1.0) < brain_fraction;
        let pool = if (want_brain && !self.brain.is_empty()) || self.background.is_empty() {
            &self.brain
        } else {
            &self.background
        };
        pool[rng.random_range(0..pool.len())]
    }
}

/// Copies the `size`-wide window centered at `center`, zero-padding parts
/// that fall outside the volume.
pub fn extract_padded<T: Real>(vol: &Volume<T>, center: [usize; 3], size: usize) -> Vec<T> {
    let dims = vol.dims();
    let n = [dims.nx as isize, dims.ny as isize, dims.nz as isize];
    let start: Vec<isize> = (0..3).map(|a| center[a] as isize - (size / 2) as isize).collect();
    let mut out = vec![T::zero(); size * size * size];
    let mut i = 0;
    for dz in 0..size as isize {
        let z = start[2] + dz;
        for dy in 0..size as isize {
            let y = start[1] + dy;
            for dx in 0..size as isize {
                let x = start[0] + dx;
                if x >= 0 && x < n[0] && y >= 0 && y < n[1] && z >= 0 && z < n[2] {
                    out[i] = vol.at(x as usize, y as usize, z as usize);
                }
                i += 1;
            }
        }
    }
    out
}

/// Copies a window that must lie fully inside the volume.
pub fn extract_interior<T: Real>(vol: &Volume<T>, center: [usize; 3], size: usize) -> Result<Vec<T>> {
    let dims = vol.dims();
    let n = [dims.nx, dims.ny, dims.nz];
    let half = size / 2;
    for a in 0..3 {
        if center[a] < half || center[a] - half + size > n[a] {
            return Err(Error::invalid(format!(
                "window of size {size} at center {center:?} overruns dims {dims:?}"
            )));
        }
    }
    let start = [center[0] - half, center[1] - half, center[2] - half];
    let mut out = Vec::with_capacity(size * size * size);
    for dz in 0..size {
        for dy in 0..size {
            for dx in 0..size {
                out.push(vol.at(start[0] + dx, start[1] + dy, start[2] + dz));
            }
        }
    }
    Ok(out)
}

/// One inference tile: the network sees the `input_size` window starting at
/// `in_start` (zero-padded where negative/overrunning) and predicts the
/// nominal `output_size` window at `out_start`; only the first `out_len`
/// voxels per axis are written (edge tiles clamp).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Tile {
    pub out_start: [usize; 3],
    pub out_len: [usize; 3],
    pub in_start: [isize; 3],
}

/// Non-overlapping output tiling of a volume plus margin-dilated inputs.
#[derive(Clone, Debug)]
pub struct TilePlan {
    pub geom: PatchGeometry,
    pub dims: Dims,
    pub tiles: Vec<Tile>,
}

pub fn tile_plan(dims: Dims, geom: &PatchGeometry) -> Result<TilePlan> {
    geom.validate()?;
    let out = geom.output_size;
    let margin = geom.margin() as isize;
    let n = dims.as_array();
    let counts: Vec<usize> = n.iter().map(|&d| d.div_ceil(out)).collect();
    let mut tiles = Vec::with_capacity(counts[0] * counts[1] * counts[2]);
    for jz in 0..counts[2] {
        for jy in 0..counts[1] {
            for jx in 0..counts[0] {
                let j = [jx, jy, jz];
                let mut t = Tile { out_start: [0; 3], out_len: [0; 3], in_start: [0; 3] };
                for a in 0..3 {
                    let s = j[a] * out;
                    t.out_start[a] = s;
                    t.out_len[a] = out.min(n[a] - s);
                    t.in_start[a] = s as isize - margin;
                }
                tiles.push(t);
            }
        }
    }
    Ok(TilePlan { geom: *geom, dims, tiles })
}

/// Reassembles full-size output patches (`output_size^3` each, in plan
/// order) into a volume. Every voxel must be written exactly once; a
/// malformed plan is a hard error.
pub fn stitch<T: Real>(
    plan: &TilePlan,
    patches: &[Vec<T>],
    voxel_size_mm: [f64; 3],
    quantity: crate::volume::Quantity,
) -> Result<Volume<T>> {
    if patches.len() != plan.tiles.len() {
        return Err(Error::invalid(format!(
            "{} patches for {} tiles",
            patches.len(),
            plan.tiles.len()
        )));
    }
    let out = plan.geom.output_size;
    let dims = plan.dims;
    let mut data = vec![T::zero(); dims.len()];
    let mut written = vec![false; dims.len()];
    for (tile, patch) in plan.tiles.iter().zip(patches) {
        if patch.len() != out * out * out {
            return Err(Error::invalid(format!(
                "patch has {} voxels, expected {}",
                patch.len(),
                out * out * out
            )));
        }
        for dz in 0..tile.out_len[2] {
            for dy in 0..tile.out_len[1] {
                for dx in 0..tile.out_len[0] {
                    let (x, y, z) = (tile.out_start[0] + dx, tile.out_start[1] + dy, tile.out_start[2] + dz);
                    if x >= dims.nx || y >= dims.ny || z >= dims.nz {
                        return Err(Error::invalid(format!("tile writes outside volume at ({x},{y},{z})")));
                    }
                    let i = dims.index(x, y, z);
                    if written[i] {
                        return Err(Error::invalid(format!("voxel ({x},{y},{z}) written twice")));
                    }
                    written[i] = true;
                    data[i] = patch[dx + out * (dy + out * dz)];
                }
            }
        }
    }
    if let Some(i) = written.iter().position(|&w| !w) {
        return Err(Error::invalid(format!("voxel index {i} never written (gap in plan)")));
    }
    Volume::new(dims, voxel_size_mm, quantity, data)
}
