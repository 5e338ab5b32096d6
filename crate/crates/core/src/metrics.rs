//! Five-metric evaluation suite (L1, PSNR, NMSE, HFEN, SSIM), mask-aware.
//!
//! L1/MSE/NMSE sums run over mask voxels only. HFEN and SSIM filter the
//! full volume (zero-padded at the boundary) and apply the mask when
//! aggregating, so filter support near the mask edge still sees real data.
//! All accumulation is in f64 regardless of the volume scalar type.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::volume::{Dims, Quantity, Volume};

/// Which value domain the compared volumes live in. Derived from the
/// reference volume's quantity tag: `Arbitrary` means network/surrogate
/// space, anything else is physical ppm.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum MetricSpace {
    Ppm,
    Surrogate,
}

/// PSNR is `None` when undefined (zero MSE or zero reference range);
/// JSON renders that as null. `psnr_db` uses `10·log10(R²/MSE)`;
/// `psnr_linear_db` keeps the unsquared-range variant for comparison.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricReport {
    pub l1: f64,
    pub psnr_db: Option<f64>,
    pub psnr_linear_db: Option<f64>,
    pub nmse: f64,
    pub hfen: f64,
    pub ssim: f64,
    pub n_voxels: usize,
    pub space: MetricSpace,
}

const LOG_SUPPORT: usize = 15;
const LOG_SIGMA: f64 = 1.5;
const SSIM_SUPPORT: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

pub fn evaluate<T: Real>(
    recon: &Volume<T>,
    reference: &Volume<T>,
    mask: Option<&Volume<T>>,
) -> Result<MetricReport> {
    let dims = reference.dims();
    if recon.dims() != dims {
        return Err(Error::DimMismatch { expected: dims, got: recon.dims() });
    }
    let mask_f = match mask {
        Some(m) => {
            if m.dims() != dims {
                return Err(Error::DimMismatch { expected: dims, got: m.dims() });
            }
            let mut v = Vec::with_capacity(dims.len());
            for &b in m.data() {
                if b == T::zero() {
                    v.push(false);
                } else if b == T::one() {
                    v.push(true);
                } else {
                    return Err(Error::invalid(format!("mask contains non-binary value {b}")));
                }
            }
            v
        }
        None => vec![true; dims.len()],
    };
    let n_voxels = mask_f.iter().filter(|&&b| b).count();
    if n_voxels == 0 {
        return Err(Error::invalid("mask selects no voxels".to_string()));
    }

    let x: Vec<f64> = reference.data().iter().map(|v| v.tof()).collect();
    let y: Vec<f64> = recon.data().iter().map(|v| v.tof()).collect();

    // Point metrics over the mask.
    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    let mut ref_sq = 0.0;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..x.len() {
        if mask_f[i] {
            let d = y[i] - x[i];
            abs_sum += d.abs();
            sq_sum += d * d;
            ref_sq += x[i] * x[i];
            lo = lo.min(x[i]);
            hi = hi.max(x[i]);
        }
    }
    let nf = n_voxels as f64;
    let l1 = abs_sum / nf;
    let mse = sq_sum / nf;
    let range = hi - lo;

    let (psnr_db, psnr_linear_db) = if mse == 0.0 || range == 0.0 {
        (None, None)
    } else {
        (
            Some(10.0 * (range * range / mse).log10()),
            Some(10.0 * (range / mse).log10()),
        )
    };

    if ref_sq == 0.0 {
        return Err(Error::ZeroNormReference { metric: "nmse" });
    }
    let nmse = sq_sum / ref_sq;

    // HFEN: Laplacian-of-Gaussian response difference, full-volume filtered.
    let log_x = log_filter(&x, dims);
    let log_y = log_filter(&y, dims);
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..x.len() {
        if mask_f[i] {
            let d = log_y[i] - log_x[i];
            num += d * d;
            den += log_x[i] * log_x[i];
        }
    }
    if den == 0.0 {
        return Err(Error::ZeroNormReference { metric: "hfen" });
    }
    let hfen = 100.0 * (num / den).sqrt();

    let ssim = ssim_mean(&x, &y, dims, &mask_f, range);

    Ok(MetricReport {
        l1,
        psnr_db,
        psnr_linear_db,
        nmse,
        hfen,
        ssim,
        n_voxels,
        space: match reference.quantity() {
            Quantity::Arbitrary => MetricSpace::Surrogate,
            _ => MetricSpace::Ppm,
        },
    })
}

/// Pearson correlation over mask voxels (shared by validation suites).
pub fn pearson<T: Real>(a: &Volume<T>, b: &Volume<T>, mask: Option<&Volume<T>>) -> Result<f64> {
    let dims = a.dims();
    if b.dims() != dims {
        return Err(Error::DimMismatch { expected: dims, got: b.dims() });
    }
    let keep = |i: usize| mask.is_none_or(|m| m.data()[i] != T::zero());
    let (mut n, mut sa, mut sb) = (0.0, 0.0, 0.0);
    for i in 0..dims.len() {
        if keep(i) {
            n += 1.0;
            sa += a.data()[i].tof();
            sb += b.data()[i].tof();
        }
    }
    if n == 0.0 {
        return Err(Error::invalid("mask selects no voxels".to_string()));
    }
    let (ma, mb) = (sa / n, sb / n);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for i in 0..dims.len() {
        if keep(i) {
            let da = a.data()[i].tof() - ma;
            let db = b.data()[i].tof() - mb;
            cov += da * db;
            va += da * da;
            vb += db * db;
        }
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::ZeroNormReference { metric: "pearson" });
    }
    Ok(cov / (va * vb).sqrt())
}

// ---- filtering ----

/// Same-size 1-D convolution along `axis` with zero padding; taps are
/// centered (odd length).
fn conv_axis(data: &[f64], dims: Dims, taps: &[f64], axis: usize) -> Vec<f64> {
    let n = dims.as_array();
    let half = taps.len() as isize / 2;
    let stride = match axis {
        0 => 1,
        1 => dims.nx,
        _ => dims.nx * dims.ny,
    };
    let mut out = vec![0.0; data.len()];
    for z in 0..n[2] {
        for y in 0..n[1] {
            for x in 0..n[0] {
                let pos = [x, y, z];
                let base = dims.index(x, y, z);
                let mut acc = 0.0;
                for (t, &w) in taps.iter().enumerate() {
                    let q = pos[axis] as isize + t as isize - half;
                    if q >= 0 && (q as usize) < n[axis] {
                        let idx = (base as isize + (q - pos[axis] as isize) * stride as isize) as usize;
                        acc += w * data[idx];
                    }
                }
                out[base] = acc;
            }
        }
    }
    out
}

fn conv_sep(data: &[f64], dims: Dims, tx: &[f64], ty: &[f64], tz: &[f64]) -> Vec<f64> {
    let a = conv_axis(data, dims, tx, 0);
    let b = conv_axis(&a, dims, ty, 1);
    conv_axis(&b, dims, tz, 2)
}

/// 1-D Gaussian `exp(-d²/2σ²)` on a centered odd support, unnormalized.
fn gauss_taps(support: usize, sigma: f64) -> Vec<f64> {
    let c = (support / 2) as isize;
    (0..support as isize)
        .map(|i| {
            let d = (i - c) as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect()
}

/// Second-derivative factor `g(d)·(d² - σ²)/σ⁴` of the separable LoG.
fn gauss_dd_taps(support: usize, sigma: f64) -> Vec<f64> {
    let c = (support / 2) as isize;
    let s2 = sigma * sigma;
    (0..support as isize)
        .map(|i| {
            let d = (i - c) as f64;
            (-d * d / (2.0 * s2)).exp() * (d * d - s2) / (s2 * s2)
        })
        .collect()
}

/// Mean of the dense sampled LoG kernel (for DC removal). The dense kernel
/// at offset v is `g(x)g(y)g(z)·(|v|² - 3σ²)/σ⁴`, exactly the sum of the
/// three separable second-derivative terms.
fn log_kernel_mean(support: usize, sigma: f64) -> f64 {
    let g = gauss_taps(support, sigma);
    let gdd = gauss_dd_taps(support, sigma);
    let sg: f64 = g.iter().sum();
    let sdd: f64 = gdd.iter().sum();
    // sum over the cube of (gdd·g·g + g·gdd·g + g·g·gdd) = 3·sdd·sg².
    3.0 * sdd * sg * sg / (support as f64).powi(3)
}

/// Laplacian-of-Gaussian response, 15³ support, σ = 1.5, mean-subtracted
/// so constant regions map to zero. Computed as three separable passes
/// plus a box correction; the dense 15³ convolution gives identical values.
fn log_filter(data: &[f64], dims: Dims) -> Vec<f64> {
    let g = gauss_taps(LOG_SUPPORT, LOG_SIGMA);
    let gdd = gauss_dd_taps(LOG_SUPPORT, LOG_SIGMA);
    let ones = vec![1.0; LOG_SUPPORT];
    let m = log_kernel_mean(LOG_SUPPORT, LOG_SIGMA);
    let a = conv_sep(data, dims, &gdd, &g, &g);
    let b = conv_sep(data, dims, &g, &gdd, &g);
    let c = conv_sep(data, dims, &g, &g, &gdd);
    let boxed = conv_sep(data, dims, &ones, &ones, &ones);
    (0..data.len()).map(|i| a[i] + b[i] + c[i] - m * boxed[i]).collect()
}

/// Mean local SSIM over mask voxels; Gaussian window 11³ σ = 1.5
/// (normalized to unit mass), K1 = 0.01, K2 = 0.03, dynamic range `range`.
fn ssim_mean(x: &[f64], y: &[f64], dims: Dims, mask: &[bool], range: f64) -> f64 {
    let mut w = gauss_taps(SSIM_SUPPORT, SSIM_SIGMA);
    let s: f64 = w.iter().sum();
    for v in &mut w {
        *v /= s;
    }
    let smooth = |d: &[f64]| conv_sep(d, dims, &w, &w, &w);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let mx = smooth(x);
    let my = smooth(y);
    let mxx = smooth(&xx);
    let myy = smooth(&yy);
    let mxy = smooth(&xy);
    let c1 = (SSIM_K1 * range) * (SSIM_K1 * range);
    let c2 = (SSIM_K2 * range) * (SSIM_K2 * range);
    let mut acc = 0.0;
    let mut n = 0.0;
    for i in 0..x.len() {
        if !mask[i] {
            continue;
        }
        let vx = (mxx[i] - mx[i] * mx[i]).max(0.0);
        let vy = (myy[i] - my[i] * my[i]).max(0.0);
        let cxy = mxy[i] - mx[i] * my[i];
        let num = (2.0 * mx[i] * my[i] + c1) * (2.0 * cxy + c2);
        let den = (mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2);
        acc += if den == 0.0 {
            if num == 0.0 { 1.0 } else { 0.0 }
        } else {
            num / den
        };
        n += 1.0;
    }
    acc / n
}
