//! Raw compute kernels behind the tape ops.
//!
//! One cross-correlation trio serves every convolution direction:
//! - `xcorr3d`            — conv forward; also transposed-conv backward-to-input
//! - `xcorr3d_bwd_input`  — conv backward-to-input; also transposed-conv forward
//! - `xcorr3d_bwd_weight` — weight gradient for both (with arguments swapped)
//!
//! Weight layout is (out_ch, in_ch, kx, ky, kz) stored in a `Tensor` with
//! b = out_ch, c = in_ch. Transposed convolution passes its (in_ch, out_ch,
//! k³) weight through the same buffers unchanged — the index arithmetic
//! `o = i·s + k − p` is shared, so no kernel flip or copy is ever needed.
//!
//! Parallel loops split over disjoint output regions with a fixed interior
//! summation order, so results are bitwise independent of thread count.

use rayon::prelude::*;

use crate::scalar::Real;

use super::tensor::{Shape5, Tensor};

pub fn conv_out_size(n: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    (n + 2 * pad).checked_sub(k).map(|d| d / stride + 1)
}

pub fn tconv_out_size(n: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    ((n - 1) * stride + k).checked_sub(2 * pad)
}

/// y[b,co,o] = bias[co] + Σ_{ci,k} w[co,ci,k] · x[b,ci,o·s+k−p]
pub fn xcorr3d<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Tensor<T> {
    let xs = x.shape();
    let ws = w.shape();
    assert_eq!(xs.c, ws.c, "input channels");
    let (k, s, p) = ([ws.nx, ws.ny, ws.nz], stride, pad);
    let on = [
        conv_out_size(xs.nx, k[0], s, p).expect("kernel larger than padded input"),
        conv_out_size(xs.ny, k[1], s, p).expect("kernel larger than padded input"),
        conv_out_size(xs.nz, k[2], s, p).expect("kernel larger than padded input"),
    ];
    let oshape = Shape5::new(xs.b, ws.b, on[0], on[1], on[2]);
    let mut out = Tensor::zeros(oshape);
    let osp = oshape.spatial_len();
    let xsp = xs.spatial_len();
    let xd = x.data();
    let wd = w.data();
    let wsp = ws.c * k[0] * k[1] * k[2];

    out.data_mut().par_chunks_mut(osp).enumerate().for_each(|(bc, odata)| {
        let (b, co) = (bc / ws.b, bc % ws.b);
        if let Some(bt) = bias {
            let bv = bt.data()[co];
            for v in odata.iter_mut() {
                *v = bv;
            }
        }
        for ci in 0..xs.c {
            let xbase = (b * xs.c + ci) * xsp;
            let wbase = co * wsp + ci * k[0] * k[1] * k[2];
            for oz in 0..on[2] {
                for kz in 0..k[2] {
                    let iz = (oz * s + kz) as isize - p as isize;
                    if iz < 0 || iz as usize >= xs.nz {
                        continue;
                    }
                    for oy in 0..on[1] {
                        for ky in 0..k[1] {
                            let iy = (oy * s + ky) as isize - p as isize;
                            if iy < 0 || iy as usize >= xs.ny {
                                continue;
                            }
                            let xrow = xbase + xs.nx * (iy as usize + xs.ny * iz as usize);
                            let orow = oshape.nx * (oy + on[1] * oz);
                            for kx in 0..k[0] {
                                let wv = wd[wbase + kx + k[0] * (ky + k[1] * kz)];
                                if wv == T::zero() {
                                    continue;
                                }
                                // valid ox: 0 <= ox·s + kx − p < nx
                                let lo = p.saturating_sub(kx).div_ceil(s);
                                let hi = if xs.nx + p > kx {
                                    (((xs.nx + p - kx - 1) / s) + 1).min(on[0])
                                } else {
                                    0
                                };
                                for ox in lo..hi {
                                    let ix = ox * s + kx - p;
                                    odata[orow + ox] += wv * xd[xrow + ix];
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    out
}

/// gx[b,ci,i] = Σ_{co,k} w[co,ci,k] · gy[b,co,o] over o·s+k−p == i.
/// Doubles as transposed-conv forward (gy := tconv input, `in_spatial` :=
/// tconv output size); `bias`, when given, is per *output* channel ci.
pub fn xcorr3d_bwd_input<T: Real>(
    gy: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
    in_spatial: [usize; 3],
) -> Tensor<T> {
    let gs = gy.shape();
    let ws = w.shape();
    assert_eq!(gs.c, ws.b, "grad-output channels must match weight out-channels");
    let (k, s, p) = ([ws.nx, ws.ny, ws.nz], stride, pad);
    let xshape = Shape5::new(gs.b, ws.c, in_spatial[0], in_spatial[1], in_spatial[2]);
    let mut gx = Tensor::zeros(xshape);
    let xsp = xshape.spatial_len();
    let gsp = gs.spatial_len();
    let gd = gy.data();
    let wd = w.data();
    let wsp = ws.c * k[0] * k[1] * k[2];

    gx.data_mut().par_chunks_mut(xsp).enumerate().for_each(|(bc, xdata)| {
        let (b, ci) = (bc / ws.c, bc % ws.c);
        if let Some(bt) = bias {
            let bv = bt.data()[ci];
            for v in xdata.iter_mut() {
                *v = bv;
            }
        }
        for co in 0..gs.c {
            let gbase = (b * gs.c + co) * gsp;
            let wbase = co * wsp + ci * k[0] * k[1] * k[2];
            for kz in 0..k[2] {
                for oz in 0..gs.nz {
                    let iz = (oz * s + kz) as isize - p as isize;
                    if iz < 0 || iz as usize >= in_spatial[2] {
                        continue;
                    }
                    for ky in 0..k[1] {
                        for oy in 0..gs.ny {
                            let iy = (oy * s + ky) as isize - p as isize;
                            if iy < 0 || iy as usize >= in_spatial[1] {
                                continue;
                            }
                            let grow = gbase + gs.nx * (oy + gs.ny * oz);
                            let xrow = xshape.nx * (iy as usize + in_spatial[1] * iz as usize);
                            for kx in 0..k[0] {
                                let wv = wd[wbase + kx + k[0] * (ky + k[1] * kz)];
                                if wv == T::zero() {
                                    continue;
                                }
                                let lo = p.saturating_sub(kx).div_ceil(s);
                                let hi = if in_spatial[0] + p > kx {
                                    (((in_spatial[0] + p - kx - 1) / s) + 1).min(gs.nx)
                                } else {
                                    0
                                };
                                for ox in lo..hi {
                                    let ix = ox * s + kx - p;
                                    xdata[xrow + ix] += wv * gd[grow + ox];
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    gx
}

/// gw[co,ci,k] = Σ_{b,o} gy[b,co,o] · x[b,ci,o·s+k−p].
/// For transposed conv call with (x := tconv grad-output, gy := tconv input)
/// to land in the (in_ch, out_ch, k³) layout directly.
pub fn xcorr3d_bwd_weight<T: Real>(
    x: &Tensor<T>,
    gy: &Tensor<T>,
    stride: usize,
    pad: usize,
    kernel: [usize; 3],
) -> Tensor<T> {
    let xs = x.shape();
    let gs = gy.shape();
    assert_eq!(xs.b, gs.b, "batch");
    let (k, s, p) = (kernel, stride, pad);
    let wshape = Shape5::new(gs.c, xs.c, k[0], k[1], k[2]);
    let mut gw = Tensor::zeros(wshape);
    let wsp = xs.c * k[0] * k[1] * k[2];
    let xd = x.data();
    let gd = gy.data();
    let xsp = xs.spatial_len();
    let gsp = gs.spatial_len();

    gw.data_mut().par_chunks_mut(wsp).enumerate().for_each(|(co, wdata)| {
        for b in 0..xs.b {
            let gbase = (b * gs.c + co) * gsp;
            for ci in 0..xs.c {
                let xbase = (b * xs.c + ci) * xsp;
                for kz in 0..k[2] {
                    for ky in 0..k[1] {
                        for kx in 0..k[0] {
                            let mut acc = T::zero();
                            for oz in 0..gs.nz {
                                let iz = (oz * s + kz) as isize - p as isize;
                                if iz < 0 || iz as usize >= xs.nz {
                                    continue;
                                }
                                for oy in 0..gs.ny {
                                    let iy = (oy * s + ky) as isize - p as isize;
                                    if iy < 0 || iy as usize >= xs.ny {
                                        continue;
                                    }
                                    let grow = gbase + gs.nx * (oy + gs.ny * oz);
                                    let xrow = xbase + xs.nx * (iy as usize + xs.ny * iz as usize);
                                    let lo = p.saturating_sub(kx).div_ceil(s);
                                    let hi = if xs.nx + p > kx {
                                        (((xs.nx + p - kx - 1) / s) + 1).min(gs.nx)
                                    } else {
                                        0
                                    };
                                    for ox in lo..hi {
                                        acc += gd[grow + ox] * xd[xrow + ox * s + kx - p];
                                    }
                                }
                            }
                            wdata[kx + k[0] * (ky + k[1] * (kz + k[2] * ci))] += acc;
                        }
                    }
                }
            }
        }
    });
    gw
}

/// gb[c] = Σ_{b,spatial} g[b,c,...] — bias gradient for conv; for tconv the
/// channel axis is the same (grad-output channel).
pub fn channel_sums<T: Real>(g: &Tensor<T>) -> Vec<T> {
    let s = g.shape();
    let sp = s.spatial_len();
    let mut out = vec![T::zero(); s.c];
    for b in 0..s.b {
        for (c, o) in out.iter_mut().enumerate() {
            let base = (b * s.c + c) * sp;
            for v in &g.data()[base..base + sp] {
                *o += *v;
            }
        }
    }
    out
}

/// Per-channel batch mean and biased variance over (batch, spatial).
pub fn batch_stats<T: Real>(x: &Tensor<T>) -> (Vec<T>, Vec<T>) {
    let s = x.shape();
    let sp = s.spatial_len();
    let n = T::fromf((s.b * sp) as f64);
    let mut mean = vec![T::zero(); s.c];
    let mut var = vec![T::zero(); s.c];
    for c in 0..s.c {
        let mut acc = T::zero();
        for b in 0..s.b {
            let base = (b * s.c + c) * sp;
            for v in &x.data()[base..base + sp] {
                acc += *v;
            }
        }
        mean[c] = acc / n;
        let mut vacc = T::zero();
        for b in 0..s.b {
            let base = (b * s.c + c) * sp;
            for v in &x.data()[base..base + sp] {
                let d = *v - mean[c];
                vacc += d * d;
            }
        }
        var[c] = vacc / n;
    }
    (mean, var)
}

/// y = gamma·(x − mean)·invstd + beta, all per channel.
pub fn bn_apply<T: Real>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    mean: &[T],
    invstd: &[T],
) -> Tensor<T> {
    let s = x.shape();
    let sp = s.spatial_len();
    let mut out = Tensor::zeros(s);
    for b in 0..s.b {
        for c in 0..s.c {
            let base = (b * s.c + c) * sp;
            let (g, bt, m, is) = (gamma[c], beta[c], mean[c], invstd[c]);
            for i in base..base + sp {
                out.data_mut()[i] = g * (x.data()[i] - m) * is + bt;
            }
        }
    }
    out
}

pub fn avg_pool<T: Real>(x: &Tensor<T>, k: usize) -> Tensor<T> {
    let s = x.shape();
    assert!(s.nx.is_multiple_of(k) && s.ny.is_multiple_of(k) && s.nz.is_multiple_of(k), "pool size must divide extent");
    let os = Shape5::new(s.b, s.c, s.nx / k, s.ny / k, s.nz / k);
    let mut out = Tensor::zeros(os);
    let inv = T::fromf(1.0 / (k * k * k) as f64);
    for b in 0..s.b {
        for c in 0..s.c {
            for oz in 0..os.nz {
                for oy in 0..os.ny {
                    for ox in 0..os.nx {
                        let mut acc = T::zero();
                        for dz in 0..k {
                            for dy in 0..k {
                                for dx in 0..k {
                                    acc += x.at(b, c, ox * k + dx, oy * k + dy, oz * k + dz);
                                }
                            }
                        }
                        let i = os.index(b, c, ox, oy, oz);
                        out.data_mut()[i] = acc * inv;
                    }
                }
            }
        }
    }
    out
}

pub fn avg_pool_backward<T: Real>(gy: &Tensor<T>, k: usize, in_shape: Shape5) -> Tensor<T> {
    let os = gy.shape();
    let mut gx = Tensor::zeros(in_shape);
    let inv = T::fromf(1.0 / (k * k * k) as f64);
    for b in 0..os.b {
        for c in 0..os.c {
            for oz in 0..os.nz {
                for oy in 0..os.ny {
                    for ox in 0..os.nx {
                        let g = gy.at(b, c, ox, oy, oz) * inv;
                        for dz in 0..k {
                            for dy in 0..k {
                                for dx in 0..k {
                                    let i = in_shape.index(b, c, ox * k + dx, oy * k + dy, oz * k + dz);
                                    gx.data_mut()[i] += g;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    gx
}

pub fn crop_center<T: Real>(x: &Tensor<T>, margin: usize) -> Tensor<T> {
    let s = x.shape();
    assert!(
        2 * margin < s.nx && 2 * margin < s.ny && 2 * margin < s.nz,
        "crop margin {margin} consumes the whole extent {s}"
    );
    let os = Shape5::new(s.b, s.c, s.nx - 2 * margin, s.ny - 2 * margin, s.nz - 2 * margin);
    let mut out = Tensor::zeros(os);
    for b in 0..s.b {
        for c in 0..s.c {
            for z in 0..os.nz {
                for y in 0..os.ny {
                    for x_ in 0..os.nx {
                        let i = os.index(b, c, x_, y, z);
                        out.data_mut()[i] = x.at(b, c, x_ + margin, y + margin, z + margin);
                    }
                }
            }
        }
    }
    out
}

pub fn crop_center_backward<T: Real>(gy: &Tensor<T>, margin: usize, in_shape: Shape5) -> Tensor<T> {
    let os = gy.shape();
    let mut gx = Tensor::zeros(in_shape);
    for b in 0..os.b {
        for c in 0..os.c {
            for z in 0..os.nz {
                for y in 0..os.ny {
                    for x_ in 0..os.nx {
                        let i = in_shape.index(b, c, x_ + margin, y + margin, z + margin);
                        gx.data_mut()[i] = gy.at(b, c, x_, y, z);
                    }
                }
            }
        }
    }
    gx
}

/// Concatenate along the channel axis.
pub fn concat_channels<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (sa, sb) = (a.shape(), b.shape());
    assert_eq!(sa.spatial(), sb.spatial(), "concat spatial mismatch");
    assert_eq!(sa.b, sb.b, "concat batch mismatch");
    let os = Shape5::new(sa.b, sa.c + sb.c, sa.nx, sa.ny, sa.nz);
    let sp = sa.spatial_len();
    let mut out = Tensor::zeros(os);
    for bi in 0..sa.b {
        let dst = bi * os.c * sp;
        out.data_mut()[dst..dst + sa.c * sp]
            .copy_from_slice(&a.data()[bi * sa.c * sp..(bi + 1) * sa.c * sp]);
        out.data_mut()[dst + sa.c * sp..dst + os.c * sp]
            .copy_from_slice(&b.data()[bi * sb.c * sp..(bi + 1) * sb.c * sp]);
    }
    out
}

/// Split a channel-concat gradient back into the two parts.
pub fn split_channels<T: Real>(g: &Tensor<T>, ca: usize) -> (Tensor<T>, Tensor<T>) {
    let s = g.shape();
    let cb = s.c - ca;
    let sp = s.spatial_len();
    let mut ga = Tensor::zeros(Shape5::new(s.b, ca, s.nx, s.ny, s.nz));
    let mut gb = Tensor::zeros(Shape5::new(s.b, cb, s.nx, s.ny, s.nz));
    for bi in 0..s.b {
        let src = bi * s.c * sp;
        ga.data_mut()[bi * ca * sp..(bi + 1) * ca * sp]
            .copy_from_slice(&g.data()[src..src + ca * sp]);
        gb.data_mut()[bi * cb * sp..(bi + 1) * cb * sp]
            .copy_from_slice(&g.data()[src + ca * sp..src + s.c * sp]);
    }
    (ga, gb)
}

/// LeakyReLU; the zero point takes the negative slope (a.e. convention,
/// matching the derivative mask used everywhere else).
pub fn leaky_relu<T: Real>(x: &Tensor<T>, slope: T) -> Tensor<T> {
    let mut out = x.clone();
    for v in out.data_mut() {
        if *v <= T::zero() {
            *v = slope * *v;
        }
    }
    out
}

/// Derivative mask of leaky_relu as a function of the recorded input.
pub fn leaky_relu_mask<T: Real>(x: &Tensor<T>, slope: T) -> Tensor<T> {
    let mut out = x.clone();
    for v in out.data_mut() {
        *v = if *v > T::zero() { T::one() } else { slope };
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ones(shape: Shape5) -> Tensor<f64> {
        Tensor::filled(shape, 1.0)
    }

    #[test]
    fn conv_ones_counts_overlaps() {
        // 4³ ones through a 3³ ones kernel, stride 1, pad 1: the output
        // counts in-bounds taps — 27 at the center, 8 at a corner.
        let x = ones(Shape5::new(1, 1, 4, 4, 4));
        let w = ones(Shape5::new(1, 1, 3, 3, 3));
        let y = xcorr3d(&x, &w, None, 1, 1);
        assert_eq!(y.shape(), Shape5::new(1, 1, 4, 4, 4));
        assert_eq!(y.at(0, 0, 1, 1, 1), 27.0);
        assert_eq!(y.at(0, 0, 0, 0, 0), 8.0);
        assert_eq!(y.at(0, 0, 1, 0, 0), 12.0);
    }

    #[test]
    fn identity_kernel_preserves_input() {
        let mut x = Tensor::zeros(Shape5::new(2, 1, 5, 4, 3));
        for (i, v) in x.data_mut().iter_mut().enumerate() {
            *v = i as f64 * 0.37 - 10.0;
        }
        let mut w = Tensor::zeros(Shape5::new(1, 1, 3, 3, 3));
        let c = w.shape().index(0, 0, 1, 1, 1);
        w.data_mut()[c] = 1.0;
        let y = xcorr3d(&x, &w, None, 1, 1);
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn strided_conv_halves_extent() {
        let x = ones(Shape5::new(1, 1, 16, 16, 16));
        let w = ones(Shape5::new(3, 1, 4, 4, 4));
        let y = xcorr3d(&x, &w, None, 2, 1);
        assert_eq!(y.shape(), Shape5::new(1, 3, 8, 8, 8));
        // An interior output voxel sees all 64 taps.
        assert_eq!(y.at(0, 1, 3, 3, 3), 64.0);
    }

    #[test]
    fn tconv_unit_k2s2_tiles_exactly() {
        // stride 2, k=2, unit weights, 2³ ones → 4³ ones: every output
        // voxel is covered by exactly one (input, tap) pair.
        let x = ones(Shape5::new(1, 1, 2, 2, 2));
        let w = ones(Shape5::new(1, 1, 2, 2, 2)); // (ci, co, k³)
        let y = xcorr3d_bwd_input(&x, &w, None, 2, 0, [4, 4, 4]);
        assert_eq!(y.shape(), Shape5::new(1, 1, 4, 4, 4));
        assert!(y.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn adjoint_identity_conv_vs_tconv() {
        // ⟨conv(x), y⟩ == ⟨x, convT(y)⟩ with tied weights, random shapes.
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (s, p, k, n) in [(1usize, 0usize, 3usize, 7usize), (2, 1, 4, 8), (2, 0, 2, 6), (1, 1, 3, 5)] {
            let xs = Shape5::new(2, 3, n, n, n);
            let on = conv_out_size(n, k, s, p).unwrap();
            let ys = Shape5::new(2, 4, on, on, on);
            let ws = Shape5::new(4, 3, k, k, k);
            let mut fill = |shape: Shape5| {
                let mut t = Tensor::zeros(shape);
                for v in t.data_mut() {
                    *v = rng.random_range(-1.0..1.0);
                }
                t
            };
            let x = fill(xs);
            let y = fill(ys);
            let w = fill(ws);
            let cx = xcorr3d(&x, &w, None, s, p);
            let ty = xcorr3d_bwd_input(&y, &w, None, s, p, [n, n, n]);
            let lhs: f64 = cx.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.data().iter().zip(ty.data()).map(|(a, b)| a * b).sum();
            assert!(
                (lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0),
                "adjoint violated for s={s} p={p} k={k}: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn pool_crop_concat_lrelu_basics() {
        let x = ones(Shape5::new(1, 1, 2, 2, 2));
        let p = avg_pool(&x, 2);
        assert_eq!(p.shape(), Shape5::new(1, 1, 1, 1, 1));
        assert_eq!(p.item(), 1.0);

        let big = ones(Shape5::new(1, 1, 64, 64, 64));
        let c = crop_center(&big, 8);
        assert_eq!(c.shape(), Shape5::new(1, 1, 48, 48, 48));

        let a = ones(Shape5::new(2, 2, 3, 3, 3));
        let b = Tensor::filled(Shape5::new(2, 1, 3, 3, 3), 5.0);
        let cat = concat_channels(&a, &b);
        assert_eq!(cat.shape().c, 3);
        assert_eq!(cat.at(1, 2, 0, 0, 0), 5.0);
        assert_eq!(cat.at(1, 1, 2, 2, 2), 1.0);
        let (ga, gb) = split_channels(&cat, 2);
        assert_eq!(ga.data(), a.data());
        assert_eq!(gb.data(), b.data());

        let t = Tensor::from_vec(Shape5::new(1, 1, 2, 1, 1), vec![-1.0, 2.0]).unwrap();
        let r = leaky_relu(&t, 0.2);
        assert_eq!(r.data(), &[-0.2, 2.0]);
    }

    #[test]
    fn batchnorm_stats_normalize() {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut x: Tensor<f64> = Tensor::zeros(Shape5::new(3, 2, 4, 4, 4));
        for v in x.data_mut() {
            *v = rng.random_range(-2.0..5.0);
        }
        let (mean, var) = batch_stats(&x);
        let invstd: Vec<f64> = var.iter().map(|v| 1.0 / (v + 1e-5).sqrt()).collect();
        let y = bn_apply(&x, &[1.0, 1.0], &[0.0, 0.0], &mean, &invstd);
        let (m2, v2) = batch_stats(&y);
        for c in 0..2 {
            assert!(m2[c].abs() < 1e-6, "post-norm mean {}", m2[c]);
            assert!((v2[c] - 1.0).abs() < 1e-4, "post-norm var {}", v2[c]);
        }
        // gamma=2, beta=3 → mean 3, std 2.
        let y = bn_apply(&x, &[2.0, 2.0], &[3.0, 3.0], &mean, &invstd);
        let (m3, v3) = batch_stats(&y);
        for c in 0..2 {
            assert!((m3[c] - 3.0).abs() < 1e-6);
            assert!((v3[c].sqrt() - 2.0).abs() < 1e-4);
        }
    }

    #[test]
    fn results_bitwise_stable_across_thread_counts() {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut x: Tensor<f64> = Tensor::zeros(Shape5::new(2, 3, 9, 9, 9));
        for v in x.data_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let mut w = Tensor::zeros(Shape5::new(4, 3, 3, 3, 3));
        for v in w.data_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| {
                let y = xcorr3d(&x, &w, None, 1, 1);
                let gx = xcorr3d_bwd_input(&y, &w, None, 1, 1, [9, 9, 9]);
                let gw = xcorr3d_bwd_weight(&x, &y, 1, 1, [3, 3, 3]);
                (
                    y.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                    gx.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                    gw.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                )
            })
        };
        assert_eq!(run(1), run(4));
    }
}
