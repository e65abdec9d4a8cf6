//! Forward and backward kernels for the network's layers.
//!
//! All tensors are NCHW. Accumulation order inside every output element is
//! fixed, and parallel work is split over independent output planes, so
//! results are bit-identical for any worker count.

use crate::error::{invalid, shape_err, Result};
use crate::image::Tensor;
use crate::par;
use crate::prng::Prng;

/// Train mode uses batch statistics and active dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Infer,
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.99;

// ---------------------------------------------------------------------------
// convolution

/// Unfolds one sample `[C, H, W]` into `[C * kh * kw, H * W]` rows ordered
/// by `(c, u, v)`, zero outside the image.
fn im2col(x: &[f64], c: usize, h: usize, w: usize, kh: usize) -> Vec<f64> {
    let pad = (kh / 2) as isize;
    let plane = h * w;
    let mut cols = vec![0.0; c * kh * kh * plane];
    for ci in 0..c {
        let xp = &x[ci * plane..(ci + 1) * plane];
        for u in 0..kh {
            for v in 0..kh {
                let row = &mut cols[((ci * kh + u) * kh + v) * plane..][..plane];
                let (du, dv) = (u as isize - pad, v as isize - pad);
                let j_lo = (-dv).max(0) as usize;
                let j_hi = (w as isize - dv).min(w as isize).max(0) as usize;
                for i in 0..h {
                    let si = i as isize + du;
                    if si < 0 || si >= h as isize || j_lo >= j_hi {
                        continue;
                    }
                    let src = si as usize * w;
                    row[i * w + j_lo..i * w + j_hi]
                        .copy_from_slice(&xp[src + (j_lo as isize + dv) as usize..src + (j_hi as isize + dv) as usize]);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: folds column gradients back onto the image.
fn col2im(cols: &[f64], c: usize, h: usize, w: usize, kh: usize) -> Vec<f64> {
    let pad = (kh / 2) as isize;
    let plane = h * w;
    let mut x = vec![0.0; c * plane];
    for ci in 0..c {
        let xp = &mut x[ci * plane..(ci + 1) * plane];
        for u in 0..kh {
            for v in 0..kh {
                let row = &cols[((ci * kh + u) * kh + v) * plane..][..plane];
                let (du, dv) = (u as isize - pad, v as isize - pad);
                let j_lo = (-dv).max(0) as usize;
                let j_hi = (w as isize - dv).min(w as isize).max(0) as usize;
                for i in 0..h {
                    let si = i as isize + du;
                    if si < 0 || si >= h as isize || j_lo >= j_hi {
                        continue;
                    }
                    let dst = si as usize * w;
                    let target = &mut xp[dst + (j_lo as isize + dv) as usize..dst + (j_hi as isize + dv) as usize];
                    for (a, b) in target.iter_mut().zip(&row[i * w + j_lo..i * w + j_hi]) {
                        *a += b;
                    }
                }
            }
        }
    }
    x
}

/// Row-major `c[m, n] = beta * c + a · b` where `a` is `[m, k]` (or `[k, m]`
/// when `a_t`) and `b` is `[k, n]` (or `[n, k]` when `b_t`).
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, beta: f64, c: &mut [f64]) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices cover every index the strides address, as asserted above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Stride-1 convolution with zero "same" padding (`pad = k / 2`).
/// `x: [N, C, H, W]`, `k: [O, C, kh, kw]` with odd `kh == kw`, `b: [O]`.
pub fn conv2d(x: &Tensor, k: &Tensor, b: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = x.dims4()?;
    let [o, kc, kh, kw] = k.dims4()?;
    if kc != c || kh != kw || kh % 2 == 0 || b.len() != o {
        return Err(shape_err!("conv2d: input {:?}, kernel {:?}, bias {:?}", x.shape(), k.shape(), b.shape()));
    }
    let plane = h * w;
    let depth = c * kh * kw;
    let mut out = vec![0.0; n * o * plane];
    par::for_each_chunk_mut(&mut out, o * plane, |s, y| {
        for (oc, row) in y.chunks_mut(plane).enumerate() {
            row.fill(b.data()[oc]);
        }
        let xs = x.sample(s);
        if kh == 1 {
            gemm(o, depth, plane, k.data(), false, xs, false, 1.0, y);
        } else {
            let cols = im2col(xs, c, h, w, kh);
            gemm(o, depth, plane, k.data(), false, &cols, false, 1.0, y);
        }
    });
    Tensor::from_vec(vec![n, o, h, w], out)
}

pub struct ConvGrads {
    pub dx: Tensor,
    pub dk: Tensor,
    pub db: Tensor,
}

pub fn conv2d_back(x: &Tensor, k: &Tensor, dy: &Tensor) -> Result<ConvGrads> {
    let [n, c, h, w] = x.dims4()?;
    let [o, _, kh, kw] = k.dims4()?;
    if dy.shape() != [n, o, h, w] {
        return Err(shape_err!("conv2d_back: dy {:?} vs expected {:?}", dy.shape(), [n, o, h, w]));
    }
    let plane = h * w;
    let depth = c * kh * kw;
    let per_sample = par::map_range(n, |s| {
        let gs = dy.sample(s);
        let owned;
        let cols: &[f64] = if kh == 1 {
            x.sample(s)
        } else {
            owned = im2col(x.sample(s), c, h, w, kh);
            &owned
        };
        let mut dk = vec![0.0; o * depth];
        gemm(o, plane, depth, gs, false, cols, true, 0.0, &mut dk);
        let mut dcols = vec![0.0; depth * plane];
        gemm(depth, o, plane, k.data(), true, gs, false, 0.0, &mut dcols);
        let dx = if kh == 1 { dcols } else { col2im(&dcols, c, h, w, kh) };
        (dx, dk)
    });
    let mut dx = Vec::with_capacity(n * c * plane);
    let mut dk = vec![0.0; o * depth];
    for (sdx, sdk) in per_sample {
        dx.extend_from_slice(&sdx);
        for (a, b) in dk.iter_mut().zip(&sdk) {
            *a += b;
        }
    }
    let db = channel_sums(dy)?;
    Ok(ConvGrads {
        dx: Tensor::from_vec(vec![n, c, h, w], dx)?,
        dk: Tensor::from_vec(vec![o, c, kh, kw], dk)?,
        db,
    })
}

/// Per-channel sums over batch and space, in sample order.
fn channel_sums(t: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = t.dims4()?;
    let plane = h * w;
    let sums = par::map_range(c, |ci| {
        (0..n)
            .map(|s| t.data()[(s * c + ci) * plane..(s * c + ci + 1) * plane].iter().sum::<f64>())
            .sum::<f64>()
    });
    Tensor::from_vec(vec![c], sums)
}

// ---------------------------------------------------------------------------
// transposed convolution, kernel 2, stride 2

/// `x: [N, C, H, W]`, `k: [C, O, 2, 2]`, `b: [O]` -> `[N, O, 2H, 2W]`.
pub fn transposed_conv2(x: &Tensor, k: &Tensor, b: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = x.dims4()?;
    let [kc, o, kh, kw] = k.dims4()?;
    if kc != c || kh != 2 || kw != 2 || b.len() != o {
        return Err(shape_err!(
            "transposed_conv2: input {:?}, kernel {:?}, bias {:?}",
            x.shape(),
            k.shape(),
            b.shape()
        ));
    }
    let (h2, w2) = (2 * h, 2 * w);
    let (xd, kd, bd) = (x.data(), k.data(), b.data());
    let mut out = vec![0.0; n * o * h2 * w2];
    par::for_each_chunk_mut(&mut out, h2 * w2, |idx, y| {
        let (s, oc) = (idx / o, idx % o);
        y.fill(bd[oc]);
        for ci in 0..c {
            let xp = &xd[(s * c + ci) * h * w..(s * c + ci + 1) * h * w];
            let kb = (ci * o + oc) * 4;
            let kq = [kd[kb], kd[kb + 1], kd[kb + 2], kd[kb + 3]];
            for i in 0..h {
                for u in 0..2 {
                    let yr = &mut y[(2 * i + u) * w2..(2 * i + u + 1) * w2];
                    for j in 0..w {
                        let v = xp[i * w + j];
                        yr[2 * j] += kq[2 * u] * v;
                        yr[2 * j + 1] += kq[2 * u + 1] * v;
                    }
                }
            }
        }
    });
    Tensor::from_vec(vec![n, o, h2, w2], out)
}

pub fn transposed_conv2_back(x: &Tensor, k: &Tensor, dy: &Tensor) -> Result<ConvGrads> {
    let [n, c, h, w] = x.dims4()?;
    let [_, o, _, _] = k.dims4()?;
    let (h2, w2) = (2 * h, 2 * w);
    if dy.shape() != [n, o, h2, w2] {
        return Err(shape_err!("transposed_conv2_back: dy {:?}", dy.shape()));
    }
    let (xd, kd, gd) = (x.data(), k.data(), dy.data());
    let plane2 = h2 * w2;

    let mut dx = vec![0.0; n * c * h * w];
    par::for_each_chunk_mut(&mut dx, h * w, |idx, out| {
        let (s, ci) = (idx / c, idx % c);
        for oc in 0..o {
            let gp = &gd[(s * o + oc) * plane2..(s * o + oc + 1) * plane2];
            let kb = (ci * o + oc) * 4;
            for i in 0..h {
                for j in 0..w {
                    let mut acc = 0.0;
                    for u in 0..2 {
                        for v in 0..2 {
                            acc += gp[(2 * i + u) * w2 + 2 * j + v] * kd[kb + 2 * u + v];
                        }
                    }
                    out[i * w + j] += acc;
                }
            }
        }
    });

    let mut dk = vec![0.0; c * o * 4];
    par::for_each_chunk_mut(&mut dk, o * 4, |ci, out| {
        for s in 0..n {
            let xp = &xd[(s * c + ci) * h * w..(s * c + ci + 1) * h * w];
            for oc in 0..o {
                let gp = &gd[(s * o + oc) * plane2..(s * o + oc + 1) * plane2];
                for u in 0..2 {
                    for v in 0..2 {
                        let mut acc = 0.0;
                        for i in 0..h {
                            for j in 0..w {
                                acc += xp[i * w + j] * gp[(2 * i + u) * w2 + 2 * j + v];
                            }
                        }
                        out[oc * 4 + 2 * u + v] += acc;
                    }
                }
            }
        }
    });

    Ok(ConvGrads {
        dx: Tensor::from_vec(vec![n, c, h, w], dx)?,
        dk: Tensor::from_vec(vec![c, o, 2, 2], dk)?,
        db: channel_sums(dy)?,
    })
}

// ---------------------------------------------------------------------------
// batch normalization

#[derive(Debug, Clone)]
pub struct BnCache {
    pub mode: Mode,
    /// Normalized input.
    pub xhat: Tensor,
    /// `1 / sqrt(var + eps)` per channel (batch or running variance).
    pub inv_std: Vec<f64>,
    /// Batch statistics in train mode, for the running-average update.
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
}

pub fn batchnorm(
    x: &Tensor,
    scale: &Tensor,
    shift: &Tensor,
    running_mean: &Tensor,
    running_var: &Tensor,
    mode: Mode,
) -> Result<(Tensor, BnCache)> {
    let [n, c, h, w] = x.dims4()?;
    if [scale.len(), shift.len(), running_mean.len(), running_var.len()] != [c; 4] {
        return Err(shape_err!("batchnorm parameters do not match {c} channels"));
    }
    let m = n * h * w;
    if m == 0 {
        return Err(invalid!("batchnorm over zero-element channels"));
    }
    let plane = h * w;
    let xd = x.data();
    let stats: Vec<(f64, f64)> = match mode {
        Mode::Train => par::map_range(c, |ci| {
            let mut sum = 0.0;
            for s in 0..n {
                sum += xd[(s * c + ci) * plane..(s * c + ci + 1) * plane].iter().sum::<f64>();
            }
            let mean = sum / m as f64;
            let mut sq = 0.0;
            for s in 0..n {
                sq += xd[(s * c + ci) * plane..(s * c + ci + 1) * plane]
                    .iter()
                    .map(|v| (v - mean) * (v - mean))
                    .sum::<f64>();
            }
            (mean, sq / m as f64)
        }),
        Mode::Infer => (0..c).map(|ci| (running_mean.data()[ci], running_var.data()[ci])).collect(),
    };
    let inv_std: Vec<f64> = stats.iter().map(|&(_, var)| 1.0 / (var + BN_EPS).sqrt()).collect();
    let mut xhat = vec![0.0; xd.len()];
    let mut y = vec![0.0; xd.len()];
    for s in 0..n {
        for ci in 0..c {
            let range = (s * c + ci) * plane..(s * c + ci + 1) * plane;
            let (mean, is) = (stats[ci].0, inv_std[ci]);
            let (g, b) = (scale.data()[ci], shift.data()[ci]);
            for k in range {
                let v = (xd[k] - mean) * is;
                xhat[k] = v;
                y[k] = g * v + b;
            }
        }
    }
    let cache = BnCache {
        mode,
        xhat: Tensor::from_vec(x.shape().to_vec(), xhat)?,
        inv_std,
        batch_mean: stats.iter().map(|s| s.0).collect(),
        batch_var: stats.iter().map(|s| s.1).collect(),
    };
    Ok((Tensor::from_vec(x.shape().to_vec(), y)?, cache))
}

pub struct BnGrads {
    pub dx: Tensor,
    pub dscale: Tensor,
    pub dshift: Tensor,
}

pub fn batchnorm_back(cache: &BnCache, scale: &Tensor, dy: &Tensor) -> Result<BnGrads> {
    let [n, c, h, w] = dy.dims4()?;
    if cache.xhat.shape() != dy.shape() {
        return Err(shape_err!("batchnorm_back: dy {:?} vs cached {:?}", dy.shape(), cache.xhat.shape()));
    }
    let plane = h * w;
    let m = (n * plane) as f64;
    let (xh, gd) = (cache.xhat.data(), dy.data());
    let sums: Vec<(f64, f64)> = par::map_range(c, |ci| {
        let (mut sd, mut sdx) = (0.0, 0.0);
        for s in 0..n {
            let range = (s * c + ci) * plane..(s * c + ci + 1) * plane;
            for k in range {
                sd += gd[k];
                sdx += gd[k] * xh[k];
            }
        }
        (sd, sdx)
    });
    let mut dx = vec![0.0; gd.len()];
    for s in 0..n {
        for ci in 0..c {
            let g = scale.data()[ci] * cache.inv_std[ci];
            let (sd, sdx) = sums[ci];
            for k in (s * c + ci) * plane..(s * c + ci + 1) * plane {
                dx[k] = match cache.mode {
                    Mode::Train => g * (gd[k] - sd / m - xh[k] * sdx / m),
                    Mode::Infer => g * gd[k],
                };
            }
        }
    }
    Ok(BnGrads {
        dx: Tensor::from_vec(dy.shape().to_vec(), dx)?,
        dscale: Tensor::from_vec(vec![c], sums.iter().map(|s| s.1).collect())?,
        dshift: Tensor::from_vec(vec![c], sums.iter().map(|s| s.0).collect())?,
    })
}

// ---------------------------------------------------------------------------
// activations

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Gradient through ReLU given its input; zero at the kink.
pub fn relu_back(x: &Tensor, dy: &Tensor) -> Tensor {
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&a, &g)| if a > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::from_vec(x.shape().to_vec(), data).expect("same shape")
}

pub fn sigmoid_scalar(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

/// Gradient through the sigmoid given its output.
pub fn sigmoid_back(y: &Tensor, dy: &Tensor) -> Tensor {
    let data = y.data().iter().zip(dy.data()).map(|(&s, &g)| g * s * (1.0 - s)).collect();
    Tensor::from_vec(y.shape().to_vec(), data).expect("same shape")
}

// ---------------------------------------------------------------------------
// pooling

/// 2x2 max pooling, stride 2. Returns the output and, per output element,
/// the flat index of the winning input element (first maximum in row-major
/// window order).
pub fn maxpool2(x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let [n, c, h, w] = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(shape_err!("maxpool2 needs even spatial dims, got {h}x{w}"));
    }
    let (ho, wo) = (h / 2, w / 2);
    let xd = x.data();
    let mut out = vec![0.0; n * c * ho * wo];
    let mut arg = vec![0usize; out.len()];
    for p in 0..n * c {
        let base = p * h * w;
        for i in 0..ho {
            for j in 0..wo {
                let cand = [
                    base + 2 * i * w + 2 * j,
                    base + 2 * i * w + 2 * j + 1,
                    base + (2 * i + 1) * w + 2 * j,
                    base + (2 * i + 1) * w + 2 * j + 1,
                ];
                let mut best = cand[0];
                for &k in &cand[1..] {
                    if xd[k] > xd[best] {
                        best = k;
                    }
                }
                let o = (p * ho + i) * wo + j;
                out[o] = xd[best];
                arg[o] = best;
            }
        }
    }
    Ok((Tensor::from_vec(vec![n, c, ho, wo], out)?, arg))
}

pub fn maxpool2_back(input_shape: &[usize], argmax: &[usize], dy: &Tensor) -> Result<Tensor> {
    if argmax.len() != dy.len() {
        return Err(shape_err!("maxpool2_back: {} indices for {} gradients", argmax.len(), dy.len()));
    }
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&k, &g) in argmax.iter().zip(dy.data()) {
        d[k] += g;
    }
    Ok(dx)
}

// ---------------------------------------------------------------------------
// fixed interpolation upsampling

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InterpMode {
    Nearest,
    Bilinear,
    Bicubic,
}

const CUBIC_A: f64 = -0.5;

fn cubic_weight(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        ((CUBIC_A + 2.0) * x - (CUBIC_A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((CUBIC_A * x - 5.0 * CUBIC_A) * x + 8.0 * CUBIC_A) * x - 4.0 * CUBIC_A
    } else {
        0.0
    }
}

/// Taps `(source index, weight)` for each of the `2n` outputs along one axis,
/// with half-pixel centers (`src = (o + 0.5) / 2 - 0.5`).
pub fn upsample_taps(n: usize, mode: InterpMode) -> Vec<Vec<(usize, f64)>> {
    let last = n as isize - 1;
    let clampi = |i: isize| i.clamp(0, last) as usize;
    (0..2 * n)
        .map(|o| {
            let src = (o as f64 + 0.5) / 2.0 - 0.5;
            match mode {
                InterpMode::Nearest => vec![((o / 2).min(n - 1), 1.0)],
                InterpMode::Bilinear => {
                    let s = src.max(0.0);
                    let i0 = s.floor() as isize;
                    let t = s - i0 as f64;
                    vec![(clampi(i0), 1.0 - t), (clampi(i0 + 1), t)]
                }
                InterpMode::Bicubic => {
                    let i0 = src.floor() as isize;
                    let t = src - i0 as f64;
                    vec![
                        (clampi(i0 - 1), cubic_weight(t + 1.0)),
                        (clampi(i0), cubic_weight(t)),
                        (clampi(i0 + 1), cubic_weight(1.0 - t)),
                        (clampi(i0 + 2), cubic_weight(2.0 - t)),
                    ]
                }
            }
        })
        .collect()
}

/// Separable x2 upsampling: along width, then along height.
pub fn upsample_interp(x: &Tensor, mode: InterpMode) -> Result<Tensor> {
    let [n, c, h, w] = x.dims4()?;
    let (tw, th) = (upsample_taps(w, mode), upsample_taps(h, mode));
    let (h2, w2) = (2 * h, 2 * w);
    let xd = x.data();
    let mut out = vec![0.0; n * c * h2 * w2];
    par::for_each_chunk_mut(&mut out, h2 * w2, |p, y| {
        let xp = &xd[p * h * w..(p + 1) * h * w];
        let mut tmp = vec![0.0; h * w2];
        for i in 0..h {
            for (oj, taps) in tw.iter().enumerate() {
                tmp[i * w2 + oj] = taps.iter().map(|&(j, wt)| wt * xp[i * w + j]).sum();
            }
        }
        for (oi, taps) in th.iter().enumerate() {
            let yr = &mut y[oi * w2..(oi + 1) * w2];
            for &(i, wt) in taps {
                for (a, b) in yr.iter_mut().zip(&tmp[i * w2..(i + 1) * w2]) {
                    *a += wt * b;
                }
            }
        }
    });
    Tensor::from_vec(vec![n, c, h2, w2], out)
}

/// Adjoint of [`upsample_interp`].
pub fn upsample_interp_back(input_shape: &[usize], mode: InterpMode, dy: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = match input_shape {
        &[n, c, h, w] => [n, c, h, w],
        _ => return Err(shape_err!("upsample_interp_back: bad input shape {input_shape:?}")),
    };
    let (h2, w2) = (2 * h, 2 * w);
    if dy.shape() != [n, c, h2, w2] {
        return Err(shape_err!("upsample_interp_back: dy {:?}", dy.shape()));
    }
    let (tw, th) = (upsample_taps(w, mode), upsample_taps(h, mode));
    let gd = dy.data();
    let mut dx = vec![0.0; n * c * h * w];
    par::for_each_chunk_mut(&mut dx, h * w, |p, out| {
        let gp = &gd[p * h2 * w2..(p + 1) * h2 * w2];
        let mut tmp = vec![0.0; h * w2];
        for (oi, taps) in th.iter().enumerate() {
            for &(i, wt) in taps {
                for (a, b) in tmp[i * w2..(i + 1) * w2].iter_mut().zip(&gp[oi * w2..(oi + 1) * w2]) {
                    *a += wt * b;
                }
            }
        }
        for i in 0..h {
            for (oj, taps) in tw.iter().enumerate() {
                let g = tmp[i * w2 + oj];
                for &(j, wt) in taps {
                    out[i * w + j] += wt * g;
                }
            }
        }
    });
    Tensor::from_vec(input_shape.to_vec(), dx)
}

// ---------------------------------------------------------------------------
// dropout and concatenation

/// Inverted dropout. The returned mask holds `0` or `1 / (1 - p)` per element
/// and is all ones in infer mode.
pub fn dropout(x: &Tensor, p: f64, g: &mut Prng, mode: Mode) -> Result<(Tensor, Vec<f64>)> {
    if !(0.0..1.0).contains(&p) {
        return Err(invalid!("dropout rate {p} outside [0, 1)"));
    }
    if mode == Mode::Infer || p == 0.0 {
        return Ok((x.clone(), vec![1.0; x.len()]));
    }
    let keep = 1.0 / (1.0 - p);
    let mask: Vec<f64> = (0..x.len()).map(|_| if g.next_f64() < p { 0.0 } else { keep }).collect();
    let y = x.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
    Ok((Tensor::from_vec(x.shape().to_vec(), y)?, mask))
}

pub fn dropout_back(mask: &[f64], dy: &Tensor) -> Tensor {
    let data = dy.data().iter().zip(mask).map(|(g, m)| g * m).collect();
    Tensor::from_vec(dy.shape().to_vec(), data).expect("same shape")
}

/// Channel concatenation `[a; b]`.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let [n, ca, h, w] = a.dims4()?;
    let [nb, cb, hb, wb] = b.dims4()?;
    if (n, h, w) != (nb, hb, wb) {
        return Err(shape_err!("concat: {:?} vs {:?}", a.shape(), b.shape()));
    }
    let plane = h * w;
    let mut out = Vec::with_capacity(a.len() + b.len());
    for s in 0..n {
        out.extend_from_slice(&a.data()[s * ca * plane..(s + 1) * ca * plane]);
        out.extend_from_slice(&b.data()[s * cb * plane..(s + 1) * cb * plane]);
    }
    Tensor::from_vec(vec![n, ca + cb, h, w], out)
}

/// Splits a concatenated gradient back into its `[a; b]` parts.
pub fn split_channels(t: &Tensor, ca: usize) -> Result<(Tensor, Tensor)> {
    let [n, c, h, w] = t.dims4()?;
    if ca > c {
        return Err(shape_err!("split at {ca} exceeds {c} channels"));
    }
    let cb = c - ca;
    let plane = h * w;
    let mut a = Vec::with_capacity(n * ca * plane);
    let mut b = Vec::with_capacity(n * cb * plane);
    for s in 0..n {
        let sample = &t.data()[s * c * plane..(s + 1) * c * plane];
        a.extend_from_slice(&sample[..ca * plane]);
        b.extend_from_slice(&sample[ca * plane..]);
    }
    Ok((Tensor::from_vec(vec![n, ca, h, w], a)?, Tensor::from_vec(vec![n, cb, h, w], b)?))
}
