//! Tensor kernels. Public functions here are the optimized paths (blocked GEMM,
//! row-parallel elementwise work); [`naive`] holds straight-loop twins with
//! identical contracts for cross-checking.

pub mod gemm;
pub mod naive;

use rayon::prelude::*;

use crate::error::{config_err, Result};
use crate::tensor::Tensor;
use gemm::{gemm_acc, MatRef};

/// Default layer-norm epsilon.
pub const LN_EPS: f32 = 1e-5;

// Rows per rayon task for cheap row-wise kernels.
const ROW_CHUNK: usize = 64;

/// Output extent of a strided convolution along one axis.
pub fn conv_out_extent(size: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = size + 2 * padding;
    if stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

pub(crate) fn check_conv(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Result<(usize, usize, usize, usize, usize, usize, usize, usize, usize)> {
    let (b, h, w, cin) = input.dims4()?;
    let (cout, kh, kw, wcin) = weight
        .dims4()
        .map_err(|_| config_err!("conv2d weight must be [outC, kH, kW, inC], got {:?}", weight.shape()))?;
    if wcin != cin {
        return Err(config_err!("conv2d: weight expects {wcin} input channels, input has {cin}"));
    }
    if let Some(bias) = bias {
        if bias.shape() != [cout] {
            return Err(config_err!("conv2d: bias shape {:?}, expected [{cout}]", bias.shape()));
        }
    }
    let ho = conv_out_extent(h, kh, stride, padding)
        .ok_or_else(|| config_err!("conv2d: kernel {kh} stride {stride} does not fit height {h}"))?;
    let wo = conv_out_extent(w, kw, stride, padding)
        .ok_or_else(|| config_err!("conv2d: kernel {kw} stride {stride} does not fit width {w}"))?;
    Ok((b, h, w, cin, cout, kh, kw, ho, wo))
}

/// 2-D convolution, NHWC input, `[outC, kH, kW, inC]` weights, lowered to im2col + GEMM.
pub fn conv2d(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (b, h, w, cin, cout, kh, kw, ho, wo) = check_conv(input, weight, bias, stride, padding)?;
    let patch = kh * kw * cin;
    let rows = b * ho * wo;
    let x = input.data();

    let pointwise = kh == 1 && kw == 1 && stride == 1 && padding == 0;
    let cols_buf;
    let cols: &[f32] = if pointwise {
        x
    } else {
        let mut buf = vec![0.0f32; rows * patch];
        buf.par_chunks_mut(patch).enumerate().for_each(|(r, dst)| {
            let n = r / (ho * wo);
            let oy = (r / wo) % ho;
            let ox = r % wo;
            for ky in 0..kh {
                let iy = (oy * stride + ky) as isize - padding as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..kw {
                    let ix = (ox * stride + kx) as isize - padding as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let src = ((n * h + iy as usize) * w + ix as usize) * cin;
                    let off = (ky * kw + kx) * cin;
                    dst[off..off + cin].copy_from_slice(&x[src..src + cin]);
                }
            }
        });
        cols_buf = buf;
        &cols_buf
    };

    let out = linear_raw(cols, rows, patch, weight.data(), cout, bias.map(|t| t.data()));
    Tensor::new(&[b, ho, wo, cout], out)?.finite("conv2d")
}

fn linear_raw(x: &[f32], rows: usize, k: usize, w: &[f32], n: usize, bias: Option<&[f32]>) -> Vec<f32> {
    let mut out = vec![0.0f32; rows * n];
    if let Some(bias) = bias {
        out.par_chunks_mut(n * ROW_CHUNK).for_each(|chunk| {
            for row in chunk.chunks_exact_mut(n) {
                row.copy_from_slice(bias);
            }
        });
    }
    gemm_acc(rows, n, k, MatRef::row_major(x, k), MatRef::transposed(w, k), &mut out);
    out
}

/// Affine map over the last axis: `y = x W^T + b` with `W` shaped `[out, in]`.
pub fn linear(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let k = input.channels();
    let (n, wk) = match weight.shape() {
        &[n, wk] => (n, wk),
        s => return Err(config_err!("linear weight must be [out, in], got {s:?}")),
    };
    if wk != k {
        return Err(config_err!("linear: weight expects {wk} inputs, tensor has {k}"));
    }
    if let Some(bias) = bias {
        if bias.shape() != [n] {
            return Err(config_err!("linear: bias shape {:?}, expected [{n}]", bias.shape()));
        }
    }
    let rows = input.len() / k;
    let out = linear_raw(input.data(), rows, k, weight.data(), n, bias.map(|t| t.data()));
    let mut shape = input.shape().to_vec();
    *shape.last_mut().unwrap() = n;
    Tensor::new(&shape, out)?.finite("linear")
}

pub(crate) fn broadcast_batch(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(config_err!("matmul: batch extents {a:?} and {b:?} do not broadcast")),
        };
    }
    Ok(out)
}

pub(crate) fn batch_offset(index: usize, out_batch: &[usize], batch: &[usize]) -> usize {
    // Maps a flat index over `out_batch` to a flat index over the (broadcast) `batch`.
    let mut rem = index;
    let mut offset = 0;
    let mut stride = 1;
    for (i, &ext) in out_batch.iter().enumerate().rev() {
        let coord = rem % ext;
        rem /= ext;
        let j = i as isize - (out_batch.len() - batch.len()) as isize;
        if j >= 0 {
            let e = batch[j as usize];
            if e != 1 {
                offset += coord * stride;
            }
            stride *= e;
        }
    }
    offset
}

pub(crate) fn check_matmul(a: &Tensor, b: &Tensor) -> Result<(usize, usize, usize, Vec<usize>)> {
    if a.rank() < 2 || b.rank() < 2 {
        return Err(config_err!("matmul needs rank >= 2 operands"));
    }
    let (m, k) = (a.shape()[a.rank() - 2], a.shape()[a.rank() - 1]);
    let (kb, n) = (b.shape()[b.rank() - 2], b.shape()[b.rank() - 1]);
    if k != kb {
        return Err(config_err!("matmul: inner extents {k} and {kb} differ"));
    }
    let batch = broadcast_batch(&a.shape()[..a.rank() - 2], &b.shape()[..b.rank() - 2])?;
    Ok((m, k, n, batch))
}

/// Batched matrix product over the last two axes with broadcasting of leading axes.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k, n, batch) = check_matmul(a, b)?;
    let nb: usize = batch.iter().product();
    let mut out = vec![0.0f32; nb * m * n];
    let a_batch = &a.shape()[..a.rank() - 2];
    let b_batch = &b.shape()[..b.rank() - 2];
    for (i, c) in out.chunks_exact_mut(m * n).enumerate() {
        let ao = batch_offset(i, &batch, a_batch) * m * k;
        let bo = batch_offset(i, &batch, b_batch) * k * n;
        gemm_acc(
            m,
            n,
            k,
            MatRef::row_major(&a.data()[ao..ao + m * k], k),
            MatRef::row_major(&b.data()[bo..bo + k * n], n),
            c,
        );
    }
    let mut shape = batch;
    shape.extend([m, n]);
    Tensor::new(&shape, out)?.finite("matmul")
}

/// Normalizes each position over the channel axis, then applies `gamma`/`beta`.
pub fn layer_norm(input: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f32) -> Result<Tensor> {
    let c = input.channels();
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(config_err!(
            "layer_norm: gamma {:?} / beta {:?} do not match {c} channels",
            gamma.shape(),
            beta.shape()
        ));
    }
    let mut out = input.data().to_vec();
    let (g, bt) = (gamma.data(), beta.data());
    out.par_chunks_mut(c * ROW_CHUNK).for_each(|chunk| {
        for row in chunk.chunks_exact_mut(c) {
            normalize_row(row, g, bt, eps);
        }
    });
    Tensor::new(input.shape(), out)?.finite("layer_norm")
}

#[inline]
pub(crate) fn normalize_row(row: &mut [f32], gamma: &[f32], beta: &[f32], eps: f32) {
    let n = row.len() as f32;
    let mean = row.iter().sum::<f32>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n;
    let inv = 1.0 / (var + eps).sqrt();
    for ((v, g), b) in row.iter_mut().zip(gamma).zip(beta) {
        *v = (*v - mean) * inv * g + b;
    }
}

#[inline]
pub fn gelu_scalar(x: f32) -> f32 {
    0.5 * x * (1.0 + libm::erff(x * std::f32::consts::FRAC_1_SQRT_2))
}

/// Exact (erf-based) GELU.
pub fn gelu(input: &Tensor) -> Result<Tensor> {
    Tensor::new(input.shape(), par_map(input.data(), gelu_scalar))?.finite("gelu")
}

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| v.max(0.0))
}

#[inline]
pub fn sigmoid_scalar(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

pub fn sigmoid(input: &Tensor) -> Tensor {
    Tensor::new(input.shape(), par_map(input.data(), sigmoid_scalar)).expect("same shape")
}

fn par_map(data: &[f32], f: impl Fn(f32) -> f32 + Sync) -> Vec<f32> {
    let mut out = data.to_vec();
    out.par_chunks_mut(4096).for_each(|c| {
        for v in c {
            *v = f(*v);
        }
    });
    out
}

/// Numerically stable softmax over the last axis.
pub fn softmax(input: &Tensor) -> Result<Tensor> {
    input.ensure_finite("softmax input")?;
    let c = input.channels();
    let mut out = input.data().to_vec();
    out.par_chunks_mut(c * ROW_CHUNK).for_each(|chunk| {
        for row in chunk.chunks_exact_mut(c) {
            softmax_row(row);
        }
    });
    Tensor::new(input.shape(), out)?.finite("softmax")
}

#[inline]
pub(crate) fn softmax_row(row: &mut [f32]) {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = 1.0 / sum;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

/// Source sample for one output coordinate: `(lo, hi, frac)`.
#[inline]
pub(crate) fn resize_coord(dst: usize, in_size: usize, out_size: usize, align_corners: bool) -> (usize, usize, f32) {
    if in_size == out_size {
        return (dst, dst, 0.0);
    }
    let src = if align_corners {
        if out_size == 1 {
            0.0
        } else {
            dst as f32 * (in_size - 1) as f32 / (out_size - 1) as f32
        }
    } else {
        let scale = in_size as f32 / out_size as f32;
        ((dst as f32 + 0.5) * scale - 0.5).max(0.0)
    };
    let lo = (src.floor() as usize).min(in_size - 1);
    let hi = (lo + 1).min(in_size - 1);
    (lo, hi, src - lo as f32)
}

/// Bilinear resize of a `[B, H, W, C]` tensor.
pub fn bilinear_resize(input: &Tensor, out_h: usize, out_w: usize, align_corners: bool) -> Result<Tensor> {
    let (b, h, w, c) = input.dims4()?;
    if out_h == 0 || out_w == 0 {
        return Err(config_err!("bilinear_resize: output extents must be >= 1"));
    }
    if out_h == h && out_w == w {
        return Ok(input.clone());
    }
    let ys: Vec<_> = (0..out_h).map(|y| resize_coord(y, h, out_h, align_corners)).collect();
    let xs: Vec<_> = (0..out_w).map(|x| resize_coord(x, w, out_w, align_corners)).collect();
    let x = input.data();
    let mut out = vec![0.0f32; b * out_h * out_w * c];
    out.par_chunks_mut(out_w * c).enumerate().for_each(|(row, dst)| {
        let n = row / out_h;
        let (y0, y1, ly) = ys[row % out_h];
        let base = n * h * w * c;
        for (ox, &(x0, x1, lx)) in xs.iter().enumerate() {
            let p00 = &x[base + (y0 * w + x0) * c..][..c];
            let p01 = &x[base + (y0 * w + x1) * c..][..c];
            let p10 = &x[base + (y1 * w + x0) * c..][..c];
            let p11 = &x[base + (y1 * w + x1) * c..][..c];
            let d = &mut dst[ox * c..(ox + 1) * c];
            for ch in 0..c {
                let top = p00[ch] + (p01[ch] - p00[ch]) * lx;
                let bot = p10[ch] + (p11[ch] - p10[ch]) * lx;
                d[ch] = top + (bot - top) * ly;
            }
        }
    });
    Tensor::new(&[b, out_h, out_w, c], out)?.finite("bilinear_resize")
}

/// Per-channel affine transform (inference-time batch norm).
pub fn channel_affine(input: &Tensor, scale: &Tensor, shift: &Tensor) -> Result<Tensor> {
    let c = input.channels();
    if scale.shape() != [c] || shift.shape() != [c] {
        return Err(config_err!("channel_affine: parameters do not match {c} channels"));
    }
    let mut out = input.data().to_vec();
    let (s, t) = (scale.data(), shift.data());
    out.par_chunks_mut(c * ROW_CHUNK).for_each(|chunk| {
        for row in chunk.chunks_exact_mut(c) {
            for ((v, s), t) in row.iter_mut().zip(s).zip(t) {
                *v = *v * s + t;
            }
        }
    });
    Tensor::new(input.shape(), out)?.finite("channel_affine")
}
