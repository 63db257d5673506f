//! Straight-loop, single-threaded kernels with the same contracts as the
//! optimized paths in the parent module.

use super::{batch_offset, check_conv, check_matmul, gelu_scalar, resize_coord};
use crate::error::{config_err, Result};
use crate::tensor::Tensor;

pub fn conv2d(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (b, h, w, cin, cout, kh, kw, ho, wo) = check_conv(input, weight, bias, stride, padding)?;
    let (x, wt) = (input.data(), weight.data());
    let mut out = vec![0.0f32; b * ho * wo * cout];
    for n in 0..b {
        for oy in 0..ho {
            for ox in 0..wo {
                for o in 0..cout {
                    let mut acc = bias.map_or(0.0, |t| t.data()[o]);
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * stride + ky) as isize - padding as isize;
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            for ci in 0..cin {
                                acc += x[((n * h + iy as usize) * w + ix as usize) * cin + ci]
                                    * wt[((o * kh + ky) * kw + kx) * cin + ci];
                            }
                        }
                    }
                    out[((n * ho + oy) * wo + ox) * cout + o] = acc;
                }
            }
        }
    }
    Tensor::new(&[b, ho, wo, cout], out)?.finite("conv2d")
}

pub fn linear(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let k = input.channels();
    let &[n, wk] = weight.shape() else {
        return Err(config_err!("linear weight must be [out, in]"));
    };
    if wk != k {
        return Err(config_err!("linear: weight expects {wk} inputs, tensor has {k}"));
    }
    let rows = input.len() / k;
    let mut out = vec![0.0f32; rows * n];
    for r in 0..rows {
        for j in 0..n {
            let mut acc = bias.map_or(0.0, |t| t.data()[j]);
            for p in 0..k {
                acc += input.data()[r * k + p] * weight.data()[j * k + p];
            }
            out[r * n + j] = acc;
        }
    }
    let mut shape = input.shape().to_vec();
    *shape.last_mut().unwrap() = n;
    Tensor::new(&shape, out)?.finite("linear")
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k, n, batch) = check_matmul(a, b)?;
    let nb: usize = batch.iter().product();
    let a_batch = &a.shape()[..a.rank() - 2];
    let b_batch = &b.shape()[..b.rank() - 2];
    let mut out = vec![0.0f32; nb * m * n];
    for bi in 0..nb {
        let ao = batch_offset(bi, &batch, a_batch) * m * k;
        let bo = batch_offset(bi, &batch, b_batch) * k * n;
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0f32;
                for p in 0..k {
                    acc += a.data()[ao + i * k + p] * b.data()[bo + p * n + j];
                }
                out[(bi * m + i) * n + j] = acc;
            }
        }
    }
    let mut shape = batch;
    shape.extend([m, n]);
    Tensor::new(&shape, out)?.finite("matmul")
}

pub fn layer_norm(input: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f32) -> Result<Tensor> {
    let c = input.channels();
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(config_err!("layer_norm: parameters do not match {c} channels"));
    }
    let mut out = vec![0.0f32; input.len()];
    for (src, dst) in input.data().chunks_exact(c).zip(out.chunks_exact_mut(c)) {
        let mean = src.iter().sum::<f32>() / c as f32;
        let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / c as f32;
        let std = (var + eps).sqrt();
        for i in 0..c {
            dst[i] = (src[i] - mean) / std * gamma.data()[i] + beta.data()[i];
        }
    }
    Tensor::new(input.shape(), out)?.finite("layer_norm")
}

pub fn gelu(input: &Tensor) -> Result<Tensor> {
    input.map(gelu_scalar).finite("gelu")
}

pub fn softmax(input: &Tensor) -> Result<Tensor> {
    input.ensure_finite("softmax input")?;
    let c = input.channels();
    let mut out = vec![0.0f32; input.len()];
    for (src, dst) in input.data().chunks_exact(c).zip(out.chunks_exact_mut(c)) {
        let max = src.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let sum: f32 = src.iter().map(|v| (v - max).exp()).sum();
        for i in 0..c {
            dst[i] = (src[i] - max).exp() / sum;
        }
    }
    Tensor::new(input.shape(), out)?.finite("softmax")
}

pub fn bilinear_resize(input: &Tensor, out_h: usize, out_w: usize, align_corners: bool) -> Result<Tensor> {
    let (b, h, w, c) = input.dims4()?;
    if out_h == 0 || out_w == 0 {
        return Err(config_err!("bilinear_resize: output extents must be >= 1"));
    }
    let x = input.data();
    let at = |n: usize, y: usize, xx: usize, ch: usize| x[((n * h + y) * w + xx) * c + ch];
    let mut out = vec![0.0f32; b * out_h * out_w * c];
    for n in 0..b {
        for oy in 0..out_h {
            let (y0, y1, ly) = resize_coord(oy, h, out_h, align_corners);
            for ox in 0..out_w {
                let (x0, x1, lx) = resize_coord(ox, w, out_w, align_corners);
                for ch in 0..c {
                    let top = at(n, y0, x0, ch) + (at(n, y0, x1, ch) - at(n, y0, x0, ch)) * lx;
                    let bot = at(n, y1, x0, ch) + (at(n, y1, x1, ch) - at(n, y1, x0, ch)) * lx;
                    out[((n * out_h + oy) * out_w + ox) * c + ch] = top + (bot - top) * ly;
                }
            }
        }
    }
    Tensor::new(&[b, out_h, out_w, c], out)?.finite("bilinear_resize")
}
