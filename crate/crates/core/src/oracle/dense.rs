//! Loop-based double-precision encoder and attention.

use crate::encoder::{AttentionWeights, EncoderConfig, FeaturePyramid};
use crate::error::{config_err, Result};
use crate::model_io::WeightStore;
use crate::tensor::Tensor;

const EPS: f64 = 1e-5;
const MASKED: f64 = -100.0;
const NORM_GUARD: f64 = 1e-6;

/// Channels-last image in `f64`.
#[derive(Clone, Debug)]
struct Img {
    h: usize,
    w: usize,
    c: usize,
    v: Vec<f64>,
}

impl Img {
    fn zeros(h: usize, w: usize, c: usize) -> Self {
        Self { h, w, c, v: vec![0.0; h * w * c] }
    }

    fn at(&self, y: usize, x: usize) -> &[f64] {
        &self.v[(y * self.w + x) * self.c..][..self.c]
    }

    fn at_mut(&mut self, y: usize, x: usize) -> &mut [f64] {
        let c = self.c;
        &mut self.v[(y * self.w + x) * c..][..c]
    }

    fn from_batch(t: &Tensor, b: usize) -> Self {
        let s = t.shape();
        let (h, w, c) = (s[1], s[2], s[3]);
        let v = t.data()[b * h * w * c..(b + 1) * h * w * c].iter().map(|&x| x as f64).collect();
        Self { h, w, c, v }
    }
}

fn weights(store: &WeightStore, name: &str) -> Result<Vec<f64>> {
    Ok(store.get(name)?.data().iter().map(|&v| v as f64).collect())
}

/// `out[o] = sum_i w[o][i] * x[i] + b[o]`.
fn affine(w: &[f64], b: Option<&[f64]>, x: &[f64]) -> Vec<f64> {
    let k = x.len();
    (0..w.len() / k)
        .map(|o| {
            let mut s = b.map_or(0.0, |b| b[o]);
            for i in 0..k {
                s += w[o * k + i] * x[i];
            }
            s
        })
        .collect()
}

fn layer_norm(x: &mut [f64], g: &[f64], b: &[f64]) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + EPS).sqrt();
    for i in 0..x.len() {
        x[i] = (x[i] - mean) * inv * g[i] + b[i];
    }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Softmax-weighted attention of one head for one query.
fn attend(logits: &[f64], values: &[&[f64]]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = e.iter().sum();
    let d = values[0].len();
    let mut out = vec![0.0; d];
    for (p, v) in e.iter().zip(values) {
        for k in 0..d {
            out[k] += p / z * v[k];
        }
    }
    out
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt() + NORM_GUARD;
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt() + NORM_GUARD;
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

/// Reference for cosine window attention on `[N, T, C]` window tokens, using
/// the precomputed position bias in `weights`. `mask` is `[nW, T, T]`.
pub fn naive_attention(windows: &Tensor, weights: &AttentionWeights, n_heads: usize, mask: Option<&Tensor>) -> Result<Tensor> {
    let &[n, t, c] = windows.shape() else {
        return Err(config_err!("naive_attention expects [N, T, C]"));
    };
    let d = c / n_heads;
    let wqkv: Vec<f64> = weights.qkv_weight.data().iter().map(|&v| v as f64).collect();
    let bqkv: Vec<f64> = weights.qkv_bias.data().iter().map(|&v| v as f64).collect();
    let wp: Vec<f64> = weights.proj_weight.data().iter().map(|&v| v as f64).collect();
    let bp: Vec<f64> = weights.proj_bias.data().iter().map(|&v| v as f64).collect();
    let bias = weights.position_bias.data();
    let mut out = Vec::with_capacity(n * t * c);
    for win in 0..n {
        let qkv: Vec<Vec<f64>> = (0..t)
            .map(|i| {
                let x: Vec<f64> = windows.data()[(win * t + i) * c..][..c].iter().map(|&v| v as f64).collect();
                affine(&wqkv, Some(&bqkv), &x)
            })
            .collect();
        for i in 0..t {
            let mut heads = vec![0.0; c];
            for h in 0..n_heads {
                let r = h * d..(h + 1) * d;
                let scale = (weights.logit_scale.data()[h] as f64).min(100f64.ln()).exp();
                let logits: Vec<f64> = (0..t)
                    .map(|j| {
                        let mut l = scale * cosine(&qkv[i][r.clone()], &qkv[j][c + r.start..c + r.end])
                            + bias[(h * t + i) * t + j] as f64;
                        if let Some(m) = mask {
                            let nw = m.shape()[0];
                            l += m.data()[((win % nw) * t + i) * t + j] as f64;
                        }
                        l
                    })
                    .collect();
                let values: Vec<&[f64]> = (0..t).map(|j| &qkv[j][2 * c + r.start..2 * c + r.end]).collect();
                heads[r.clone()].copy_from_slice(&attend(&logits, &values));
            }
            out.extend(affine(&wp, Some(&bp), &heads).into_iter().map(|v| v as f32));
        }
    }
    Tensor::new(&[n, t, c], out)
}

/// Continuous position bias `[heads][dy + m - 1][dx + m - 1]`.
fn position_bias(store: &WeightStore, pre: &str, m: usize, heads: usize) -> Result<Vec<f64>> {
    let w1 = weights(store, &format!("{pre}.cpb.fc1.weight"))?;
    let b1 = weights(store, &format!("{pre}.cpb.fc1.bias"))?;
    let w2 = weights(store, &format!("{pre}.cpb.fc2.weight"))?;
    let span = 2 * m - 1;
    let coord = |d: isize| {
        let v = d as f64 / (m - 1) as f64 * 8.0;
        v.signum() * (v.abs() + 1.0).log2() / 3.0
    };
    let mut out = vec![0.0; heads * span * span];
    for a in 0..span {
        for b in 0..span {
            let input = [coord(a as isize - (m as isize - 1)), coord(b as isize - (m as isize - 1))];
            let hidden: Vec<f64> = affine(&w1, Some(&b1), &input).into_iter().map(|v| v.max(0.0)).collect();
            let o = affine(&w2, None, &hidden);
            for h in 0..heads {
                out[(h * span + a) * span + b] = 16.0 / (1.0 + (-o[h]).exp());
            }
        }
    }
    Ok(out)
}

/// Window attention over a whole feature map, returning the pre-norm
/// attention output. Tokens interact when they share a window of the
/// shifted grid, sit on the same side of each wrap seam, and are either both
/// real or both padding.
fn attention_map(x: &Img, store: &WeightStore, pre: &str, heads: usize, m: usize, shifted: bool) -> Result<Img> {
    let (h, w, c) = (x.h, x.w, x.c);
    let (hp, wp) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
    let s = if shifted { m / 2 } else { 0 };
    let d = c / heads;
    let wqkv = weights(store, &format!("{pre}.qkv.weight"))?;
    let bqkv = weights(store, &format!("{pre}.qkv.bias"))?;
    let wp_ = weights(store, &format!("{pre}.proj.weight"))?;
    let bp = weights(store, &format!("{pre}.proj.bias"))?;
    let tau = weights(store, &format!("{pre}.logit_scale"))?;
    let bias = position_bias(store, pre, m, heads)?;
    let span = 2 * m - 1;

    // Token data on the padded grid.
    let mut qkv = vec![Vec::new(); hp * wp];
    for y in 0..hp {
        for xx in 0..wp {
            let input = if y < h && xx < w { x.at(y, xx).to_vec() } else { vec![0.0; c] };
            qkv[y * wp + xx] = affine(&wqkv, Some(&bqkv), &input);
        }
    }
    // Position of a padded-grid pixel in the shifted frame.
    let frame = |y: usize, xx: usize| ((y + hp - s) % hp, (xx + wp - s) % wp);
    let group = |y: usize, xx: usize| {
        let (fy, fx) = frame(y, xx);
        (fy / m, fx / m, s > 0 && y < s, s > 0 && xx < s, y >= h || xx >= w)
    };
    let same_window = |a: (usize, usize), b: (usize, usize)| {
        let (fa, fb) = (frame(a.0, a.1), frame(b.0, b.1));
        fa.0 / m == fb.0 / m && fa.1 / m == fb.1 / m
    };

    let mut out = Img::zeros(h, w, c);
    for y in 0..h {
        for xx in 0..w {
            let gi = group(y, xx);
            let (fy, fx) = frame(y, xx);
            let members: Vec<(usize, usize)> = (0..hp)
                .flat_map(|py| (0..wp).map(move |px| (py, px)))
                .filter(|&p| same_window((y, xx), p))
                .collect();
            let mut heads_out = vec![0.0; c];
            for hd in 0..heads {
                let r = hd * d..(hd + 1) * d;
                let scale = tau[hd].min(100f64.ln()).exp();
                let qi = &qkv[y * wp + xx][r.clone()];
                let logits: Vec<f64> = members
                    .iter()
                    .map(|&(py, px)| {
                        let (gy, gx) = frame(py, px);
                        let (dy, dx) = (fy % m + m - 1 - gy % m, fx % m + m - 1 - gx % m);
                        let kj = &qkv[py * wp + px][c + r.start..c + r.end];
                        let mut l = scale * cosine(qi, kj) + bias[(hd * span + dy) * span + dx];
                        if group(py, px) != gi {
                            l += MASKED;
                        }
                        l
                    })
                    .collect();
                let values: Vec<&[f64]> = members
                    .iter()
                    .map(|&(py, px)| &qkv[py * wp + px][2 * c + r.start..2 * c + r.end])
                    .collect();
                heads_out[r.clone()].copy_from_slice(&attend(&logits, &values));
            }
            out.at_mut(y, xx).copy_from_slice(&affine(&wp_, Some(&bp), &heads_out));
        }
    }
    Ok(out)
}

fn block(x: &Img, store: &WeightStore, pre: &str, heads: usize, m: usize, shifted: bool) -> Result<Img> {
    let a = attention_map(x, store, &format!("{pre}.attn"), heads, m, shifted)?;
    let (g1, b1) = (weights(store, &format!("{pre}.norm1.weight"))?, weights(store, &format!("{pre}.norm1.bias"))?);
    let (g2, b2) = (weights(store, &format!("{pre}.norm2.weight"))?, weights(store, &format!("{pre}.norm2.bias"))?);
    let (w1, c1) = (weights(store, &format!("{pre}.mlp.fc1.weight"))?, weights(store, &format!("{pre}.mlp.fc1.bias"))?);
    let (w2, c2) = (weights(store, &format!("{pre}.mlp.fc2.weight"))?, weights(store, &format!("{pre}.mlp.fc2.bias"))?);
    let mut out = x.clone();
    for y in 0..x.h {
        for xx in 0..x.w {
            let mut r = a.at(y, xx).to_vec();
            layer_norm(&mut r, &g1, &b1);
            let mid: Vec<f64> = x.at(y, xx).iter().zip(&r).map(|(p, q)| p + q).collect();
            let hidden: Vec<f64> = affine(&w1, Some(&c1), &mid).into_iter().map(gelu).collect();
            let mut f = affine(&w2, Some(&c2), &hidden);
            layer_norm(&mut f, &g2, &b2);
            for (o, (p, q)) in out.at_mut(y, xx).iter_mut().zip(mid.iter().zip(&f)) {
                *o = p + q;
            }
        }
    }
    Ok(out)
}

fn merge(x: &Img, store: &WeightStore, pre: &str) -> Result<Img> {
    let wr = weights(store, &format!("{pre}.reduction.weight"))?;
    let (g, b) = (weights(store, &format!("{pre}.norm.weight"))?, weights(store, &format!("{pre}.norm.bias"))?);
    let (ho, wo) = (x.h.div_ceil(2), x.w.div_ceil(2));
    let mut out = Img::zeros(ho, wo, 2 * x.c);
    for y in 0..ho {
        for xx in 0..wo {
            let mut cat = Vec::with_capacity(4 * x.c);
            for (dy, dx) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                let (sy, sx) = (2 * y + dy, 2 * xx + dx);
                if sy < x.h && sx < x.w {
                    cat.extend_from_slice(x.at(sy, sx));
                } else {
                    cat.extend(std::iter::repeat_n(0.0, x.c));
                }
            }
            let mut r = affine(&wr, None, &cat);
            layer_norm(&mut r, &g, &b);
            out.at_mut(y, xx).copy_from_slice(&r);
        }
    }
    Ok(out)
}

/// Strided patch convolution of the channels `inputs` (stacked) with `[out, p, p, in]` weights.
fn patch_conv(inputs: &[&Img], wt: &[f64], bias: &[f64], p: usize) -> Img {
    let (h, w) = (inputs[0].h.div_ceil(p), inputs[0].w.div_ceil(p));
    let cin: usize = inputs.iter().map(|i| i.c).sum();
    let cout = bias.len();
    let mut out = Img::zeros(h, w, cout);
    for y in 0..h {
        for xx in 0..w {
            for o in 0..cout {
                let mut s = bias[o];
                for ky in 0..p {
                    for kx in 0..p {
                        let (sy, sx) = (y * p + ky, xx * p + kx);
                        let mut ci = 0;
                        for img in inputs {
                            for ch in 0..img.c {
                                if sy < img.h && sx < img.w {
                                    s += wt[((o * p + ky) * p + kx) * cin + ci] * img.at(sy, sx)[ch];
                                }
                                ci += 1;
                            }
                        }
                    }
                }
                out.at_mut(y, xx)[o] = s;
            }
        }
    }
    out
}

fn embed(rgb: &Img, depth: Option<&Img>, cfg: &EncoderConfig, store: &WeightStore) -> Result<Img> {
    let p = cfg.patch_size;
    let pre = "encoder.patch_embed";
    let (mut x, groups) = if cfg.variant.is_multi() {
        let depth = depth.ok_or_else(|| config_err!("variant needs depth"))?;
        let mut wr = weights(store, &format!("{pre}.rgb.weight"))?;
        let mut br = weights(store, &format!("{pre}.rgb.bias"))?;
        if cfg.rgb_widen_channels > 0 {
            wr.extend(weights(store, &format!("{pre}.rgb_wide.weight"))?);
            br.extend(weights(store, &format!("{pre}.rgb_wide.bias"))?);
        }
        let r = patch_conv(&[rgb], &wr, &br, p);
        let d = patch_conv(
            &[depth],
            &weights(store, &format!("{pre}.depth.weight"))?,
            &weights(store, &format!("{pre}.depth.bias"))?,
            p,
        );
        let mut x = Img::zeros(r.h, r.w, r.c + d.c);
        for y in 0..r.h {
            for xx in 0..r.w {
                let dst = x.at_mut(y, xx);
                dst[..r.c].copy_from_slice(r.at(y, xx));
                dst[r.c..].copy_from_slice(d.at(y, xx));
            }
        }
        (x, vec![0, r.c, r.c + d.c])
    } else {
        let wt = weights(store, &format!("{pre}.proj.weight"))?;
        let bt = weights(store, &format!("{pre}.proj.bias"))?;
        let x = match depth {
            Some(d) if cfg.variant.uses_depth() => patch_conv(&[rgb, d], &wt, &bt, p),
            _ => patch_conv(&[rgb], &wt, &bt, p),
        };
        let c = x.c;
        (x, vec![0, c])
    };
    let g = weights(store, &format!("{pre}.norm.weight"))?;
    let b = weights(store, &format!("{pre}.norm.bias"))?;
    for y in 0..x.h {
        for xx in 0..x.w {
            let px = x.at_mut(y, xx);
            for k in groups.windows(2) {
                layer_norm(&mut px[k[0]..k[1]], &g[k[0]..k[1]], &b[k[0]..k[1]]);
            }
        }
    }
    Ok(x)
}

/// Straight-line encoder: no window partitioning, no parallelism, `f64`
/// throughout. Returns the four pre-merge stage outputs.
pub fn naive_encoder(rgb: &Tensor, depth: Option<&Tensor>, cfg: &EncoderConfig, store: &WeightStore) -> Result<FeaturePyramid> {
    let b = rgb.shape()[0];
    let mut per_image = Vec::with_capacity(b);
    for n in 0..b {
        let r = Img::from_batch(rgb, n);
        let d = depth.map(|d| Img::from_batch(d, n));
        let mut x = embed(&r, d.as_ref(), cfg, store)?;
        let mut stages = Vec::with_capacity(4);
        for s in 0..4 {
            for k in 0..cfg.depths[s] {
                x = block(&x, store, &format!("encoder.stages.{s}.blocks.{k}"), cfg.stage_heads(s), cfg.window_size, k % 2 == 1)?;
            }
            stages.push(x.clone());
            if s < 3 {
                x = merge(&x, store, &format!("encoder.merges.{s}"))?;
            }
        }
        per_image.push(stages);
    }
    let stages = (0..4)
        .map(|s| {
            let first = &per_image[0][s];
            let data = per_image.iter().flat_map(|st| st[s].v.iter().map(|&v| v as f32)).collect();
            Tensor::new(&[b, first.h, first.w, first.c], data)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FeaturePyramid { stages })
}
