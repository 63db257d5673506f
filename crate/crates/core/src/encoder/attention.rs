//! Scaled cosine window attention with a continuous relative position bias.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{config_err, Result};
use crate::kernels::{linear, sigmoid_scalar, softmax_row};
use crate::model_io::Scope;
use crate::tensor::Tensor;

/// Upper bound on the learned per-head logit scale.
pub const MAX_LOGIT_SCALE: f32 = 100.0;
/// Added to query/key norms before dividing.
pub const NORM_GUARD: f32 = 1e-6;

#[derive(Clone, Debug)]
pub struct AttentionWeights {
    /// `[3C, C]`, rows ordered q, k, v.
    pub qkv_weight: Arc<Tensor>,
    pub qkv_bias: Arc<Tensor>,
    /// Per-head log scale `tau`; logits use `exp(min(tau, ln 100))`.
    pub logit_scale: Arc<Tensor>,
    pub proj_weight: Arc<Tensor>,
    pub proj_bias: Arc<Tensor>,
    /// `[heads, M*M, M*M]` bias added to every window's logits.
    pub position_bias: Tensor,
}

impl AttentionWeights {
    pub fn load(scope: &Scope<'_>, channels: usize, heads: usize, window: usize, cpb_hidden: usize) -> Result<Self> {
        let c = channels;
        let fc1_w = scope.get_shaped("cpb.fc1.weight", &[cpb_hidden, 2])?;
        let fc1_b = scope.get_shaped("cpb.fc1.bias", &[cpb_hidden])?;
        let fc2_w = scope.get_shaped("cpb.fc2.weight", &[heads, cpb_hidden])?;
        Ok(Self {
            qkv_weight: scope.get_shaped("qkv.weight", &[3 * c, c])?,
            qkv_bias: scope.get_shaped("qkv.bias", &[3 * c])?,
            logit_scale: scope.get_shaped("logit_scale", &[heads])?,
            proj_weight: scope.get_shaped("proj.weight", &[c, c])?,
            proj_bias: scope.get_shaped("proj.bias", &[c])?,
            position_bias: relative_position_bias(&fc1_w, &fc1_b, &fc2_w, window)?,
        })
    }

    pub fn heads(&self) -> usize {
        self.logit_scale.len()
    }

    /// `exp(tau)` per head, clamped to [`MAX_LOGIT_SCALE`].
    pub fn head_scales(&self) -> Vec<f32> {
        self.logit_scale
            .data()
            .iter()
            .map(|&t| t.min(MAX_LOGIT_SCALE.ln()).exp())
            .collect()
    }
}

/// Signed-log relative coordinate table `[(2M-1)^2, 2]`, rows ordered by (dy, dx).
pub fn relative_coords_table(window: usize) -> Vec<[f32; 2]> {
    let span = (window - 1) as f32;
    let log8 = 8f32.log2();
    let f = |d: isize| {
        let v = d as f32 / span * 8.0;
        v.signum() * (v.abs() + 1.0).log2() / log8
    };
    let r = window as isize - 1;
    let mut out = Vec::with_capacity((2 * window - 1).pow(2));
    for dy in -r..=r {
        for dx in -r..=r {
            out.push([f(dy), f(dx)]);
        }
    }
    out
}

/// Evaluates the position-bias MLP on the relative-offset table and expands it
/// to `[heads, M*M, M*M]` as `16 * sigmoid(mlp(offset(i, j)))`.
pub fn relative_position_bias(fc1_w: &Tensor, fc1_b: &Tensor, fc2_w: &Tensor, window: usize) -> Result<Tensor> {
    if window < 2 {
        return Err(config_err!("window must be >= 2 for the position bias"));
    }
    let table = relative_coords_table(window);
    let rows = table.len();
    let coords = Tensor::new(&[rows, 2], table.iter().flatten().copied().collect())?;
    let hidden = linear(&coords, fc1_w, Some(fc1_b))?.map(|v| v.max(0.0));
    let per_offset = linear(&hidden, fc2_w, None)?;
    let heads = fc2_w.shape()[0];
    let t = window * window;
    let span = 2 * window - 1;
    let mut bias = vec![0.0f32; heads * t * t];
    for i in 0..t {
        let (yi, xi) = (i / window, i % window);
        for j in 0..t {
            let (yj, xj) = (j / window, j % window);
            let idx = (yi + window - 1 - yj) * span + (xi + window - 1 - xj);
            for h in 0..heads {
                bias[(h * t + i) * t + j] = 16.0 * sigmoid_scalar(per_offset.data()[idx * heads + h]);
            }
        }
    }
    Tensor::new(&[heads, t, t], bias)
}

/// Full attention module on window tokens `[N, T, C]`: qkv projection, per-head
/// cosine attention, output projection. `mask` is `[nW, T, T]` and applies to
/// window `n` as `mask[n % nW]`.
pub fn cosine_window_attention(
    windows: &Tensor,
    weights: &AttentionWeights,
    n_heads: usize,
    mask: Option<&Tensor>,
) -> Result<Tensor> {
    let c = windows.channels();
    if windows.rank() != 3 {
        return Err(config_err!("attention expects [N, T, C] windows, got {:?}", windows.shape()));
    }
    if n_heads == 0 || c % n_heads != 0 {
        return Err(config_err!("{c} channels do not split into {n_heads} heads"));
    }
    if weights.heads() != n_heads {
        return Err(config_err!("weights carry {} heads, asked for {n_heads}", weights.heads()));
    }
    let qkv = linear(windows, &weights.qkv_weight, Some(&weights.qkv_bias))?;
    let heads_out = attend_qkv(&qkv, &weights.head_scales(), &weights.position_bias, n_heads, mask)?;
    linear(&heads_out, &weights.proj_weight, Some(&weights.proj_bias))
}

/// Per-head cosine attention on projected `[N, T, 3C]` tokens; returns the
/// concatenated head outputs `[N, T, C]` (before the output projection).
///
/// Head `h` reads channels `[h*d, (h+1)*d)` of each of the q, k and v thirds
/// and writes channels `[h*d, (h+1)*d)` of the output.
pub fn attend_qkv(
    qkv: &Tensor,
    scales: &[f32],
    position_bias: &Tensor,
    n_heads: usize,
    mask: Option<&Tensor>,
) -> Result<Tensor> {
    let &[n, t, c3] = qkv.shape() else {
        return Err(config_err!("attend_qkv expects [N, T, 3C], got {:?}", qkv.shape()));
    };
    if c3 % (3 * n_heads) != 0 {
        return Err(config_err!("{c3} qkv channels do not split into {n_heads} heads"));
    }
    let c = c3 / 3;
    let d = c / n_heads;
    if position_bias.shape() != [n_heads, t, t] || scales.len() != n_heads {
        return Err(config_err!("position bias {:?} does not fit {n_heads} heads of {t} tokens", position_bias.shape()));
    }
    let n_mask = match mask {
        Some(m) if m.rank() == 3 && m.shape()[1] == t && m.shape()[2] == t && n % m.shape()[0] == 0 => m.shape()[0],
        Some(m) => return Err(config_err!("mask {:?} does not fit {n} windows of {t} tokens", m.shape())),
        None => 0,
    };

    let src = qkv.data();
    let bias = position_bias.data();
    let mut out = vec![0.0f32; n * t * c];
    out.par_chunks_mut(t * c).enumerate().for_each_init(
        || Scratch::new(t, d),
        |s, (win, dst)| {
            let tokens = &src[win * t * c3..(win + 1) * t * c3];
            let win_mask = mask.map(|m| &m.data()[(win % n_mask) * t * t..][..t * t]);
            for h in 0..n_heads {
                s.load_head(tokens, c, h * d);
                let head_bias = &bias[h * t * t..(h + 1) * t * t];
                for i in 0..t {
                    let qi = &s.q[i * d..(i + 1) * d];
                    let row = &mut s.logits[..t];
                    for (j, l) in row.iter_mut().enumerate() {
                        let kj = &s.k[j * d..(j + 1) * d];
                        *l = dot(qi, kj) * scales[h] + head_bias[i * t + j];
                    }
                    if let Some(m) = win_mask {
                        for (l, mv) in row.iter_mut().zip(&m[i * t..(i + 1) * t]) {
                            *l += mv;
                        }
                    }
                    softmax_row(row);
                    let o = &mut dst[i * c + h * d..i * c + (h + 1) * d];
                    o.fill(0.0);
                    for (j, &p) in row.iter().enumerate() {
                        for (ov, vv) in o.iter_mut().zip(&s.v[j * d..(j + 1) * d]) {
                            *ov += p * vv;
                        }
                    }
                }
            }
        },
    );
    Tensor::new(&[n, t, c], out)?.finite("cosine_window_attention")
}

struct Scratch {
    q: Vec<f32>,
    k: Vec<f32>,
    v: Vec<f32>,
    logits: Vec<f32>,
}

impl Scratch {
    fn new(t: usize, d: usize) -> Self {
        Self {
            q: vec![0.0; t * d],
            k: vec![0.0; t * d],
            v: vec![0.0; t * d],
            logits: vec![0.0; t],
        }
    }

    /// Copies one head's q, k, v out of the token rows, unit-normalizing q and k.
    fn load_head(&mut self, tokens: &[f32], c: usize, off: usize) {
        let d = self.q.len() / self.logits.len();
        let c3 = 3 * c;
        for (i, tok) in tokens.chunks_exact(c3).enumerate() {
            let q = &tok[off..off + d];
            let k = &tok[c + off..c + off + d];
            let inv_q = 1.0 / (dot(q, q).sqrt() + NORM_GUARD);
            let inv_k = 1.0 / (dot(k, k).sqrt() + NORM_GUARD);
            for p in 0..d {
                self.q[i * d + p] = q[p] * inv_q;
                self.k[i * d + p] = k[p] * inv_k;
            }
            self.v[i * d..(i + 1) * d].copy_from_slice(&tok[2 * c + off..2 * c + off + d]);
        }
    }
}

#[inline]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    // Eight independent partial sums so the loop vectorizes.
    let mut acc = [0.0f32; 8];
    let chunks = a.len() / 8;
    for i in 0..chunks {
        for l in 0..8 {
            acc[l] += a[i * 8 + l] * b[i * 8 + l];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for i in chunks * 8..a.len() {
        s += a[i] * b[i];
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::rand_tensor;

    fn uniform_bias(heads: usize, t: usize) -> Tensor {
        Tensor::zeros(&[heads, t, t]).unwrap()
    }

    #[test]
    fn rows_are_convex_combinations() {
        // With all value vectors equal, every output equals that vector.
        let (n, t, c, heads) = (3, 16, 64, 2);
        let mut qkv = rand_tensor(&[n, t, 3 * c], 1, 1.0);
        for tok in qkv.data_mut().chunks_mut(3 * c) {
            for (i, v) in tok[2 * c..].iter_mut().enumerate() {
                *v = i as f32 * 0.1;
            }
        }
        let out = attend_qkv(&qkv, &[10.0, 3.0], &uniform_bias(heads, t), heads, None).unwrap();
        for tok in out.data().chunks(c) {
            for (i, v) in tok.iter().enumerate() {
                assert!((v - i as f32 * 0.1).abs() <= 1e-5);
            }
        }
    }

    #[test]
    fn head_outputs_only_read_their_value_slice() {
        let (n, t, c, heads) = (2, 64, 128, 4);
        let qkv = rand_tensor(&[n, t, 3 * c], 2, 1.0);
        let bias = rand_tensor(&[heads, t, t], 3, 2.0);
        let scales = [5.0, 7.0, 9.0, 11.0];
        let base = attend_qkv(&qkv, &scales, &bias, heads, None).unwrap();
        let mut perturbed = qkv.clone();
        for tok in perturbed.data_mut().chunks_mut(3 * c) {
            for v in &mut tok[2 * c..2 * c + 32] {
                *v += 1.5;
            }
        }
        let out = attend_qkv(&perturbed, &scales, &bias, heads, None).unwrap();
        for (a, b) in base.data().chunks(c).zip(out.data().chunks(c)) {
            assert_ne!(a[..32], b[..32]);
            assert_eq!(a[32..], b[32..]);
        }
    }

    #[test]
    fn masked_pairs_get_negligible_weight() {
        let (t, c) = (4, 32);
        let qkv = rand_tensor(&[1, t, 3 * c], 4, 1.0);
        let mut mask = vec![0.0; t * t];
        // Token 0 may only see itself.
        mask[1..t].fill(crate::encoder::window::MASK_VALUE);
        let mask = Tensor::new(&[1, t, t], mask).unwrap();
        let out = attend_qkv(&qkv, &[1.0], &uniform_bias(1, t), 1, Some(&mask)).unwrap();
        for p in 0..c {
            assert!((out.data()[p] - qkv.data()[2 * c + p]).abs() <= 1e-6);
        }
    }

    #[test]
    fn zero_query_is_guarded() {
        let (t, c) = (4, 32);
        let qkv = Tensor::zeros(&[1, t, 3 * c]).unwrap();
        let out = attend_qkv(&qkv, &[1.0], &uniform_bias(1, t), 1, None).unwrap();
        assert!(out.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn rejects_bad_head_split() {
        let qkv = Tensor::zeros(&[1, 4, 3 * 48]).unwrap();
        assert!(attend_qkv(&qkv, &[1.0; 5], &uniform_bias(5, 4), 5, None).is_err());
    }

    #[test]
    fn coords_table_is_signed_log() {
        let t = relative_coords_table(8);
        assert_eq!(t.len(), 225);
        // Centre entry is the zero offset.
        assert_eq!(t[112], [0.0, 0.0]);
        // Largest offset maps to log2(9)/log2(8).
        assert!((t[224][0] - 9f32.log2() / 3.0).abs() < 1e-6);
        assert_eq!(t[0][0], -t[224][0]);
    }
}
