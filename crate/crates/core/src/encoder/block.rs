use std::sync::Arc;

use super::attention::{cosine_window_attention, AttentionWeights};
use super::window::{attention_mask, crop, pad_to_window, region_labels, roll, window_partition, window_reverse};
use crate::error::Result;
use crate::kernels::{gelu, layer_norm, linear, LN_EPS};
use crate::model_io::Scope;
use crate::tensor::Tensor;

/// One SwinV2 block: window attention and MLP, each followed by layer norm
/// inside its residual branch (`x + LN(f(x))`).
#[derive(Clone, Debug)]
pub struct SwinBlock {
    pub attn: AttentionWeights,
    pub norm1: (Arc<Tensor>, Arc<Tensor>),
    pub fc1: (Arc<Tensor>, Arc<Tensor>),
    pub fc2: (Arc<Tensor>, Arc<Tensor>),
    pub norm2: (Arc<Tensor>, Arc<Tensor>),
    pub heads: usize,
    pub window: usize,
}

impl SwinBlock {
    pub fn load(scope: &Scope<'_>, channels: usize, heads: usize, window: usize, mlp_ratio: usize, cpb_hidden: usize) -> Result<Self> {
        let (c, hidden) = (channels, channels * mlp_ratio);
        let pair = |name: &str, w: &[usize], b: &[usize]| -> Result<(Arc<Tensor>, Arc<Tensor>)> {
            let s = scope.sub(name);
            Ok((s.get_shaped("weight", w)?, s.get_shaped("bias", b)?))
        };
        Ok(Self {
            attn: AttentionWeights::load(&scope.sub("attn"), c, heads, window, cpb_hidden)?,
            norm1: pair("norm1", &[c], &[c])?,
            fc1: pair("mlp.fc1", &[hidden, c], &[hidden])?,
            fc2: pair("mlp.fc2", &[c, hidden], &[c])?,
            norm2: pair("norm2", &[c], &[c])?,
            heads,
            window,
        })
    }

    /// Output of the (shifted) window attention module, before its norm and residual.
    pub fn attention_output(&self, x: &Tensor, shifted: bool) -> Result<Tensor> {
        let (b, h, w, c) = x.dims4()?;
        let m = self.window;
        let shift = if shifted { m / 2 } else { 0 };
        let (padded, spec) = pad_to_window(x, m)?;
        let (hp, wp) = (padded.shape()[1], padded.shape()[2]);
        let rolled = roll(&padded, shift, shift)?;
        let mask = attention_mask(&region_labels(hp, wp, h, w, m, shift), hp, wp, m);
        let t = m * m;
        let windows = window_partition(&rolled, m)?.reshape(&[b * (hp / m) * (wp / m), t, c])?;
        let attended = cosine_window_attention(&windows, &self.attn, self.heads, mask.as_ref())?;
        let merged = window_reverse(&attended, m, hp, wp)?;
        let unrolled = roll(&merged, hp - shift, wp - shift)?;
        crop(&unrolled, spec)
    }

    pub fn mlp(&self, x: &Tensor) -> Result<Tensor> {
        let hidden = gelu(&linear(x, &self.fc1.0, Some(&self.fc1.1))?)?;
        linear(&hidden, &self.fc2.0, Some(&self.fc2.1))
    }

    pub fn forward(&self, x: &Tensor, shifted: bool) -> Result<Tensor> {
        let a = self.attention_output(x, shifted)?;
        let x = x.add(&layer_norm(&a, &self.norm1.0, &self.norm1.1, LN_EPS)?)?;
        let m = self.mlp(&x)?;
        x.add(&layer_norm(&m, &self.norm2.0, &self.norm2.1, LN_EPS)?)
    }
}

/// Runs one block; `shifted` selects SW-MSA (cyclic shift by half a window).
pub fn swinv2_block(x: &Tensor, block: &SwinBlock, shifted: bool) -> Result<Tensor> {
    block.forward(x, shifted)
}
