//! Context module, dense decoders and task heads.

mod context;
mod decoders;
mod dense;

pub use context::{adaptive_avg_pool, bin_range, context_module, scene_head, ContextModule};
pub use decoders::{emsanet_decoder, segformer_decoder, Decoder, EmsanetDecoder, SegformerDecoder};
pub use dense::{dense_heads, DenseHeads, OFFSET_STRIDE};

use std::sync::Arc;

use crate::error::Result;
use crate::kernels::linear;
use crate::model_io::Scope;
use crate::tensor::Tensor;

/// Raw network outputs at input resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskOutputs {
    /// `[B, H, W, num_classes]`.
    pub semantic_logits: Tensor,
    /// `[B, H, W, 1]`, values in `[0, 1]`.
    pub center_heatmap: Tensor,
    /// `[B, H, W, 2]` as `(dy, dx)` in pixels, pointing from each pixel to its center.
    pub offsets: Tensor,
    /// `[B, H, W, 2]` as `(sin, cos)`, not necessarily unit norm.
    pub orientation: Tensor,
    /// `[B, num_scene_classes]`.
    pub scene_logits: Tensor,
}

/// 1x1 convolution / fully connected layer.
#[derive(Clone, Debug)]
pub struct Pointwise {
    pub weight: Arc<Tensor>,
    pub bias: Arc<Tensor>,
}

impl Pointwise {
    pub fn load(scope: &Scope<'_>, out: usize, inp: usize) -> Result<Self> {
        Ok(Self {
            weight: scope.get_shaped("weight", &[out, inp])?,
            bias: scope.get_shaped("bias", &[out])?,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        linear(x, &self.weight, Some(&self.bias))
    }
}
