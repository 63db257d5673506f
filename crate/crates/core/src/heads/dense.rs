use super::Pointwise;
use crate::encoder::{crop, PadSpec};
use crate::error::{config_err, Result};
use crate::kernels::{bilinear_resize, sigmoid};
use crate::model_io::{ModelConfig, Scope};
use crate::tensor::Tensor;

/// Resolution ratio between decoder features and the input.
pub const OFFSET_STRIDE: usize = 4;

#[derive(Clone, Debug)]
pub struct DenseHeads {
    pub semantic: Pointwise,
    pub center: Pointwise,
    pub offset: Pointwise,
    pub orientation: Pointwise,
}

/// Dense outputs without the scene logits, at input resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseOutputs {
    pub semantic_logits: Tensor,
    pub center_heatmap: Tensor,
    pub offsets: Tensor,
    pub orientation: Tensor,
}

impl DenseHeads {
    pub fn load(root: &Scope<'_>, config: &ModelConfig) -> Result<Self> {
        let sem = config.decoder_out(config.semantic_decoder);
        let ins = config.decoder_out(config.instance_decoder);
        let inst = root.sub("instance_head");
        Ok(Self {
            semantic: Pointwise::load(&root.sub("semantic_head"), config.num_classes, sem)?,
            center: Pointwise::load(&inst.sub("center"), 1, ins)?,
            offset: Pointwise::load(&inst.sub("offset"), 2, ins)?,
            orientation: Pointwise::load(&inst.sub("orientation"), 2, ins)?,
        })
    }

    /// Projects 1/4-resolution features, upsamples by 4 and crops to `height x width`.
    pub fn forward(&self, sem: &Tensor, ins: &Tensor, height: usize, width: usize) -> Result<DenseOutputs> {
        let (b, h4, w4, _) = sem.dims4()?;
        let (bi, hi, wi, _) = ins.dims4()?;
        if (b, h4, w4) != (bi, hi, wi) {
            return Err(config_err!("semantic {:?} and instance {:?} features differ in size", sem.shape(), ins.shape()));
        }
        let (hf, wf) = (h4 * OFFSET_STRIDE, w4 * OFFSET_STRIDE);
        if height > hf || width > wf {
            return Err(config_err!("output {height}x{width} exceeds upsampled {hf}x{wf}"));
        }
        let spec = PadSpec { height, width };
        let up = |t: &Tensor| -> Result<Tensor> { crop(&bilinear_resize(t, hf, wf, false)?, spec) };
        let scale = OFFSET_STRIDE as f32;
        Ok(DenseOutputs {
            semantic_logits: up(&self.semantic.forward(sem)?)?,
            center_heatmap: up(&sigmoid(&self.center.forward(ins)?))?,
            offsets: up(&self.offset.forward(ins)?)?.map(|v| v * scale),
            orientation: up(&self.orientation.forward(ins)?)?,
        })
    }
}

pub fn dense_heads(sem: &Tensor, ins: &Tensor, heads: &DenseHeads, height: usize, width: usize) -> Result<DenseOutputs> {
    heads.forward(sem, ins, height, width)
}
