use std::sync::Arc;

use super::Pointwise;
use crate::encoder::FeaturePyramid;
use crate::error::{config_err, Result};
use crate::kernels::{bilinear_resize, channel_affine, conv2d, relu};
use crate::model_io::{DecoderKind, ModelConfig, Scope};
use crate::tensor::Tensor;

/// One upsampling module: 3x3 conv, affine norm, ReLU, resize, plus a skip.
#[derive(Clone, Debug)]
struct Level {
    conv: Arc<Tensor>,
    norm: (Arc<Tensor>, Arc<Tensor>),
    skip: Pointwise,
    skip_stage: usize,
}

/// Convolutional decoder starting from the context features.
#[derive(Clone, Debug)]
pub struct EmsanetDecoder {
    levels: Vec<Level>,
}

impl EmsanetDecoder {
    pub fn load(scope: &Scope<'_>, config: &ModelConfig) -> Result<Self> {
        let mut inp = config.context.out_channels;
        let mut levels = Vec::with_capacity(3);
        for (i, &ch) in config.decoders.emsanet_channels.iter().enumerate() {
            let s = scope.sub(format!("levels.{i}"));
            let skip_stage = 2 - i;
            let norm = s.sub("norm");
            levels.push(Level {
                conv: s.get_shaped("conv.weight", &[ch, 3, 3, inp])?,
                norm: (norm.get_shaped("weight", &[ch])?, norm.get_shaped("bias", &[ch])?),
                skip: Pointwise::load(&s.sub("skip"), ch, config.encoder.stage_channels(skip_stage))?,
                skip_stage,
            });
            inp = ch;
        }
        Ok(Self { levels })
    }

    pub fn forward(&self, pyramid: &FeaturePyramid, context: &Tensor) -> Result<Tensor> {
        if pyramid.stages.len() != 4 {
            return Err(config_err!("decoder needs four pyramid stages, got {}", pyramid.stages.len()));
        }
        let mut x = context.clone();
        for level in &self.levels {
            let skip = pyramid.stage(level.skip_stage);
            let (_, sh, sw, _) = skip.dims4()?;
            let y = conv2d(&x, &level.conv, None, 1, 1)?;
            let y = relu(&channel_affine(&y, &level.norm.0, &level.norm.1)?);
            let y = bilinear_resize(&y, sh, sw, false)?;
            x = y.add(&level.skip.forward(skip)?)?;
        }
        Ok(x)
    }
}

/// Pointwise decoder over all four stages.
#[derive(Clone, Debug)]
pub struct SegformerDecoder {
    /// Indexed by stage.
    pub embed: Vec<Pointwise>,
    pub fuse: Pointwise,
    pub out: Pointwise,
}

impl SegformerDecoder {
    pub fn load(scope: &Scope<'_>, config: &ModelConfig) -> Result<Self> {
        let dec = &config.decoders;
        let embed = (0..4)
            .map(|s| {
                Pointwise::load(
                    &scope.sub(format!("embed.{s}")),
                    dec.segformer_embed[3 - s],
                    config.encoder.stage_channels(s),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let total = dec.segformer_embed.iter().sum();
        Ok(Self {
            embed,
            fuse: Pointwise::load(&scope.sub("fuse"), dec.segformer_hidden, total)?,
            out: Pointwise::load(&scope.sub("out"), dec.segformer_out, dec.segformer_hidden)?,
        })
    }

    /// Stage embeddings at 1/4 resolution, concatenated deepest first.
    pub fn embed(&self, pyramid: &FeaturePyramid) -> Result<Tensor> {
        let (_, h, w, _) = pyramid.stage(0).dims4()?;
        let parts = (0..4)
            .rev()
            .map(|s| bilinear_resize(&self.embed[s].forward(pyramid.stage(s))?, h, w, false))
            .collect::<Result<Vec<_>>>()?;
        Tensor::concat_channels(&parts.iter().collect::<Vec<_>>())
    }

    pub fn forward(&self, pyramid: &FeaturePyramid) -> Result<Tensor> {
        if pyramid.stages.len() != 4 {
            return Err(config_err!("decoder needs four pyramid stages, got {}", pyramid.stages.len()));
        }
        let hidden = relu(&self.fuse.forward(&self.embed(pyramid)?)?);
        self.out.forward(&hidden)
    }
}

#[derive(Clone, Debug)]
pub enum Decoder {
    Emsanet(EmsanetDecoder),
    Segformer(SegformerDecoder),
}

impl Decoder {
    pub fn load(scope: &Scope<'_>, kind: DecoderKind, config: &ModelConfig) -> Result<Self> {
        Ok(match kind {
            DecoderKind::Emsanet => Decoder::Emsanet(EmsanetDecoder::load(scope, config)?),
            DecoderKind::Segformer => Decoder::Segformer(SegformerDecoder::load(scope, config)?),
        })
    }

    /// Features at 1/4 resolution.
    pub fn forward(&self, pyramid: &FeaturePyramid, context: &Tensor) -> Result<Tensor> {
        match self {
            Decoder::Emsanet(d) => d.forward(pyramid, context),
            Decoder::Segformer(d) => d.forward(pyramid),
        }
    }
}

pub fn emsanet_decoder(pyramid: &FeaturePyramid, context: &Tensor, decoder: &EmsanetDecoder) -> Result<Tensor> {
    decoder.forward(pyramid, context)
}

pub fn segformer_decoder(pyramid: &FeaturePyramid, decoder: &SegformerDecoder) -> Result<Tensor> {
    decoder.forward(pyramid)
}
