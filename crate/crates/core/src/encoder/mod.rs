//! SwinV2 RGB-D backbone: patch embedding, four stages of alternating
//! window / shifted-window blocks, and patch merging between stages.

pub mod attention;
pub mod block;
pub mod config;
pub mod embed;
pub mod merge;
pub mod window;

pub use attention::{attend_qkv, cosine_window_attention, AttentionWeights};
pub use block::{swinv2_block, SwinBlock};
pub use config::{EncoderConfig, EncoderVariant};
pub use embed::PatchEmbed;
pub use merge::{gather_2x2, patch_merge, PatchMerging};
pub use window::{crop, pad_to_window, window_partition, window_reverse, PadSpec};

use crate::error::{config_err, Result};
use crate::model_io::WeightStore;
use crate::tensor::Tensor;

/// Stage outputs at 1/4, 1/8, 1/16 and 1/32 of the input resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePyramid {
    pub stages: Vec<Tensor>,
}

impl FeaturePyramid {
    pub fn stage(&self, s: usize) -> &Tensor {
        &self.stages[s]
    }

    pub fn deepest(&self) -> &Tensor {
        self.stages.last().expect("four stages")
    }
}

#[derive(Clone, Debug)]
pub struct Stage {
    pub blocks: Vec<SwinBlock>,
    /// Merging into the next stage; absent for the last stage.
    pub merge: Option<PatchMerging>,
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub embed: PatchEmbed,
    pub stages: Vec<Stage>,
}

impl Encoder {
    pub fn load(store: &WeightStore, cfg: &EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        let root = store.scope("encoder");
        let embed = PatchEmbed::load(&root.sub("patch_embed"), cfg)?;
        let mut stages = Vec::with_capacity(4);
        for s in 0..4 {
            let c = cfg.stage_channels(s);
            let blocks = (0..cfg.depths[s])
                .map(|b| {
                    SwinBlock::load(
                        &root.sub(format!("stages.{s}.blocks.{b}")),
                        c,
                        cfg.stage_heads(s),
                        cfg.window_size,
                        cfg.mlp_ratio,
                        cfg.cpb_hidden,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            let merge = if s < 3 {
                Some(PatchMerging::load(&root.sub(format!("merges.{s}")), c)?)
            } else {
                None
            };
            stages.push(Stage { blocks, merge });
        }
        Ok(Self {
            config: cfg.clone(),
            embed,
            stages,
        })
    }

    /// Checks the input contract and pads both inputs to a multiple of the patch size.
    pub fn prepare_inputs(&self, rgb: &Tensor, depth: Option<&Tensor>) -> Result<(Tensor, Option<Tensor>)> {
        let (b, h, w, c) = rgb.dims4()?;
        if c != 3 {
            return Err(config_err!("rgb input must have 3 channels, got {c}"));
        }
        if h < 32 || w < 32 {
            return Err(config_err!("input must be at least 32x32, got {h}x{w}"));
        }
        if self.config.variant.uses_depth() && depth.is_none() {
            return Err(config_err!("variant {} needs a depth input", self.config.variant));
        }
        if let Some(d) = depth {
            if d.shape() != [b, h, w, 1] {
                return Err(config_err!("depth shape {:?} does not match rgb {:?}", d.shape(), rgb.shape()));
            }
        }
        let p = self.config.patch_size;
        let (hp, wp) = (h.div_ceil(p) * p, w.div_ceil(p) * p);
        let rgb = window::pad_to(rgb, hp, wp)?;
        let depth = match depth {
            Some(d) if self.config.variant.uses_depth() => Some(window::pad_to(d, hp, wp)?),
            _ => None,
        };
        Ok((rgb, depth))
    }

    pub fn encode(&self, rgb: &Tensor, depth: Option<&Tensor>) -> Result<FeaturePyramid> {
        let (rgb, depth) = self.prepare_inputs(rgb, depth)?;
        let mut x = self.embed.forward(&rgb, depth.as_ref())?;
        let mut stages = Vec::with_capacity(4);
        for stage in &self.stages {
            for (i, block) in stage.blocks.iter().enumerate() {
                x = block.forward(&x, i % 2 == 1)?;
            }
            match &stage.merge {
                Some(m) => {
                    let merged = m.forward(&x)?;
                    stages.push(std::mem::replace(&mut x, merged));
                }
                None => stages.push(x.clone()),
            }
        }
        Ok(FeaturePyramid { stages })
    }
}

/// Builds the encoder from `store` and runs it once.
pub fn encode(rgb: &Tensor, depth: Option<&Tensor>, cfg: &EncoderConfig, store: &WeightStore) -> Result<FeaturePyramid> {
    Encoder::load(store, cfg)?.encode(rgb, depth)
}
