use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

/// How RGB and depth enter the patch embedding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EncoderVariant {
    /// RGB only, one 3-channel 4x4 convolution.
    #[serde(rename = "rgb-only")]
    RgbOnly,
    /// Depth stacked as a fourth input channel of a single convolution.
    #[serde(rename = "swinv2-t")]
    SwinV2T,
    /// Separate RGB and depth convolutions into disjoint channel ranges (64 + 32).
    #[serde(rename = "swinv2-t-multi")]
    SwinV2TMulti,
    /// Widened model with 96 RGB + 32 depth channels.
    #[serde(rename = "swinv2-t-128-multi")]
    SwinV2T128Multi,
}

impl EncoderVariant {
    pub const ALL: [EncoderVariant; 4] = [
        EncoderVariant::RgbOnly,
        EncoderVariant::SwinV2T,
        EncoderVariant::SwinV2TMulti,
        EncoderVariant::SwinV2T128Multi,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EncoderVariant::RgbOnly => "rgb-only",
            EncoderVariant::SwinV2T => "swinv2-t",
            EncoderVariant::SwinV2TMulti => "swinv2-t-multi",
            EncoderVariant::SwinV2T128Multi => "swinv2-t-128-multi",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == name)
    }

    pub fn uses_depth(self) -> bool {
        self != EncoderVariant::RgbOnly
    }

    /// RGB and depth are embedded by separate convolutions.
    pub fn is_multi(self) -> bool {
        matches!(self, EncoderVariant::SwinV2TMulti | EncoderVariant::SwinV2T128Multi)
    }
}

impl std::fmt::Display for EncoderVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub variant: EncoderVariant,
    pub stem_channels: usize,
    /// Total RGB embedding width, including `rgb_widen_channels`.
    pub rgb_embed_channels: usize,
    /// Extra RGB filters stored as a separate widening tensor (split variants only).
    #[serde(default)]
    pub rgb_widen_channels: usize,
    pub depth_embed_channels: usize,
    pub depths: [usize; 4],
    pub window_size: usize,
    pub head_dim: usize,
    pub mlp_ratio: usize,
    /// Hidden width of the continuous position-bias MLP.
    pub cpb_hidden: usize,
    pub patch_size: usize,
}

impl EncoderConfig {
    /// SwinV2-T based reference configuration for a variant.
    pub fn reference(variant: EncoderVariant) -> Self {
        let (stem, rgb, widen, depth) = match variant {
            EncoderVariant::RgbOnly | EncoderVariant::SwinV2T => (96, 96, 0, 0),
            EncoderVariant::SwinV2TMulti => (96, 64, 0, 32),
            EncoderVariant::SwinV2T128Multi => (128, 96, 32, 32),
        };
        Self {
            variant,
            stem_channels: stem,
            rgb_embed_channels: rgb,
            rgb_widen_channels: widen,
            depth_embed_channels: depth,
            depths: [2, 2, 6, 2],
            window_size: 8,
            head_dim: 32,
            mlp_ratio: 4,
            cpb_hidden: 512,
            patch_size: 4,
        }
    }

    /// Small split-embedding model for tests and quick benchmarks (32 RGB + 32 depth channels).
    pub fn tiny() -> Self {
        Self {
            variant: EncoderVariant::SwinV2TMulti,
            stem_channels: 64,
            rgb_embed_channels: 32,
            rgb_widen_channels: 0,
            depth_embed_channels: 32,
            depths: [2, 2, 2, 2],
            window_size: 8,
            head_dim: 32,
            mlp_ratio: 4,
            cpb_hidden: 64,
            patch_size: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rgb_embed_channels + self.depth_embed_channels != self.stem_channels {
            return Err(config_err!(
                "stem channels {} != rgb {} + depth {}",
                self.stem_channels,
                self.rgb_embed_channels,
                self.depth_embed_channels
            ));
        }
        if self.head_dim == 0 || self.stem_channels % self.head_dim != 0 {
            return Err(config_err!(
                "stem channels {} not divisible by head dim {}",
                self.stem_channels,
                self.head_dim
            ));
        }
        if self.variant.is_multi() {
            if self.depth_embed_channels == 0 || self.rgb_embed_channels == 0 {
                return Err(config_err!("split-embedding variant needs both rgb and depth channels"));
            }
            if self.rgb_embed_channels % self.head_dim != 0 {
                return Err(config_err!(
                    "rgb embedding width {} must be a multiple of the head dim {} so modalities map to whole heads",
                    self.rgb_embed_channels,
                    self.head_dim
                ));
            }
            if self.rgb_widen_channels >= self.rgb_embed_channels {
                return Err(config_err!("rgb widening must be narrower than the rgb embedding"));
            }
        } else if self.depth_embed_channels != 0 || self.rgb_widen_channels != 0 {
            return Err(config_err!("variant {} has no separate depth embedding", self.variant));
        }
        if self.window_size < 2 || self.window_size % 2 != 0 {
            return Err(config_err!("window size must be even and >= 2, got {}", self.window_size));
        }
        if self.depths.contains(&0) || self.mlp_ratio == 0 || self.cpb_hidden == 0 {
            return Err(config_err!("depths, mlp ratio and cpb width must be positive"));
        }
        if self.patch_size == 0 {
            return Err(config_err!("patch size must be positive"));
        }
        Ok(())
    }

    pub fn stage_channels(&self, stage: usize) -> usize {
        self.stem_channels << stage
    }

    pub fn stage_heads(&self, stage: usize) -> usize {
        self.stage_channels(stage) / self.head_dim
    }

    pub fn shift_size(&self) -> usize {
        self.window_size / 2
    }

    /// Input channels of the joint embedding convolution (non-split variants).
    pub fn joint_input_channels(&self) -> usize {
        if self.variant.uses_depth() {
            4
        } else {
            3
        }
    }
}
