use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderConfig, EncoderVariant};
use crate::error::{config_err, Result};
use crate::panoptic::ThingStuffSpec;

/// Dense decoder architecture for one branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecoderKind {
    /// Convolutional decoder with three x2 upsampling modules and encoder skips.
    Emsanet,
    /// Pointwise (MLP) decoder over all four stages.
    Segformer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextConfig {
    /// Pyramid-pooling bin sizes; the first must be 1 (global average).
    pub bins: Vec<usize>,
    pub branch_channels: usize,
    pub out_channels: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    /// Channels of the three upsampling modules, coarsest first.
    pub emsanet_channels: [usize; 3],
    /// Embedding width per stage, deepest stage first.
    pub segformer_embed: [usize; 4],
    pub segformer_hidden: usize,
    pub segformer_out: usize,
}

/// Input normalization. Depth in millimetres is multiplied by `depth_scale`
/// and then standardized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    pub rgb_mean: [f32; 3],
    pub rgb_std: [f32; 3],
    pub depth_scale: f32,
    pub depth_mean: f32,
    pub depth_std: f32,
}

impl Default for Preprocessing {
    fn default() -> Self {
        Self {
            rgb_mean: [0.485, 0.456, 0.406],
            rgb_std: [0.229, 0.224, 0.225],
            depth_scale: 1.0 / 5000.0,
            depth_mean: 0.5,
            depth_std: 0.3,
        }
    }
}

/// Full architecture description stored alongside the weights.
///
/// Semantic class ids are `1..=num_classes`; id 0 is void.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub semantic_decoder: DecoderKind,
    pub instance_decoder: DecoderKind,
    pub num_classes: usize,
    pub num_scene_classes: usize,
    pub stuff_classes: Vec<u32>,
    pub context: ContextConfig,
    pub decoders: DecoderConfig,
    pub preprocessing: Preprocessing,
}

/// NYUv2 40-class ids of wall, floor and ceiling.
pub const NYUV2_STUFF: [u32; 3] = [1, 2, 22];

/// Largest class id that still fits the `class * 1000 + instance` 16-bit encoding.
pub const MAX_CLASSES: usize = 64;

impl ModelConfig {
    /// Semantic branch with the pointwise decoder, instance branch with the
    /// convolutional decoder, NYUv2 label space.
    pub fn emsaformer(variant: EncoderVariant) -> Self {
        Self {
            encoder: EncoderConfig::reference(variant),
            semantic_decoder: DecoderKind::Segformer,
            instance_decoder: DecoderKind::Emsanet,
            num_classes: 40,
            num_scene_classes: 10,
            stuff_classes: NYUV2_STUFF.to_vec(),
            context: ContextConfig {
                bins: vec![1, 2, 4, 8],
                branch_channels: 128,
                out_channels: 512,
            },
            decoders: DecoderConfig {
                emsanet_channels: [512, 256, 128],
                segformer_embed: [256, 128, 64, 64],
                segformer_hidden: 256,
                segformer_out: 64,
            },
            preprocessing: Preprocessing::default(),
        }
    }

    /// Narrow model for tests and quick benchmarks.
    pub fn tiny() -> Self {
        Self {
            encoder: EncoderConfig::tiny(),
            semantic_decoder: DecoderKind::Segformer,
            instance_decoder: DecoderKind::Emsanet,
            num_classes: 40,
            num_scene_classes: 10,
            stuff_classes: NYUV2_STUFF.to_vec(),
            context: ContextConfig {
                bins: vec![1, 2, 4, 8],
                branch_channels: 16,
                out_channels: 64,
            },
            decoders: DecoderConfig {
                emsanet_channels: [64, 32, 32],
                segformer_embed: [64, 32, 16, 16],
                segformer_hidden: 64,
                segformer_out: 32,
            },
            preprocessing: Preprocessing::default(),
        }
    }

    /// [`ModelConfig::tiny`] with another patch-embedding variant.
    pub fn tiny_variant(variant: EncoderVariant) -> Self {
        let mut c = Self::tiny();
        c.encoder.variant = variant;
        if !variant.is_multi() {
            c.encoder.rgb_embed_channels = c.encoder.stem_channels;
            c.encoder.depth_embed_channels = 0;
        }
        c
    }

    /// Named presets accepted on the command line: a variant name, `tiny`,
    /// or `tiny-<variant>`.
    pub fn preset(name: &str) -> Option<Self> {
        if name == "tiny" {
            return Some(Self::tiny());
        }
        if let Some(v) = name.strip_prefix("tiny-") {
            return EncoderVariant::parse(v).map(Self::tiny_variant);
        }
        EncoderVariant::parse(name).map(Self::emsaformer)
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.num_classes == 0 || self.num_classes > MAX_CLASSES {
            return Err(config_err!("num_classes must be in 1..={MAX_CLASSES}, got {}", self.num_classes));
        }
        if self.num_scene_classes == 0 {
            return Err(config_err!("num_scene_classes must be positive"));
        }
        if let Some(c) = self.stuff_classes.iter().find(|&&c| c == 0 || c as usize > self.num_classes) {
            return Err(config_err!("stuff class {c} outside 1..={}", self.num_classes));
        }
        if self.context.bins.first() != Some(&1) || self.context.bins.contains(&0) {
            return Err(config_err!("context bins must start with 1 and be positive, got {:?}", self.context.bins));
        }
        let widths = [
            self.context.branch_channels,
            self.context.out_channels,
            self.decoders.segformer_hidden,
            self.decoders.segformer_out,
        ];
        if widths.iter().chain(&self.decoders.emsanet_channels).chain(&self.decoders.segformer_embed).any(|&c| c == 0) {
            return Err(config_err!("decoder and context widths must be positive"));
        }
        let p = &self.preprocessing;
        if p.rgb_std.iter().any(|&s| s <= 0.0) || p.depth_std <= 0.0 || p.depth_scale <= 0.0 {
            return Err(config_err!("preprocessing scales must be positive"));
        }
        Ok(())
    }

    pub fn thing_stuff(&self) -> ThingStuffSpec {
        ThingStuffSpec::new(self.num_classes as u32, &self.stuff_classes)
    }

    /// Output channels of a decoder of the given kind.
    pub fn decoder_out(&self, kind: DecoderKind) -> usize {
        match kind {
            DecoderKind::Emsanet => self.decoders.emsanet_channels[2],
            DecoderKind::Segformer => self.decoders.segformer_out,
        }
    }
}
