//! End-to-end model: encoder, context module, decoders, heads and
//! panoptic post-processing.

use std::time::{Duration, Instant};

use serde::Serialize;

use crate::encoder::{Encoder, FeaturePyramid};
use crate::error::{config_err, Result};
use crate::heads::{ContextModule, Decoder, DenseHeads, Pointwise, TaskOutputs};
use crate::model_io::{ModelConfig, WeightStore};
use crate::panoptic::{postprocess, semantic_argmax, DenseMaps, LabelMap, PanopticMap, PostprocessSettings};
use crate::tensor::Tensor;

/// Wall-clock time per pipeline stage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct StageTimings {
    pub encoder: Duration,
    pub context: Duration,
    /// Both decoders and the dense heads, including upsampling.
    pub decoders: Duration,
    pub postprocess: Duration,
}

impl StageTimings {
    pub const NAMES: [&'static str; 4] = ["encoder", "context", "decoders", "postprocess"];

    pub fn as_array(&self) -> [Duration; 4] {
        [self.encoder, self.context, self.decoders, self.postprocess]
    }

    pub fn total(&self) -> Duration {
        self.as_array().iter().sum()
    }
}

/// Results for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageAnalysis {
    /// Per-pixel argmax of the semantic head, ids `1..=num_classes`.
    pub semantic: LabelMap,
    pub panoptic: PanopticMap,
    /// Index of the highest scene logit.
    pub scene_label: usize,
    pub scene_logits: Vec<f32>,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub encoder: Encoder,
    pub context: ContextModule,
    pub scene_head: Pointwise,
    pub semantic_decoder: Decoder,
    pub instance_decoder: Decoder,
    pub heads: DenseHeads,
}

impl Model {
    /// Builds the model, reading every parameter the configuration needs.
    pub fn load(config: &ModelConfig, store: &WeightStore) -> Result<Self> {
        config.validate()?;
        let root = store.scope("");
        let deepest = config.encoder.stage_channels(3);
        Ok(Self {
            config: config.clone(),
            encoder: Encoder::load(store, &config.encoder)?,
            context: ContextModule::load(&root.sub("context"), &config.context, deepest)?,
            scene_head: Pointwise::load(
                &root.sub("scene_head"),
                config.num_scene_classes,
                config.context.branch_channels,
            )?,
            semantic_decoder: Decoder::load(&root.sub("semantic_decoder"), config.semantic_decoder, config)?,
            instance_decoder: Decoder::load(&root.sub("instance_decoder"), config.instance_decoder, config)?,
            heads: DenseHeads::load(&root, config)?,
        })
    }

    /// Converts 8-bit interleaved RGB and depth in millimetres into
    /// normalized `[1, H, W, 3]` and `[1, H, W, 1]` tensors.
    pub fn preprocess(&self, rgb: &[u8], depth_mm: Option<&[u16]>, height: usize, width: usize) -> Result<(Tensor, Option<Tensor>)> {
        let p = &self.config.preprocessing;
        if rgb.len() != height * width * 3 {
            return Err(config_err!("rgb buffer has {} bytes, expected {}", rgb.len(), height * width * 3));
        }
        let rgb_t = Tensor::from_fn(&[1, height, width, 3], |i| {
            let c = i % 3;
            (rgb[i] as f32 / 255.0 - p.rgb_mean[c]) / p.rgb_std[c]
        })?;
        let depth_t = match depth_mm {
            Some(d) => {
                if d.len() != height * width {
                    return Err(config_err!("depth buffer has {} values, expected {}", d.len(), height * width));
                }
                Some(Tensor::from_fn(&[1, height, width, 1], |i| {
                    (d[i] as f32 * p.depth_scale - p.depth_mean) / p.depth_std
                })?)
            }
            None => None,
        };
        Ok((rgb_t, depth_t))
    }

    pub fn encode(&self, rgb: &Tensor, depth: Option<&Tensor>) -> Result<FeaturePyramid> {
        self.encoder.encode(rgb, depth)
    }

    pub fn forward(&self, rgb: &Tensor, depth: Option<&Tensor>) -> Result<TaskOutputs> {
        Ok(self.forward_timed(rgb, depth)?.0)
    }

    /// Forward pass with timings; `postprocess` stays zero.
    pub fn forward_timed(&self, rgb: &Tensor, depth: Option<&Tensor>) -> Result<(TaskOutputs, StageTimings)> {
        let (_, h, w, _) = rgb.dims4()?;
        let mut t = StageTimings::default();
        let start = Instant::now();
        let pyramid = self.encoder.encode(rgb, depth)?;
        t.encoder = start.elapsed();

        let start = Instant::now();
        let (context, pooled) = self.context.forward(pyramid.deepest())?;
        let scene_logits = self.scene_head.forward(&pooled)?;
        t.context = start.elapsed();

        let start = Instant::now();
        let (sem, ins) = rayon::join(
            || self.semantic_decoder.forward(&pyramid, &context),
            || self.instance_decoder.forward(&pyramid, &context),
        );
        let dense = self.heads.forward(&sem?, &ins?, h, w)?;
        t.decoders = start.elapsed();

        Ok((
            TaskOutputs {
                semantic_logits: dense.semantic_logits,
                center_heatmap: dense.center_heatmap,
                offsets: dense.offsets,
                orientation: dense.orientation,
                scene_logits,
            },
            t,
        ))
    }

    /// Post-processes image `b` of a batch of outputs.
    pub fn postprocess(
        &self,
        outputs: &TaskOutputs,
        b: usize,
        settings: &PostprocessSettings,
        gt_semantic: Option<&LabelMap>,
    ) -> Result<ImageAnalysis> {
        let semantic = semantic_argmax(&outputs.semantic_logits.batch_item(b)?)?;
        let heatmap = outputs.center_heatmap.batch_item(b)?;
        let offsets = outputs.offsets.batch_item(b)?;
        let orientation = outputs.orientation.batch_item(b)?;
        let maps = DenseMaps {
            semantic: &semantic,
            heatmap: &heatmap,
            offsets: &offsets,
            orientation: &orientation,
        };
        let panoptic = postprocess(&maps, &self.config.thing_stuff(), settings, gt_semantic)?;
        let s = self.config.num_scene_classes;
        let scene_logits = outputs.scene_logits.data()[b * s..(b + 1) * s].to_vec();
        let mut scene_label = 0;
        for (i, &v) in scene_logits.iter().enumerate() {
            if v > scene_logits[scene_label] {
                scene_label = i;
            }
        }
        Ok(ImageAnalysis {
            semantic,
            panoptic,
            scene_label,
            scene_logits,
        })
    }

    /// Full pipeline on a batch of one image.
    pub fn analyze(
        &self,
        rgb: &Tensor,
        depth: Option<&Tensor>,
        settings: &PostprocessSettings,
        gt_semantic: Option<&LabelMap>,
    ) -> Result<(ImageAnalysis, TaskOutputs, StageTimings)> {
        if rgb.dims4()?.0 != 1 {
            return Err(config_err!("analyze takes a single image, got batch {}", rgb.shape()[0]));
        }
        let (outputs, mut t) = self.forward_timed(rgb, depth)?;
        let start = Instant::now();
        let analysis = self.postprocess(&outputs, 0, settings, gt_semantic)?;
        t.postprocess = start.elapsed();
        Ok((analysis, outputs, t))
    }
}
