use std::collections::BTreeMap;

use super::config::{DecoderKind, ModelConfig};
use crate::error::Result;

pub type ShapeTable = BTreeMap<String, Vec<usize>>;

struct Table(ShapeTable);

impl Table {
    fn put(&mut self, name: String, shape: &[usize]) {
        let prev = self.0.insert(name, shape.to_vec());
        debug_assert!(prev.is_none());
    }

    fn affine(&mut self, prefix: &str, out: usize, inp: usize) {
        self.put(format!("{prefix}.weight"), &[out, inp]);
        self.put(format!("{prefix}.bias"), &[out]);
    }

    fn norm(&mut self, prefix: &str, c: usize) {
        self.put(format!("{prefix}.weight"), &[c]);
        self.put(format!("{prefix}.bias"), &[c]);
    }
}

/// Every parameter the configured architecture reads, with its shape.
pub fn expected_shapes(config: &ModelConfig) -> Result<ShapeTable> {
    config.validate()?;
    let enc = &config.encoder;
    let mut t = Table(BTreeMap::new());
    let p = enc.patch_size;

    if enc.variant.is_multi() {
        let (r, d) = (enc.rgb_embed_channels - enc.rgb_widen_channels, enc.depth_embed_channels);
        t.put("encoder.patch_embed.rgb.weight".into(), &[r, p, p, 3]);
        t.put("encoder.patch_embed.rgb.bias".into(), &[r]);
        let wide = enc.rgb_widen_channels;
        if wide > 0 {
            t.put("encoder.patch_embed.rgb_wide.weight".into(), &[wide, p, p, 3]);
            t.put("encoder.patch_embed.rgb_wide.bias".into(), &[wide]);
        }
        t.put("encoder.patch_embed.depth.weight".into(), &[d, p, p, 1]);
        t.put("encoder.patch_embed.depth.bias".into(), &[d]);
    } else {
        let stem = enc.stem_channels;
        t.put("encoder.patch_embed.proj.weight".into(), &[stem, p, p, enc.joint_input_channels()]);
        t.put("encoder.patch_embed.proj.bias".into(), &[stem]);
    }
    t.norm("encoder.patch_embed.norm", enc.stem_channels);

    for s in 0..4 {
        let c = enc.stage_channels(s);
        let heads = enc.stage_heads(s);
        for b in 0..enc.depths[s] {
            let pre = format!("encoder.stages.{s}.blocks.{b}");
            t.affine(&format!("{pre}.attn.qkv"), 3 * c, c);
            t.put(format!("{pre}.attn.logit_scale"), &[heads]);
            t.affine(&format!("{pre}.attn.cpb.fc1"), enc.cpb_hidden, 2);
            t.put(format!("{pre}.attn.cpb.fc2.weight"), &[heads, enc.cpb_hidden]);
            t.affine(&format!("{pre}.attn.proj"), c, c);
            t.norm(&format!("{pre}.norm1"), c);
            t.affine(&format!("{pre}.mlp.fc1"), enc.mlp_ratio * c, c);
            t.affine(&format!("{pre}.mlp.fc2"), c, enc.mlp_ratio * c);
            t.norm(&format!("{pre}.norm2"), c);
        }
        if s < 3 {
            t.put(format!("encoder.merges.{s}.reduction.weight"), &[2 * c, 4 * c]);
            t.norm(&format!("encoder.merges.{s}.norm"), 2 * c);
        }
    }

    let deepest = enc.stage_channels(3);
    let ctx = &config.context;
    for i in 0..ctx.bins.len() {
        t.affine(&format!("context.branches.{i}"), ctx.branch_channels, deepest);
    }
    t.affine("context.fuse", ctx.out_channels, deepest + ctx.bins.len() * ctx.branch_channels);
    t.affine("scene_head", config.num_scene_classes, ctx.branch_channels);

    for (prefix, kind) in [
        ("semantic_decoder", config.semantic_decoder),
        ("instance_decoder", config.instance_decoder),
    ] {
        decoder_shapes(&mut t, prefix, kind, config);
    }

    t.affine("semantic_head", config.num_classes, config.decoder_out(config.semantic_decoder));
    let ins = config.decoder_out(config.instance_decoder);
    t.affine("instance_head.center", 1, ins);
    t.affine("instance_head.offset", 2, ins);
    t.affine("instance_head.orientation", 2, ins);
    Ok(t.0)
}

fn decoder_shapes(t: &mut Table, prefix: &str, kind: DecoderKind, config: &ModelConfig) {
    let enc = &config.encoder;
    let dec = &config.decoders;
    match kind {
        DecoderKind::Emsanet => {
            let mut inp = config.context.out_channels;
            for (i, &ch) in dec.emsanet_channels.iter().enumerate() {
                let pre = format!("{prefix}.levels.{i}");
                t.put(format!("{pre}.conv.weight"), &[ch, 3, 3, inp]);
                t.norm(&format!("{pre}.norm"), ch);
                // Level i adds the skip from stage 2 - i (1/16, 1/8, 1/4).
                t.affine(&format!("{pre}.skip"), ch, enc.stage_channels(2 - i));
                inp = ch;
            }
        }
        DecoderKind::Segformer => {
            for s in 0..4 {
                t.affine(&format!("{prefix}.embed.{s}"), dec.segformer_embed[3 - s], enc.stage_channels(s));
            }
            let total: usize = dec.segformer_embed.iter().sum();
            t.affine(&format!("{prefix}.fuse"), dec.segformer_hidden, total);
            t.affine(&format!("{prefix}.out"), dec.segformer_out, dec.segformer_hidden);
        }
    }
}

/// Attention projections that must not mix RGB and depth channels: `(name, split)`
/// where `split` is the first depth channel. Only split-embedding variants
/// have any, and only in the first stage.
pub fn modality_isolated(config: &ModelConfig) -> Vec<(String, usize)> {
    let enc = &config.encoder;
    if !enc.variant.is_multi() {
        return Vec::new();
    }
    let split = enc.rgb_embed_channels;
    (0..enc.depths[0])
        .flat_map(|b| {
            let pre = format!("encoder.stages.0.blocks.{b}.attn");
            [(format!("{pre}.qkv.weight"), split), (format!("{pre}.proj.weight"), split)]
        })
        .collect()
}

/// True when row `r` and column `c` of an isolated projection belong to
/// different modalities. Rows wrap every `channels` (the q, k, v thirds).
pub fn crosses_modality(r: usize, c: usize, channels: usize, split: usize) -> bool {
    ((r % channels) < split) != (c < split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderVariant;

    #[test]
    fn wide_multi_embedding_and_stage3_qkv() {
        let t = expected_shapes(&ModelConfig::emsaformer(EncoderVariant::SwinV2T128Multi)).unwrap();
        assert_eq!(t["encoder.patch_embed.rgb.weight"], [64, 4, 4, 3]);
        assert_eq!(t["encoder.patch_embed.rgb_wide.weight"], [32, 4, 4, 3]);
        assert_eq!(t["encoder.patch_embed.depth.weight"], [32, 4, 4, 1]);
        assert_eq!(t["encoder.stages.2.blocks.0.attn.qkv.weight"], [1536, 512]);
        assert_eq!(t["encoder.stages.2.blocks.5.mlp.fc1.weight"], [2048, 512]);
        assert!(!t.contains_key("encoder.stages.2.blocks.6.mlp.fc1.weight"));
    }

    #[test]
    fn rgb_only_has_no_depth_tensor() {
        let t = expected_shapes(&ModelConfig::emsaformer(EncoderVariant::RgbOnly)).unwrap();
        assert!(t.keys().all(|k| !k.contains("depth")));
        assert_eq!(t["encoder.patch_embed.proj.weight"], [96, 4, 4, 3]);
        let t = expected_shapes(&ModelConfig::emsaformer(EncoderVariant::SwinV2T)).unwrap();
        assert_eq!(t["encoder.patch_embed.proj.weight"], [96, 4, 4, 4]);
    }

    #[test]
    fn segformer_branch_widths_deepest_first() {
        let t = expected_shapes(&ModelConfig::emsaformer(EncoderVariant::SwinV2T128Multi)).unwrap();
        assert_eq!(t["semantic_decoder.embed.3.weight"], [256, 1024]);
        assert_eq!(t["semantic_decoder.embed.2.weight"], [128, 512]);
        assert_eq!(t["semantic_decoder.embed.1.weight"], [64, 256]);
        assert_eq!(t["semantic_decoder.embed.0.weight"], [64, 128]);
        assert_eq!(t["semantic_decoder.fuse.weight"], [256, 512]);
        assert_eq!(t["semantic_decoder.out.weight"], [64, 256]);
        assert_eq!(t["semantic_head.weight"], [40, 64]);
    }

    #[test]
    fn inconsistent_config_is_rejected() {
        let mut c = ModelConfig::emsaformer(EncoderVariant::SwinV2T128Multi);
        c.encoder.stem_channels = 100;
        assert!(expected_shapes(&c).is_err());
    }
}
