//! Seeded property driver comparing optimized paths against the oracles.

use std::ops::Range;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use super::dense::{naive_attention, naive_encoder};
use super::post::{naive_centers, naive_group_pixels, naive_merge, naive_postprocess, naive_pq, NaiveInputs};
use crate::encoder::attention::relative_position_bias;
use crate::encoder::window::{attention_mask, crop, pad_to_window, region_labels, roll, window_partition, window_reverse};
use crate::encoder::{cosine_window_attention, encode, AttentionWeights, EncoderConfig, EncoderVariant};
use crate::error::{config_err, Error};
use crate::metrics::{match_segments, summarize, PqCounts};
use crate::model_io::{reference_init, ModelConfig};
use crate::panoptic::{
    extract_centers, group_pixels, merge_panoptic, postprocess, DenseMaps, InstanceInfo, LabelMap, Mask, PanopticMap,
    PostprocessSettings, ThingStuffSpec,
};
use crate::tensor::Tensor;

/// Why a seed failed, with the inputs needed to reproduce it.
#[derive(Clone, Debug)]
pub struct Counterexample {
    pub message: String,
    pub inputs: Value,
}

impl Counterexample {
    fn new(message: impl Into<String>, inputs: Value) -> Self {
        Self { message: message.into(), inputs }
    }
}

impl From<Error> for Counterexample {
    fn from(e: Error) -> Self {
        Self::new(format!("error: {e}"), Value::Null)
    }
}

pub type Check = fn(u64) -> Result<(), Counterexample>;

/// A named invariant checked once per seed.
#[derive(Clone, Copy)]
pub struct Property {
    pub id: &'static str,
    pub check: Check,
}

#[derive(Clone, Debug, Serialize)]
pub struct SeedFailure {
    pub property: String,
    pub seed: u64,
    pub message: String,
    pub dump: Option<PathBuf>,
}

/// Outcome of a driver run; `runs` is properties times seeds.
#[derive(Clone, Debug, Default, Serialize)]
pub struct PropertyReport {
    pub properties: Vec<String>,
    pub seeds: u64,
    pub runs: u64,
    pub passed: u64,
    pub failures: Vec<SeedFailure>,
}

impl PropertyReport {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "properties={} seeds={} runs={} passed={} failed={}\n",
            self.properties.len(),
            self.seeds,
            self.runs,
            self.passed,
            self.failures.len()
        );
        for f in &self.failures {
            s.push_str(&format!("FAIL {} seed={}: {}", f.property, f.seed, f.message));
            if let Some(p) = &f.dump {
                s.push_str(&format!(" (inputs: {})", p.display()));
            }
            s.push('\n');
        }
        s
    }
}

/// All registered properties.
pub fn registry() -> Vec<Property> {
    vec![
        Property { id: "window-roundtrip", check: window_roundtrip },
        Property { id: "attention-oracle", check: attention_oracle },
        Property { id: "encoder-oracle", check: encoder_oracle },
        Property { id: "centers-oracle", check: centers_oracle },
        Property { id: "grouping-oracle", check: grouping_oracle },
        Property { id: "merge-invariants", check: merge_invariants },
        Property { id: "postprocess-oracle", check: postprocess_oracle },
        Property { id: "pq-oracle", check: pq_oracle },
        Property { id: "pq-identity", check: pq_identity },
    ]
}

/// Runs `property_id` (or every property for `"all"`) over `seeds`. Failing
/// seeds are written as JSON to `dump_dir` when given.
pub fn property_driver(seeds: Range<u64>, property_id: &str, dump_dir: Option<&Path>) -> crate::Result<PropertyReport> {
    let all = registry();
    let chosen: Vec<Property> = if property_id == "all" {
        all
    } else {
        let p = all
            .into_iter()
            .find(|p| p.id == property_id)
            .ok_or_else(|| config_err!("unknown property {property_id:?}"))?;
        vec![p]
    };
    run_properties(&chosen, seeds, dump_dir)
}

pub fn run_properties(props: &[Property], seeds: Range<u64>, dump_dir: Option<&Path>) -> crate::Result<PropertyReport> {
    let mut report = PropertyReport {
        properties: props.iter().map(|p| p.id.to_string()).collect(),
        seeds: seeds.end.saturating_sub(seeds.start),
        ..Default::default()
    };
    for p in props {
        for seed in seeds.clone() {
            report.runs += 1;
            match (p.check)(seed) {
                Ok(()) => report.passed += 1,
                Err(cx) => {
                    let dump = dump_dir.map(|d| write_dump(d, p.id, seed, &cx)).transpose()?;
                    report.failures.push(SeedFailure {
                        property: p.id.to_string(),
                        seed,
                        message: cx.message,
                        dump,
                    });
                }
            }
        }
    }
    Ok(report)
}

fn write_dump(dir: &Path, id: &str, seed: u64, cx: &Counterexample) -> crate::Result<PathBuf> {
    let io = |e: std::io::Error| config_err!("cannot write failure dump to {}: {e}", dir.display());
    std::fs::create_dir_all(dir).map_err(io)?;
    let path = dir.join(format!("{id}-seed{seed}.json"));
    let body = json!({ "property": id, "seed": seed, "message": cx.message, "inputs": cx.inputs });
    std::fs::write(&path, serde_json::to_string_pretty(&body).expect("json value")).map_err(io)?;
    Ok(path)
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_tensor(r: &mut ChaCha8Rng, shape: &[usize], scale: f32) -> Tensor {
    Tensor::from_fn(shape, |_| r.gen_range(-scale..scale)).expect("valid shape")
}

fn shape_json(t: &Tensor) -> Value {
    json!({ "shape": t.shape(), "data": t.data() })
}

fn ensure(ok: bool, message: impl FnOnce() -> String, inputs: impl FnOnce() -> Value) -> Result<(), Counterexample> {
    if ok {
        Ok(())
    } else {
        Err(Counterexample::new(message(), inputs()))
    }
}

fn window_roundtrip(seed: u64) -> Result<(), Counterexample> {
    let mut r = rng(seed);
    let m = [2, 4, 8][r.gen_range(0..3)];
    let (b, h, w, c) = (r.gen_range(1..3), r.gen_range(1..20), r.gen_range(1..20), r.gen_range(1..5));
    let x = random_tensor(&mut r, &[b, h, w, c], 1.0);
    let inputs = || json!({ "window": m, "x": shape_json(&x) });
    let (padded, spec) = pad_to_window(&x, m)?;
    ensure(crop(&padded, spec)? == x, || "crop(pad(x)) != x".into(), inputs)?;
    let (hp, wp) = (padded.shape()[1], padded.shape()[2]);
    let windows = window_partition(&padded, m)?;
    ensure(window_reverse(&windows, m, hp, wp)? == padded, || "reverse(partition(x)) != x".into(), inputs)?;
    let wd = windows.data();
    for bi in 0..b {
        for i in 0..hp / m {
            for j in 0..wp / m {
                let k = (bi * (hp / m) + i) * (wp / m) + j;
                for yy in 0..m {
                    for xx in 0..m {
                        for ch in 0..c {
                            let got = wd[((k * m + yy) * m + xx) * c + ch];
                            let want = padded.data()[((bi * hp + i * m + yy) * wp + j * m + xx) * c + ch];
                            ensure(got == want, || format!("window {k} differs from its slice at ({yy},{xx},{ch})"), inputs)?;
                        }
                    }
                }
            }
        }
    }
    let (dy, dx) = (r.gen_range(0..hp), r.gen_range(0..wp));
    let back = roll(&roll(&padded, dy, dx)?, (hp - dy) % hp, (wp - dx) % wp)?;
    ensure(back == padded, || format!("roll by ({dy},{dx}) does not invert"), inputs)
}

fn random_attention(r: &mut ChaCha8Rng, c: usize, heads: usize, window: usize) -> AttentionWeights {
    let hidden = 16;
    // Uniform bound of the usual fan-in initialization.
    let k = 1.0 / (c as f32).sqrt();
    let fc1_w = random_tensor(r, &[hidden, 2], 1.0);
    let fc1_b = random_tensor(r, &[hidden], 0.5);
    let fc2_w = random_tensor(r, &[heads, hidden], 0.5);
    AttentionWeights {
        qkv_weight: Arc::new(random_tensor(r, &[3 * c, c], k)),
        qkv_bias: Arc::new(random_tensor(r, &[3 * c], 0.1)),
        logit_scale: Arc::new(Tensor::from_fn(&[heads], |_| r.gen_range(0.5..5.0)).expect("shape")),
        proj_weight: Arc::new(random_tensor(r, &[c, c], k)),
        proj_bias: Arc::new(random_tensor(r, &[c], 0.1)),
        position_bias: relative_position_bias(&fc1_w, &fc1_b, &fc2_w, window).expect("valid cpb"),
    }
}

fn attention_oracle(seed: u64) -> Result<(), Counterexample> {
    let mut r = rng(seed);
    let m = 8;
    let heads = [2, 4][r.gen_range(0..2)];
    let c = heads * [4, 8][r.gen_range(0..2)];
    let weights = random_attention(&mut r, c, heads, m);
    let (h, w) = (r.gen_range(1..=2 * m), r.gen_range(1..=2 * m));
    let (hp, wp) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
    let shift = if r.gen_bool(0.5) { m / 2 } else { 0 };
    let mask = attention_mask(&region_labels(hp, wp, h, w, m, shift), hp, wp, m);
    let n = (hp / m) * (wp / m);
    let windows = random_tensor(&mut r, &[n, m * m, c], 1.0);
    let fast = cosine_window_attention(&windows, &weights, heads, mask.as_ref())?;
    let slow = naive_attention(&windows, &weights, heads, mask.as_ref())?;
    let diff = fast.max_abs_diff(&slow);
    ensure(
        diff <= 1e-5,
        || format!("max abs diff {diff:e} > 1e-5"),
        || json!({ "heads": heads, "channels": c, "h": h, "w": w, "shift": shift, "windows": shape_json(&windows) }),
    )
}

/// Four-stage encoder small enough for the loop oracle at every seed.
pub fn mini_encoder_config() -> EncoderConfig {
    EncoderConfig {
        variant: EncoderVariant::SwinV2TMulti,
        stem_channels: 16,
        rgb_embed_channels: 8,
        rgb_widen_channels: 0,
        depth_embed_channels: 8,
        depths: [2, 2, 1, 1],
        window_size: 4,
        head_dim: 8,
        mlp_ratio: 2,
        cpb_hidden: 16,
        patch_size: 4,
    }
}

fn encoder_oracle(seed: u64) -> Result<(), Counterexample> {
    let mut r = rng(seed);
    let cfg = ModelConfig { encoder: mini_encoder_config(), ..ModelConfig::tiny() };
    let store = reference_init(&cfg, seed)?;
    let (h, w) = (r.gen_range(32..48), r.gen_range(32..48));
    let rgb = random_tensor(&mut r, &[1, h, w, 3], 2.0);
    let depth = random_tensor(&mut r, &[1, h, w, 1], 2.0);
    let fast = encode(&rgb, Some(&depth), &cfg.encoder, &store)?;
    let slow = naive_encoder(&rgb, Some(&depth), &cfg.encoder, &store)?;
    for (s, (a, b)) in fast.stages.iter().zip(&slow.stages).enumerate() {
        ensure(a.shape() == b.shape(), || format!("stage {s} shape {:?} vs {:?}", a.shape(), b.shape()), || Value::Null)?;
        let diff = a.max_abs_diff(b);
        ensure(
            diff <= 1e-4,
            || format!("stage {s} max abs diff {diff:e} > 1e-4"),
            || json!({ "h": h, "w": w, "weight_seed": seed }),
        )?;
    }
    Ok(())
}

fn random_heatmap(r: &mut ChaCha8Rng, h: usize, w: usize) -> Vec<f32> {
    // Coarse levels create plateaus and ties.
    let levels = r.gen_range(2..12) as f32;
    (0..h * w).map(|_| (r.gen_range(0.0..1.0f32) * levels).floor() / levels).collect()
}

fn centers_oracle(seed: u64) -> Result<(), Counterexample> {
    let mut r = rng(seed);
    let (h, w) = (r.gen_range(1..33), r.gen_range(1..33));
    let heat = random_heatmap(&mut r, h, w);
    let (thr, k, top_k) = (r.gen_range(0.0..0.8f32), [1, 3, 5, 7][r.gen_range(0..4)], r.gen_range(1..40));
    let fast = extract_centers(&Tensor::new(&[h, w], heat.clone())?, thr, k, top_k)?;
    let slow = naive_centers(&heat, h, w, thr, k, top_k);
    ensure(
        fast == slow,
        || format!("{} centers vs {} from the oracle", fast.len(), slow.len()),
        || json!({ "h": h, "w": w, "heat": heat, "threshold": thr, "kernel": k, "top_k": top_k }),
    )
}

struct GroupingCase {
    h: usize,
    w: usize,
    centers: Vec<crate::panoptic::Center>,
    offsets: Vec<f32>,
    fg: Mask,
}

fn grouping_case(r: &mut ChaCha8Rng) -> GroupingCase {
    let (h, w) = (r.gen_range(1..33), r.gen_range(1..33));
    let n = r.gen_range(0..8);
    let centers = (0..n)
        .map(|_| crate::panoptic::Center { y: r.gen_range(0..h), x: r.gen_range(0..w), score: 1.0 })
        .collect();
    let integral = r.gen_bool(0.5);
    let offsets = (0..2 * h * w)
        .map(|_| {
            let v = r.gen_range(-6.0..6.0f32);
            if integral {
                v.round()
            } else {
                v
            }
        })
        .collect();
    let density = r.gen_range(0.0..1.0);
    let fg = Mask::from_fn(h, w, |_, _| r.gen_bool(density));
    GroupingCase { h, w, centers, offsets, fg }
}

/// Borrowed grouping inputs.
pub struct GroupingCaseView<'a> {
    pub h: usize,
    pub w: usize,
    pub centers: &'a [crate::panoptic::Center],
    pub offsets: &'a [f32],
    pub fg: &'a Mask,
}

/// Checks `candidate` against the grouping oracle on the seed's random case.
pub fn check_grouping_with(seed: u64, candidate: impl Fn(&GroupingCaseView<'_>) -> crate::Result<LabelMap>) -> Result<(), Counterexample> {
    let g = grouping_case(&mut rng(seed));
    let view = GroupingCaseView { h: g.h, w: g.w, centers: &g.centers, offsets: &g.offsets, fg: &g.fg };
    let fast = candidate(&view)?;
    let slow = naive_group_pixels(&g.centers, &g.offsets, g.h, g.w, &g.fg);
    let mismatches = fast.data().iter().zip(slow.data()).filter(|(a, b)| a != b).count();
    ensure(
        mismatches == 0,
        || format!("{mismatches} pixels assigned differently"),
        || {
            json!({
                "h": g.h,
                "w": g.w,
                "centers": g.centers,
                "offsets": g.offsets,
                "foreground": g.fg.data(),
            })
        },
    )
}

fn grouping_oracle(seed: u64) -> Result<(), Counterexample> {
    check_grouping_with(seed, |g| group_pixels(g.centers, &Tensor::new(&[g.h, g.w, 2], g.offsets.to_vec())?, g.fg))
}

fn small_spec() -> ThingStuffSpec {
    ThingStuffSpec::new(6, &[1, 2])
}

/// Random semantic and instance maps painted from rectangles.
fn random_maps(r: &mut ChaCha8Rng, h: usize, w: usize, classes: u32) -> (LabelMap, LabelMap) {
    let mut sem = LabelMap::filled(h, w, r.gen_range(0..=classes));
    let mut inst = LabelMap::filled(h, w, 0);
    for _ in 0..r.gen_range(1..8) {
        let (y0, x0) = (r.gen_range(0..h), r.gen_range(0..w));
        let (y1, x1) = (r.gen_range(y0..h) + 1, r.gen_range(x0..w) + 1);
        let (c, i) = (r.gen_range(0..=classes), r.gen_range(0..5));
        for y in y0..y1 {
            for x in x0..x1 {
                sem.set(y, x, c);
                inst.set(y, x, i);
            }
        }
    }
    for p in 0..h * w {
        if r.gen_bool(0.05) {
            sem.data_mut()[p] = r.gen_range(0..=classes);
        }
    }
    (sem, inst)
}

fn merge_invariants(seed: u64) -> Result<(), Counterexample> {
    let mut r = rng(seed);
    let spec = small_spec();
    let (h, w) = (r.gen_range(1..24), r.gen_range(1..24));
    let (sem, inst) = random_maps(&mut r, h, w, 6);
    let min_px = r.gen_range(0..12);
    let pan = merge_panoptic(&sem, &inst, &spec, min_px)?;
    let inputs = || json!({ "h": h, "w": w, "semantic": sem.data(), "instance": inst.data(), "min_px": min_px });
    let oracle = naive_merge(&sem, &inst, &spec, min_px);
    ensure(
        pan.semantic == oracle.semantic && pan.instance_id == oracle.instance_id,
        || "merge differs from the counting oracle".into(),
        inputs,
    )?;
    for (k, info) in pan.instances.iter().enumerate() {
        ensure(info.id == k as u32 + 1, || format!("instance ids not dense at {k}"), inputs)?;
        ensure(info.pixel_count >= min_px.max(1), || format!("instance {} below min size", info.id), inputs)?;
    }
    for p in 0..h * w {
        let (c, i) = (pan.semantic.data()[p], pan.instance_id.data()[p]);
        if i > 0 {
            let info = &pan.instances[i as usize - 1];
            ensure(spec.is_thing(c) && c == info.semantic_class, || format!("pixel {p} class {c} in instance {i}"), inputs)?;
        } else {
            ensure(c == sem.data()[p], || format!("non-instance pixel {p} relabeled"), inputs)?;
        }
    }
    Ok(())
}

fn same_instances(a: &[InstanceInfo], b: &[InstanceInfo]) -> bool {
    let close = |x: f64, y: f64| (x - y).abs() <= 1e-9;
    a.len() == b.len()
        && a.iter().zip(b).all(|(p, q)| {
            p.id == q.id
                && p.semantic_class == q.semantic_class
                && p.pixel_count == q.pixel_count
                && p.score == q.score
                && close(p.center.0, q.center.0)
                && close(p.center.1, q.center.1)
                && match (p.orientation_deg, q.orientation_deg) {
                    (Some(x), Some(y)) => close(x, y) || (360.0 - (x - y).abs()).abs() <= 1e-9,
                    (None, None) => true,
                    _ => false,
                }
        })
}

fn postprocess_oracle(seed: u64) -> Result<(), Counterexample> {
    let mut r = rng(seed);
    let spec = small_spec();
    let (h, w) = (r.gen_range(4..33), r.gen_range(4..33));
    let (sem, _) = random_maps(&mut r, h, w, 6);
    let (gt, _) = random_maps(&mut r, h, w, 6);
    let heat = random_heatmap(&mut r, h, w);
    let offsets: Vec<f32> = (0..2 * h * w).map(|_| r.gen_range(-4.0..4.0)).collect();
    let orient: Vec<f32> = (0..2 * h * w).map(|_| r.gen_range(-1.0..1.0)).collect();
    let settings = PostprocessSettings {
        center_threshold: r.gen_range(0.0..0.9),
        nms_kernel: [1, 3, 5, 7][r.gen_range(0..4)],
        top_k: r.gen_range(1..20),
        min_instance_pixels: r.gen_range(0..10),
    };
    let use_gt = r.gen_bool(0.3);
    let (ht, ot, rt) = (
        Tensor::new(&[h, w, 1], heat.clone())?,
        Tensor::new(&[h, w, 2], offsets.clone())?,
        Tensor::new(&[h, w, 2], orient.clone())?,
    );
    let maps = DenseMaps { semantic: &sem, heatmap: &ht, offsets: &ot, orientation: &rt };
    let fast = postprocess(&maps, &spec, &settings, use_gt.then_some(&gt))?;
    let naive_in = NaiveInputs { semantic: &sem, heatmap: &heat, offsets: &offsets, orientation: &orient };
    let slow = naive_postprocess(
        &naive_in,
        &spec,
        settings.center_threshold,
        settings.nms_kernel,
        settings.top_k,
        settings.min_instance_pixels,
        use_gt.then_some(&gt),
    );
    ensure(
        fast.semantic == slow.semantic && fast.instance_id == slow.instance_id && same_instances(&fast.instances, &slow.instances),
        || "post-processing differs from the oracle".into(),
        || {
            json!({
                "h": h, "w": w, "semantic": sem.data(), "gt": use_gt.then(|| gt.data().to_vec()),
                "heatmap": heat, "offsets": offsets, "orientation": orient, "settings": settings,
            })
        },
    )
}

/// Ground truth with up to six segments and a prediction derived from it.
fn random_panoptic_pair(r: &mut ChaCha8Rng, spec: &ThingStuffSpec) -> (PanopticMap, PanopticMap) {
    let (h, w) = (r.gen_range(4..20), r.gen_range(4..20));
    let paint = |r: &mut ChaCha8Rng, n: usize| {
        let mut sem = LabelMap::filled(h, w, 0);
        let mut inst = LabelMap::filled(h, w, 0);
        for k in 0..n {
            let c = r.gen_range(1..=spec.num_classes());
            let id = if spec.is_thing(c) { if r.gen_bool(0.9) { k as u32 + 1 } else { 0 } } else { 0 };
            let (y0, x0) = (r.gen_range(0..h), r.gen_range(0..w));
            let (y1, x1) = (r.gen_range(y0..h) + 1, r.gen_range(x0..w) + 1);
            for y in y0..y1 {
                for x in x0..x1 {
                    sem.set(y, x, c);
                    inst.set(y, x, id);
                }
            }
        }
        PanopticMap { semantic: sem, instance_id: inst, instances: Vec::new() }
    };
    let n = r.gen_range(1..=6);
    let gt = paint(r, n);
    let pred = if r.gen_bool(0.5) {
        let n = r.gen_range(0..=6);
        paint(r, n)
    } else {
        let mut p = gt.clone();
        for i in 0..h * w {
            if r.gen_bool(0.15) {
                p.semantic.data_mut()[i] = r.gen_range(0..=spec.num_classes());
                p.instance_id.data_mut()[i] = r.gen_range(0..7);
            }
        }
        p
    };
    (pred, gt)
}

fn counts_equal(a: &[PqCounts], b: &[PqCounts]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.tp == y.tp && x.fp == y.fp && x.fn_ == y.fn_ && x.iou_sum == y.iou_sum)
}

fn pq_oracle(seed: u64) -> Result<(), Counterexample> {
    let mut r = rng(seed);
    let spec = small_spec();
    let (pred, gt) = random_panoptic_pair(&mut r, &spec);
    let fast = match_segments(&pred, &gt, &spec)?;
    let slow = naive_pq(&pred, &gt, &spec);
    ensure(
        counts_equal(&fast.per_class, &slow),
        || format!("counters {:?} vs oracle {:?}", fast.per_class, slow),
        || pair_json(&pred, &gt),
    )
}

fn pair_json(pred: &PanopticMap, gt: &PanopticMap) -> Value {
    json!({
        "h": gt.height(), "w": gt.width(),
        "pred_semantic": pred.semantic.data(), "pred_instance": pred.instance_id.data(),
        "gt_semantic": gt.semantic.data(), "gt_instance": gt.instance_id.data(),
    })
}

fn pq_identity(seed: u64) -> Result<(), Counterexample> {
    let mut r = rng(seed);
    let spec = small_spec();
    let (pred, gt) = random_panoptic_pair(&mut r, &spec);
    let summary = summarize(&match_segments(&pred, &gt, &spec)?.per_class, &spec);
    let mut all = summary.per_class.iter().flatten().collect::<Vec<_>>();
    all.extend(summary.pooled.iter());
    for q in all {
        let err = (q.pq - q.sq * q.rq / 100.0).abs();
        ensure(err <= 1e-9, || format!("PQ {} != SQ {} * RQ {} (error {err:e})", q.pq, q.sq, q.rq), || pair_json(&pred, &gt))?;
    }
    Ok(())
}
