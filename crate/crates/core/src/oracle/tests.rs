use std::sync::Arc;

use super::driver::{check_grouping_with, mini_encoder_config, GroupingCaseView};
use super::*;
use crate::encoder::{encode, AttentionWeights};
use crate::model_io::{reference_init, ModelConfig};
use crate::panoptic::LabelMap;
use crate::tensor::Tensor;

fn run(id: &str, seeds: std::ops::Range<u64>) {
    let report = property_driver(seeds, id, None).unwrap();
    assert!(report.ok(), "{}", report.to_text());
}

#[test]
fn window_roundtrip_passes() {
    run("window-roundtrip", 0..100);
}

#[test]
fn attention_oracle_passes() {
    run("attention-oracle", 0..100);
}

#[test]
fn encoder_oracle_passes() {
    run("encoder-oracle", 0..3);
}

#[test]
fn grouping_oracle_passes() {
    run("grouping-oracle", 0..200);
}

#[test]
fn postprocess_properties_pass() {
    for id in ["centers-oracle", "merge-invariants", "postprocess-oracle"] {
        run(id, 0..100);
    }
}

#[test]
fn pq_properties_pass() {
    run("pq-oracle", 0..200);
    run("pq-identity", 0..100);
}

#[test]
fn unknown_property_is_an_error() {
    assert!(property_driver(0..1, "no-such-property", None).is_err());
}

#[test]
fn report_counts_properties_times_seeds() {
    let props: Vec<Property> = registry().into_iter().filter(|p| p.id != "encoder-oracle").collect();
    let report = run_properties(&props, 10..15, None).unwrap();
    assert_eq!(report.runs, props.len() as u64 * 5);
    assert_eq!(report.passed, report.runs);
    assert_eq!(report.seeds, 5);
}

/// Nearest-center grouping that never considers the last center.
fn off_by_one(g: &GroupingCaseView<'_>) -> crate::Result<LabelMap> {
    Ok(LabelMap::from_fn(g.h, g.w, |y, x| {
        if !*g.fg.get(y, x) || g.centers.is_empty() {
            return 0;
        }
        let p = y * g.w + x;
        let (ty, tx) = (y as f64 + g.offsets[2 * p] as f64, x as f64 + g.offsets[2 * p + 1] as f64);
        let mut best = (f64::INFINITY, 0);
        for k in 0..g.centers.len() - 1 {
            let c = &g.centers[k];
            let d = (ty - c.y as f64).powi(2) + (tx - c.x as f64).powi(2);
            if d < best.0 {
                best = (d, k);
            }
        }
        best.1 as u32 + 1
    }))
}

fn broken_grouping(seed: u64) -> Result<(), Counterexample> {
    check_grouping_with(seed, off_by_one)
}

#[test]
fn injected_off_by_one_fails_with_seed_dump() {
    let dir = tempfile::tempdir().unwrap();
    let props = [Property { id: "broken-grouping", check: broken_grouping }];
    let report = run_properties(&props, 0..20, Some(dir.path())).unwrap();
    assert!(!report.ok());
    let first = &report.failures[0];
    let dump = first.dump.as_ref().unwrap();
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dump).unwrap()).unwrap();
    assert_eq!(v["seed"], first.seed);
    assert_eq!(v["property"], "broken-grouping");
    assert!(v["inputs"]["centers"].is_array());
    // The dumped seed reproduces the failure.
    assert!(broken_grouping(first.seed).is_err());
    assert!(report.to_text().contains("FAIL broken-grouping"));
}

fn one_head_weights(c: usize, t: usize, bias: f32) -> AttentionWeights {
    let eye = Tensor::from_fn(&[c, c], |i| if i / c == i % c { 1.0 } else { 0.0 }).unwrap();
    let qkv = Tensor::from_fn(&[3 * c, c], |i| ((i * 7 % 11) as f32 - 5.0) / 10.0).unwrap();
    AttentionWeights {
        qkv_weight: Arc::new(qkv),
        qkv_bias: Arc::new(Tensor::full(&[3 * c], 0.1).unwrap()),
        logit_scale: Arc::new(Tensor::full(&[1], 1.0).unwrap()),
        proj_weight: Arc::new(eye),
        proj_bias: Arc::new(Tensor::zeros(&[c]).unwrap()),
        position_bias: Tensor::from_fn(&[1, t, t], |i| bias + (i % 5) as f32 * 0.3).unwrap(),
    }
}

#[test]
fn single_token_window_returns_value_projection() {
    let c = 4;
    let w = one_head_weights(c, 1, 0.0);
    let x = Tensor::new(&[1, 1, c], vec![0.3, -1.0, 2.0, 0.5]).unwrap();
    let out = naive_attention(&x, &w, 1, None).unwrap();
    for o in 0..c {
        let mut v = 0.1f32;
        for i in 0..c {
            v += w.qkv_weight.data()[(2 * c + o) * c + i] * x.data()[i];
        }
        assert!((out.data()[o] - v).abs() < 1e-6);
    }
}

#[test]
fn uniform_bias_shift_is_invisible() {
    let (c, t) = (4, 9);
    let x = Tensor::from_fn(&[2, t, c], |i| ((i * 13 % 17) as f32 - 8.0) / 4.0).unwrap();
    let a = naive_attention(&x, &one_head_weights(c, t, 0.0), 1, None).unwrap();
    let b = naive_attention(&x, &one_head_weights(c, t, 3.5), 1, None).unwrap();
    assert!(a.max_abs_diff(&b) < 1e-6);
}

#[test]
fn naive_encoder_matches_on_tiny_config() {
    let cfg = ModelConfig::tiny();
    let store = reference_init(&cfg, 3).unwrap();
    let rgb = Tensor::from_fn(&[1, 64, 64, 3], |i| ((i * 31 % 97) as f32 - 48.0) / 24.0).unwrap();
    let depth = Tensor::from_fn(&[1, 64, 64, 1], |i| ((i * 17 % 89) as f32 - 44.0) / 22.0).unwrap();
    let fast = encode(&rgb, Some(&depth), &cfg.encoder, &store).unwrap();
    let slow = naive_encoder(&rgb, Some(&depth), &cfg.encoder, &store).unwrap();
    for (a, b) in fast.stages.iter().zip(&slow.stages) {
        assert_eq!(a.shape(), b.shape());
        assert!(a.max_abs_diff(b) <= 1e-4, "diff {}", a.max_abs_diff(b));
    }
}

#[test]
fn mini_config_is_valid() {
    mini_encoder_config().validate().unwrap();
}

/// Names a reference file imports from the crate.
fn crate_imports(src: &str) -> Vec<String> {
    let mut names = Vec::new();
    let mut stmt = String::new();
    for line in src.lines() {
        let l = line.trim();
        if l.starts_with("use crate::") || !stmt.is_empty() {
            stmt.push_str(l);
            if l.ends_with(';') {
                let body = stmt.trim_start_matches("use crate::").trim_end_matches(';');
                let (path, list) = match body.find('{') {
                    Some(i) => (body[..i].trim_end_matches("::"), body[i + 1..].trim_end_matches('}')),
                    None => body.rsplit_once("::").unwrap(),
                };
                for n in list.split(',').map(str::trim).filter(|n| !n.is_empty()) {
                    names.push(format!("{path}::{n}"));
                }
                stmt.clear();
            }
        }
    }
    names
}

#[test]
fn references_import_only_data_types() {
    for (file, src) in [("dense.rs", include_str!("dense.rs")), ("post.rs", include_str!("post.rs"))] {
        assert!(!src.contains("kernels") && !src.contains("rayon"), "{file} reaches into optimized code");
        for name in crate_imports(src) {
            let last = name.rsplit("::").next().unwrap();
            let is_type = last.chars().next().unwrap().is_ascii_uppercase();
            assert!(is_type || last == "config_err", "{file} imports {name}");
        }
    }
}
