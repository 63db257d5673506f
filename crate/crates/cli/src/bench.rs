//! Latency benchmark of the full pipeline on a fixed synthetic frame.

use std::collections::BTreeMap;
use std::time::Instant;

use emsaformer_core::panoptic::PostprocessSettings;
use emsaformer_core::{Model, StageTimings};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{CliError, CliResult};

pub const MIN_ITERS: usize = 10;
pub const MIN_WARMUP: usize = 3;

#[derive(Clone, Debug, Serialize)]
pub struct LatencyStats {
    pub name: String,
    pub median_ms: f64,
    pub p10_ms: f64,
    pub p90_ms: f64,
    pub fps: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchReport {
    pub settings: BTreeMap<String, String>,
    pub iterations: usize,
    pub stages: Vec<LatencyStats>,
    pub total: LatencyStats,
    /// Wall-clock latency of each timed iteration in milliseconds.
    pub samples_ms: Vec<f64>,
}

/// Linearly interpolated quantile of sorted samples.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn stats(name: &str, samples: &[f64]) -> LatencyStats {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let median = quantile(&s, 0.5);
    LatencyStats {
        name: name.to_string(),
        median_ms: median,
        p10_ms: quantile(&s, 0.1),
        p90_ms: quantile(&s, 0.9),
        fps: if median > 0.0 { 1000.0 / median } else { f64::INFINITY },
    }
}

/// Fixed 8-bit RGB and millimetre depth frame.
pub fn synthetic_frame(height: usize, width: usize) -> (Vec<u8>, Vec<u16>) {
    let mut r = ChaCha8Rng::seed_from_u64(0);
    let rgb = (0..height * width * 3).map(|_| r.gen()).collect();
    let depth = (0..height * width).map(|_| r.gen_range(500..5000)).collect();
    (rgb, depth)
}

pub fn run_bench(
    model: &Model,
    height: usize,
    width: usize,
    iters: usize,
    warmup: usize,
    post: &PostprocessSettings,
    settings: BTreeMap<String, String>,
) -> CliResult<BenchReport> {
    if iters < MIN_ITERS || warmup < MIN_WARMUP {
        return Err(CliError::Input(format!(
            "bench needs at least {MIN_ITERS} iterations and {MIN_WARMUP} warmup runs"
        )));
    }
    let (rgb, depth) = synthetic_frame(height, width);
    let (rgb, depth) = model.preprocess(&rgb, Some(&depth), height, width)?;
    let depth = depth.filter(|_| model.config.encoder.variant.uses_depth());
    let mut per_stage = vec![Vec::with_capacity(iters); StageTimings::NAMES.len()];
    let mut totals = Vec::with_capacity(iters);
    for i in 0..warmup + iters {
        let start = Instant::now();
        let (_, _, t) = model.analyze(&rgb, depth.as_ref(), post, None)?;
        let wall = start.elapsed();
        if i >= warmup {
            for (acc, d) in per_stage.iter_mut().zip(t.as_array()) {
                acc.push(d.as_secs_f64() * 1e3);
            }
            totals.push(wall.as_secs_f64() * 1e3);
        }
    }
    Ok(BenchReport {
        settings,
        iterations: iters,
        stages: StageTimings::NAMES.iter().zip(&per_stage).map(|(n, s)| stats(n, s)).collect(),
        total: stats("total", &totals),
        samples_ms: totals,
    })
}

impl BenchReport {
    pub fn to_text(&self) -> String {
        let mut s = format!("{:<12} {:>10} {:>10} {:>10} {:>9}\n", "stage", "median_ms", "p10_ms", "p90_ms", "fps");
        for st in self.stages.iter().chain(std::iter::once(&self.total)) {
            s.push_str(&format!(
                "{:<12} {:>10.3} {:>10.3} {:>10.3} {:>9.2}\n",
                st.name, st.median_ms, st.p10_ms, st.p90_ms, st.fps
            ));
        }
        for (k, v) in &self.settings {
            s.push_str(&format!("setting.{k}={v}\n"));
        }
        s
    }
}
