//! Brute-force panoptic post-processing and panoptic quality.

use std::collections::{BTreeMap, BTreeSet};

use crate::metrics::PqCounts;
use crate::panoptic::{Center, InstanceInfo, LabelMap, Mask, PanopticMap, ThingStuffSpec};

/// Centers of an `h x w` heatmap: pixels at or above `threshold` that rank
/// first in their `kernel` window by (score, then earliest raster position).
pub fn naive_centers(heat: &[f32], h: usize, w: usize, threshold: f32, kernel: usize, top_k: usize) -> Vec<Center> {
    let r = (kernel / 2) as isize;
    let rank = |y: usize, x: usize| (std::cmp::Reverse(ordered(heat[y * w + x])), y, x);
    let mut found = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if (heat[y * w + x] as f64) < threshold as f64 {
                continue;
            }
            let mut best = (y, x);
            for dy in -r..=r {
                for dx in -r..=r {
                    let (qy, qx) = (y as isize + dy, x as isize + dx);
                    if qy < 0 || qx < 0 || qy >= h as isize || qx >= w as isize {
                        continue;
                    }
                    let q = (qy as usize, qx as usize);
                    if rank(q.0, q.1) < rank(best.0, best.1) {
                        best = q;
                    }
                }
            }
            if best == (y, x) {
                found.push(Center { y, x, score: heat[y * w + x] });
            }
        }
    }
    found.sort_by_key(|c| rank(c.y, c.x));
    found.truncate(top_k);
    found
}

/// Total order on scores for ranking.
fn ordered(v: f32) -> i64 {
    let b = v.to_bits() as i32;
    (if b < 0 { b ^ i32::MAX } else { b }) as i64
}

/// Nearest-center assignment by exhaustive search.
pub fn naive_group_pixels(centers: &[Center], offsets: &[f32], h: usize, w: usize, fg: &Mask) -> LabelMap {
    LabelMap::from_fn(h, w, |y, x| {
        if !*fg.get(y, x) || centers.is_empty() {
            return 0;
        }
        let p = y * w + x;
        let target = (y as f64 + offsets[2 * p] as f64, x as f64 + offsets[2 * p + 1] as f64);
        let dists: Vec<(f64, usize)> = centers
            .iter()
            .enumerate()
            .map(|(k, c)| ((target.0 - c.y as f64).powi(2) + (target.1 - c.x as f64).powi(2), k))
            .collect();
        let min = dists.iter().map(|d| d.0).fold(f64::INFINITY, f64::min);
        let first = dists.iter().find(|d| d.0 == min).map_or(0, |d| d.1);
        first as u32 + 1
    })
}

/// Majority-class fusion of instances with semantics.
pub fn naive_merge(semantic: &LabelMap, instance: &LabelMap, spec: &ThingStuffSpec, min_px: usize) -> PanopticMap {
    let w = semantic.width();
    let mut members: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (p, (&c, &i)) in semantic.data().iter().zip(instance.data()).enumerate() {
        if i != 0 && spec.is_thing(c) {
            members.entry(i).or_default().push(p);
        }
    }
    let mut sem = semantic.clone();
    let mut ids = LabelMap::filled(semantic.height(), w, 0);
    let mut instances = Vec::new();
    for (src, pixels) in members {
        if pixels.len() < min_px {
            continue;
        }
        let classes: BTreeSet<u32> = pixels.iter().map(|&p| semantic.data()[p]).collect();
        let count = |c: u32| pixels.iter().filter(|&&p| semantic.data()[p] == c).count();
        let top = classes.iter().map(|&c| count(c)).max().unwrap_or(0);
        let class = *classes.iter().find(|&&c| count(c) == top).expect("nonempty instance");
        let id = instances.len() as u32 + 1;
        let (mut sy, mut sx) = (0.0, 0.0);
        for &p in &pixels {
            sem.data_mut()[p] = class;
            ids.data_mut()[p] = id;
            sy += (p / w) as f64;
            sx += (p % w) as f64;
        }
        let n = pixels.len();
        instances.push(InstanceInfo {
            id,
            semantic_class: class,
            center: (sy / n as f64, sx / n as f64),
            pixel_count: n,
            orientation_deg: None,
            score: None,
            source_id: src,
        });
    }
    PanopticMap { semantic: sem, instance_id: ids, instances }
}

/// Mean of unit vectors `(sin, cos)` over each instance, as degrees in `[0, 360)`.
pub fn naive_orientation(field: &[f32], pan: &PanopticMap) -> Vec<Option<f64>> {
    pan.instances
        .iter()
        .map(|inst| {
            let mut n = 0usize;
            let (mut s, mut c) = (0.0f64, 0.0f64);
            for (p, &id) in pan.instance_id.data().iter().enumerate() {
                if id != inst.id {
                    continue;
                }
                n += 1;
                let (a, b) = (field[2 * p] as f64, field[2 * p + 1] as f64);
                let r = (a * a + b * b).sqrt();
                if r > 0.0 {
                    s += a / r;
                    c += b / r;
                }
            }
            if n == 0 {
                return None;
            }
            let (s, c) = (s / n as f64, c / n as f64);
            if (s * s + c * c).sqrt() < 1e-6 {
                return None;
            }
            let mut deg = s.atan2(c) * 180.0 / std::f64::consts::PI;
            while deg < 0.0 {
                deg += 360.0;
            }
            while deg >= 360.0 {
                deg -= 360.0;
            }
            Some(deg)
        })
        .collect()
}

/// Inputs of [`naive_postprocess`] as plain buffers.
pub struct NaiveInputs<'a> {
    pub semantic: &'a LabelMap,
    pub heatmap: &'a [f32],
    pub offsets: &'a [f32],
    pub orientation: &'a [f32],
}

/// Centers, grouping, merge and orientation in sequence.
pub fn naive_postprocess(
    inputs: &NaiveInputs<'_>,
    spec: &ThingStuffSpec,
    threshold: f32,
    kernel: usize,
    top_k: usize,
    min_px: usize,
    gt_semantic: Option<&LabelMap>,
) -> PanopticMap {
    let (h, w) = (inputs.semantic.height(), inputs.semantic.width());
    let source = gt_semantic.unwrap_or(inputs.semantic);
    let fg = source.map(|&c| spec.is_thing(c));
    let centers = naive_centers(inputs.heatmap, h, w, threshold, kernel, top_k);
    let grouped = naive_group_pixels(&centers, inputs.offsets, h, w, &fg);
    let mut pan = naive_merge(source, &grouped, spec, min_px);
    if gt_semantic.is_some() {
        for p in 0..h * w {
            if pan.instance_id.data()[p] == 0 {
                pan.semantic.data_mut()[p] = inputs.semantic.data()[p];
            }
        }
    }
    let angles = naive_orientation(inputs.orientation, &pan);
    for (inst, a) in pan.instances.iter_mut().zip(angles) {
        inst.orientation_deg = a;
        inst.score = centers.get(inst.source_id as usize - 1).map(|c| c.score);
    }
    pan
}

/// Segment key: class plus instance id (0 for stuff).
type Key = (u32, u32);

fn segments(pan: &PanopticMap, spec: &ThingStuffSpec) -> BTreeMap<Key, BTreeSet<usize>> {
    let mut out: BTreeMap<Key, BTreeSet<usize>> = BTreeMap::new();
    for p in 0..pan.semantic.len() {
        let c = pan.semantic.data()[p];
        let i = pan.instance_id.data()[p];
        if c == 0 || c > spec.num_classes() {
            continue;
        }
        if spec.is_stuff(c) {
            out.entry((c, 0)).or_default().insert(p);
        } else if i > 0 {
            out.entry((c, i)).or_default().insert(p);
        }
    }
    out
}

/// Panoptic quality counters per class id, from pixel sets.
pub fn naive_pq(pred: &PanopticMap, gt: &PanopticMap, spec: &ThingStuffSpec) -> Vec<PqCounts> {
    let gs = segments(gt, spec);
    let ps = segments(pred, spec);
    let covered: BTreeSet<usize> = gs.values().flatten().copied().collect();
    let void: BTreeSet<usize> = (0..gt.semantic.len()).filter(|p| !covered.contains(p)).collect();
    let mut counts = vec![PqCounts::default(); spec.num_classes() as usize + 1];
    let mut pred_hit = BTreeSet::new();
    for (gk, g) in &gs {
        let mut hit = false;
        for (pk, q) in &ps {
            if gk.0 != pk.0 {
                continue;
            }
            let inter = g.intersection(q).count();
            let union = g.union(q).filter(|p| !void.contains(p)).count();
            let iou = inter as f64 / union as f64;
            if iou > 0.5 {
                hit = true;
                pred_hit.insert(*pk);
                counts[gk.0 as usize].tp += 1;
                counts[gk.0 as usize].iou_sum += iou;
            }
        }
        if !hit {
            counts[gk.0 as usize].fn_ += 1;
        }
    }
    for (pk, q) in &ps {
        if pred_hit.contains(pk) {
            continue;
        }
        let on_void = q.intersection(&void).count();
        if on_void as f64 <= 0.5 * q.len() as f64 {
            counts[pk.0 as usize].fp += 1;
        }
    }
    counts
}
