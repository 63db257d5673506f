use std::collections::BTreeMap;

use super::{accumulate_centroids, plane_dims, InstanceInfo, LabelMap, Mask, PanopticMap, ThingStuffSpec};
use crate::error::{config_err, Result};
use crate::tensor::Tensor;

/// Below this mean-vector norm an instance gets no orientation.
pub const MIN_ORIENTATION_NORM: f64 = 1e-6;

/// Pixels eligible for instances and the map that assigns instance classes.
#[derive(Clone, Debug, PartialEq)]
pub struct Foreground {
    pub mask: Mask,
    pub classes: LabelMap,
}

/// Foreground = predicted thing pixels; classes from the prediction.
pub fn predicted_foreground(semantic: &LabelMap, spec: &ThingStuffSpec) -> Foreground {
    Foreground {
        mask: semantic.map(|&c| spec.is_thing(c)),
        classes: semantic.clone(),
    }
}

/// Foreground = ground-truth thing pixels; instance classes by ground-truth
/// majority vote.
pub fn gt_foreground_mode(gt_semantic: &LabelMap, spec: &ThingStuffSpec) -> Foreground {
    predicted_foreground(gt_semantic, spec)
}

/// Fuses a class-agnostic instance map with semantic labels.
///
/// Each instance takes the majority thing class of its pixels (ties to the
/// lower id) and its thing pixels are relabeled to that class. Instances
/// with fewer than `min_instance_pixels` thing pixels are dissolved.
/// Surviving instances get dense ids in ascending order of their input id.
/// Stuff and void pixels never carry an instance.
pub fn merge_panoptic(
    semantic: &LabelMap,
    instance_id: &LabelMap,
    spec: &ThingStuffSpec,
    min_instance_pixels: usize,
) -> Result<PanopticMap> {
    if !semantic.same_dims(instance_id) {
        return Err(config_err!(
            "semantic {}x{} and instance {}x{} maps differ",
            semantic.height(),
            semantic.width(),
            instance_id.height(),
            instance_id.width()
        ));
    }
    let mut votes: BTreeMap<u32, BTreeMap<u32, usize>> = BTreeMap::new();
    for (&c, &i) in semantic.data().iter().zip(instance_id.data()) {
        if i > 0 && spec.is_thing(c) {
            *votes.entry(i).or_default().entry(c).or_default() += 1;
        }
    }
    // source id -> (dense id, class)
    let mut kept = BTreeMap::new();
    let mut instances = Vec::new();
    for (src, counts) in votes {
        let total: usize = counts.values().sum();
        if total == 0 || total < min_instance_pixels {
            continue;
        }
        let mut best = (0u32, 0usize);
        for (&c, &n) in &counts {
            if n > best.1 {
                best = (c, n);
            }
        }
        let id = instances.len() as u32 + 1;
        kept.insert(src, (id, best.0));
        instances.push(InstanceInfo {
            id,
            semantic_class: best.0,
            center: (0.0, 0.0),
            pixel_count: 0,
            orientation_deg: None,
            score: None,
            source_id: src,
        });
    }
    let mut sem = semantic.clone();
    let mut ids = LabelMap::filled(semantic.height(), semantic.width(), 0);
    for ((s, out), &i) in sem.data_mut().iter_mut().zip(ids.data_mut()).zip(instance_id.data()) {
        if !spec.is_thing(*s) {
            continue;
        }
        if let Some(&(id, class)) = kept.get(&i) {
            *s = class;
            *out = id;
        }
    }
    accumulate_centroids(&ids, &mut instances);
    Ok(PanopticMap {
        semantic: sem,
        instance_id: ids,
        instances,
    })
}

/// Circular mean of the per-pixel `(sin, cos)` field over each instance.
///
/// Pixel vectors are normalized first; zero vectors contribute nothing.
/// Angles are in degrees in `[0, 360)`.
pub fn aggregate_orientation(field: &Tensor, panoptic: &PanopticMap) -> Result<PanopticMap> {
    let (h, w) = plane_dims(field, 2)?;
    if (h, w) != (panoptic.height(), panoptic.width()) {
        return Err(config_err!(
            "orientation field {h}x{w} does not match panoptic map {}x{}",
            panoptic.height(),
            panoptic.width()
        ));
    }
    let mut sums = vec![(0f64, 0f64, 0usize); panoptic.instances.len()];
    let f = field.data();
    for (p, &id) in panoptic.instance_id.data().iter().enumerate() {
        if id == 0 {
            continue;
        }
        let (s, c) = (f[2 * p] as f64, f[2 * p + 1] as f64);
        let norm = s.hypot(c);
        let acc = &mut sums[id as usize - 1];
        acc.2 += 1;
        if norm > 0.0 {
            acc.0 += s / norm;
            acc.1 += c / norm;
        }
    }
    let mut out = panoptic.clone();
    for (inst, (s, c, n)) in out.instances.iter_mut().zip(sums) {
        inst.orientation_deg = if n == 0 {
            None
        } else {
            let (ms, mc) = (s / n as f64, c / n as f64);
            (ms.hypot(mc) >= MIN_ORIENTATION_NORM).then(|| wrap_degrees(ms.atan2(mc).to_degrees()))
        };
    }
    Ok(out)
}

/// Maps an angle in degrees to `[0, 360)`.
pub fn wrap_degrees(deg: f64) -> f64 {
    let d = deg.rem_euclid(360.0);
    if d >= 360.0 {
        0.0
    } else {
        d
    }
}
