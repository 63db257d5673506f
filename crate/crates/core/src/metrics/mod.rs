//! Evaluation metrics: mIoU, PQ/SQ/RQ, MAAE and balanced accuracy, with an
//! order-stable dataset accumulator.

mod pq;
mod scalar;
mod semantic;

pub use pq::{match_segments, panoptic_quality, summarize, MatchedPair, PanopticMatch, Pq, PqCounts, PqSummary, MATCH_IOU};
pub use scalar::{angular_error, balanced_accuracy, balanced_accuracy_from_confusion, maae};
pub use semantic::{confusion, miou, miou_from_confusion, Confusion, MiouResult};

use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::panoptic::{LabelMap, PanopticMap, ThingStuffSpec, VOID};

/// Model outputs of one image in evaluation form.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePrediction {
    pub semantic: LabelMap,
    pub panoptic: PanopticMap,
    pub scene: Option<usize>,
}

/// Ground truth of one image; absent parts disable the matching metric.
/// Orientation ground truth lives in the panoptic instances.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ImageGroundTruth {
    pub semantic: Option<LabelMap>,
    pub panoptic: Option<PanopticMap>,
    pub scene: Option<usize>,
}

/// Per-image metric contributions.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageEval {
    pub confusion: Option<Confusion>,
    pub panoptic: Option<PanopticMatch>,
    /// Angular errors of matched instances oriented on both sides.
    pub orientation_errors: Vec<f64>,
    /// `(gt, pred)` scene labels.
    pub scene: Option<(usize, usize)>,
}

/// Scores one image. Label ids outside the class range are errors.
pub fn evaluate_image(
    pred: &ImagePrediction,
    gt: &ImageGroundTruth,
    spec: &ThingStuffSpec,
    num_scene_classes: usize,
) -> Result<ImageEval> {
    let labels = spec.num_classes() as usize + 1;
    let confusion = gt
        .semantic
        .as_ref()
        .map(|g| confusion(&pred.semantic, g, labels, Some(VOID)))
        .transpose()?;
    let panoptic = gt
        .panoptic
        .as_ref()
        .map(|g| match_segments(&pred.panoptic, g, spec))
        .transpose()?;
    let mut orientation_errors = Vec::new();
    if let (Some(m), Some(g)) = (&panoptic, &gt.panoptic) {
        for pair in m.pairs.iter().filter(|p| p.gt_instance > 0) {
            let po = pred.panoptic.instance(pair.pred_instance).and_then(|i| i.orientation_deg);
            let go = g.instance(pair.gt_instance).and_then(|i| i.orientation_deg);
            if let (Some(p), Some(q)) = (po, go) {
                orientation_errors.push(angular_error(p, q));
            }
        }
    }
    let scene = match (gt.scene, pred.scene) {
        (Some(g), Some(p)) => {
            if g >= num_scene_classes {
                return Err(config_err!("scene label {g} outside 0..{num_scene_classes}"));
            }
            Some((g, p))
        }
        _ => None,
    };
    Ok(ImageEval {
        confusion,
        panoptic,
        orientation_errors,
        scene,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub name: String,
    /// Per-image PQ in percent, for debugging.
    pub pq: Option<f64>,
}

/// Dataset accumulator. Merging is associative; adding images in the same
/// order gives bit-identical reports.
#[derive(Clone, Debug)]
pub struct EvalAccumulator {
    spec: ThingStuffSpec,
    num_scene_classes: usize,
    confusion: Confusion,
    semantic_images: usize,
    pq: Vec<PqCounts>,
    panoptic_images: usize,
    angle_sum: f64,
    angle_count: usize,
    scene: Confusion,
    records: Vec<ImageRecord>,
    warnings: Vec<String>,
}

impl EvalAccumulator {
    pub fn new(spec: &ThingStuffSpec, num_scene_classes: usize) -> Self {
        let labels = spec.num_classes() as usize + 1;
        Self {
            spec: spec.clone(),
            num_scene_classes,
            confusion: Confusion::new(labels),
            semantic_images: 0,
            pq: vec![PqCounts::default(); labels],
            panoptic_images: 0,
            angle_sum: 0.0,
            angle_count: 0,
            scene: Confusion::new(num_scene_classes + 1),
            records: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn add(&mut self, name: &str, e: &ImageEval) {
        if let Some(c) = &e.confusion {
            self.confusion.merge(c);
            self.semantic_images += 1;
        }
        let mut image_pq = None;
        if let Some(m) = &e.panoptic {
            for (a, b) in self.pq.iter_mut().zip(&m.per_class) {
                a.merge(b);
            }
            self.panoptic_images += 1;
            image_pq = summarize(&m.per_class, &self.spec).all.map(|q| q.pq);
        }
        for &err in &e.orientation_errors {
            self.angle_sum += err;
            self.angle_count += 1;
        }
        if let Some((g, p)) = e.scene {
            self.scene
                .add(g as u32, p.min(self.num_scene_classes) as u32)
                .expect("scene labels checked");
        }
        self.records.push(ImageRecord {
            name: name.to_string(),
            pq: image_pq,
        });
    }

    /// Records an image that could not be scored.
    pub fn skip(&mut self, name: &str, reason: &str) {
        self.warnings.push(format!("{name}: {reason}"));
    }

    pub fn merge(&mut self, other: &EvalAccumulator) {
        self.confusion.merge(&other.confusion);
        self.semantic_images += other.semantic_images;
        for (a, b) in self.pq.iter_mut().zip(&other.pq) {
            a.merge(b);
        }
        self.panoptic_images += other.panoptic_images;
        self.angle_sum += other.angle_sum;
        self.angle_count += other.angle_count;
        self.scene.merge(&other.scene);
        self.records.extend(other.records.iter().cloned());
        self.warnings.extend(other.warnings.iter().cloned());
    }

    pub fn report(&self, settings: BTreeMap<String, String>) -> EvalReport {
        let semantic = (self.semantic_images > 0).then(|| miou_from_confusion(&self.confusion, Some(VOID)));
        let panoptic = (self.panoptic_images > 0).then(|| summarize(&self.pq, &self.spec));
        EvalReport {
            images: self.records.len(),
            skipped: self.warnings.len(),
            miou: semantic.as_ref().and_then(|s| s.miou),
            per_class_iou: semantic.map(|s| s.per_class[1..].to_vec()).unwrap_or_default(),
            panoptic: panoptic.map(|mut p| {
                p.per_class.remove(0);
                p
            }),
            maae_deg: (self.angle_count > 0).then(|| self.angle_sum / self.angle_count as f64),
            maae_pairs: self.angle_count,
            bacc: balanced_accuracy_from_confusion(&self.scene),
            confusion: self.confusion.rows(),
            per_image: self.records.clone(),
            warnings: self.warnings.clone(),
            settings,
        }
    }
}

/// Aggregate evaluation results. Per-class vectors are indexed by class id minus one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub images: usize,
    pub skipped: usize,
    pub miou: Option<f64>,
    pub per_class_iou: Vec<Option<f64>>,
    pub panoptic: Option<PqSummary>,
    pub maae_deg: Option<f64>,
    pub maae_pairs: usize,
    pub bacc: Option<f64>,
    /// Rows are ground truth, columns prediction, over ids `0..=num_classes`.
    pub confusion: Vec<Vec<u64>>,
    pub per_image: Vec<ImageRecord>,
    pub warnings: Vec<String>,
    /// Knob values the report was produced with.
    pub settings: BTreeMap<String, String>,
}

fn fmt2(v: Option<f64>) -> String {
    v.map_or_else(|| "absent".to_string(), |v| format!("{v:.2}"))
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One `name=value` line per metric; percentages and degrees with two decimals.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut line = |k: &str, v: String| writeln!(s, "{k}={v}").unwrap();
        line("images", self.images.to_string());
        line("skipped", self.skipped.to_string());
        line("miou", fmt2(self.miou));
        let groups = self
            .panoptic
            .as_ref()
            .map(|p| [("", p.all), ("_things", p.things), ("_stuff", p.stuff), ("_pooled", p.pooled)]);
        for (suffix, i) in ["", "_things", "_stuff", "_pooled"].iter().zip(0..) {
            let q = groups.and_then(|g| g[i].1);
            line(&format!("pq{suffix}"), fmt2(q.map(|q| q.pq)));
            line(&format!("sq{suffix}"), fmt2(q.map(|q| q.sq)));
            line(&format!("rq{suffix}"), fmt2(q.map(|q| q.rq)));
        }
        line("maae_deg", fmt2(self.maae_deg));
        line("maae_pairs", self.maae_pairs.to_string());
        line("bacc", fmt2(self.bacc));
        for (c, v) in self.per_class_iou.iter().enumerate() {
            line(&format!("iou_class_{}", c + 1), fmt2(*v));
        }
        if let Some(p) = &self.panoptic {
            for (c, q) in p.per_class.iter().enumerate() {
                line(&format!("pq_class_{}", c + 1), fmt2(q.map(|q| q.pq)));
            }
        }
        for (k, v) in &self.settings {
            line(&format!("setting.{k}"), v.clone());
        }
        s
    }
}

#[cfg(test)]
mod tests;
