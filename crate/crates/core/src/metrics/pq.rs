use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::panoptic::{PanopticMap, ThingStuffSpec, VOID};

/// Matching threshold on segment IoU (strict).
pub const MATCH_IOU: f64 = 0.5;

/// Matching counters of one class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PqCounts {
    pub iou_sum: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl PqCounts {
    pub fn merge(&mut self, o: &PqCounts) {
        self.iou_sum += o.iou_sum;
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }

    pub fn is_empty(&self) -> bool {
        self.tp + self.fp + self.fn_ == 0
    }

    /// `(pq, sq, rq)` as fractions; `None` when the class never occurs.
    pub fn quality(&self) -> Option<(f64, f64, f64)> {
        if self.is_empty() {
            return None;
        }
        let denom = self.tp as f64 + 0.5 * self.fp as f64 + 0.5 * self.fn_ as f64;
        let sq = if self.tp > 0 { self.iou_sum / self.tp as f64 } else { 0.0 };
        Some((self.iou_sum / denom, sq, self.tp as f64 / denom))
    }
}

/// A true-positive segment pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub class: u32,
    /// Instance ids, 0 for stuff segments.
    pub gt_instance: u32,
    pub pred_instance: u32,
    pub iou: f64,
}

/// Matching result of one image.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PanopticMatch {
    /// Indexed by class id.
    pub per_class: Vec<PqCounts>,
    pub pairs: Vec<MatchedPair>,
}

/// Percent triple.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pq {
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
}

/// Class-averaged qualities overall, over things and over stuff, plus the
/// totals pooled across classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PqSummary {
    pub all: Option<Pq>,
    pub things: Option<Pq>,
    pub stuff: Option<Pq>,
    pub pooled: Option<Pq>,
    /// Percent per class id.
    pub per_class: Vec<Option<Pq>>,
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
enum Segment {
    Stuff(u32),
    /// `(class, instance id)`.
    Thing(u32, u32),
}

struct SegmentStats {
    class: u32,
    area: u64,
    /// Pixels lying on ground-truth void (prediction side only).
    void_overlap: u64,
}

fn segment_of(pan: &PanopticMap, p: usize, spec: &ThingStuffSpec) -> Option<Segment> {
    let c = pan.semantic.data()[p];
    let i = pan.instance_id.data()[p];
    if c == VOID || c > spec.num_classes() {
        None
    } else if spec.is_stuff(c) {
        Some(Segment::Stuff(c))
    } else if i > 0 {
        Some(Segment::Thing(c, i))
    } else {
        None
    }
}

/// Segment matching of one image.
///
/// Stuff classes form one segment per class; thing segments are instances.
/// Ground-truth pixels outside every segment (void, or thing pixels without
/// an instance) are ignored: they are removed from prediction unions, and a
/// prediction lying mostly on them is not a false positive.
pub fn match_segments(pred: &PanopticMap, gt: &PanopticMap, spec: &ThingStuffSpec) -> Result<PanopticMatch> {
    if !pred.semantic.same_dims(&gt.semantic) {
        return Err(config_err!(
            "prediction {}x{} and ground truth {}x{} differ",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        ));
    }
    let mut gts: BTreeMap<Segment, SegmentStats> = BTreeMap::new();
    let mut preds: BTreeMap<Segment, SegmentStats> = BTreeMap::new();
    let mut inter: BTreeMap<(Segment, Segment), u64> = BTreeMap::new();
    for p in 0..gt.semantic.len() {
        let g = segment_of(gt, p, spec);
        let q = segment_of(pred, p, spec);
        if let Some(g) = g {
            gts.entry(g)
                .or_insert(SegmentStats { class: gt.semantic.data()[p], area: 0, void_overlap: 0 })
                .area += 1;
        }
        if let Some(q) = q {
            let s = preds
                .entry(q)
                .or_insert(SegmentStats { class: pred.semantic.data()[p], area: 0, void_overlap: 0 });
            s.area += 1;
            match g {
                Some(g) => *inter.entry((g, q)).or_default() += 1,
                None => s.void_overlap += 1,
            }
        }
    }
    let mut out = PanopticMatch {
        per_class: vec![PqCounts::default(); spec.num_classes() as usize + 1],
        pairs: Vec::new(),
    };
    let mut gt_matched = BTreeMap::new();
    let mut pred_matched = BTreeMap::new();
    for (&(g, q), &n) in &inter {
        let (gs, ps) = (&gts[&g], &preds[&q]);
        if gs.class != ps.class {
            continue;
        }
        let union = gs.area + ps.area - n - ps.void_overlap;
        let iou = n as f64 / union as f64;
        if iou > MATCH_IOU {
            // IoU above one half makes matches unique.
            assert!(gt_matched.insert(g, q).is_none() && pred_matched.insert(q, g).is_none());
            let c = &mut out.per_class[gs.class as usize];
            c.tp += 1;
            c.iou_sum += iou;
            let id = |s: Segment| match s {
                Segment::Thing(_, i) => i,
                Segment::Stuff(_) => 0,
            };
            out.pairs.push(MatchedPair {
                class: gs.class,
                gt_instance: id(g),
                pred_instance: id(q),
                iou,
            });
        }
    }
    for (g, s) in &gts {
        if !gt_matched.contains_key(g) {
            out.per_class[s.class as usize].fn_ += 1;
        }
    }
    for (q, s) in &preds {
        if !pred_matched.contains_key(q) && s.void_overlap * 2 <= s.area {
            out.per_class[s.class as usize].fp += 1;
        }
    }
    Ok(out)
}

/// Percent summary of accumulated per-class counters.
pub fn summarize(per_class: &[PqCounts], spec: &ThingStuffSpec) -> PqSummary {
    let pct = |(pq, sq, rq): (f64, f64, f64)| Pq {
        pq: 100.0 * pq,
        sq: 100.0 * sq,
        rq: 100.0 * rq,
    };
    let mean = |filter: &dyn Fn(u32) -> bool| {
        let qs: Vec<_> = per_class
            .iter()
            .enumerate()
            .filter(|&(c, _)| c as u32 != VOID && filter(c as u32))
            .filter_map(|(_, k)| k.quality())
            .collect();
        (!qs.is_empty()).then(|| {
            let n = qs.len() as f64;
            let s = qs.iter().fold((0.0, 0.0, 0.0), |a, q| (a.0 + q.0, a.1 + q.1, a.2 + q.2));
            pct((s.0 / n, s.1 / n, s.2 / n))
        })
    };
    let mut pooled = PqCounts::default();
    for k in per_class.iter().skip(1) {
        pooled.merge(k);
    }
    PqSummary {
        all: mean(&|_| true),
        things: mean(&|c| spec.is_thing(c)),
        stuff: mean(&|c| spec.is_stuff(c)),
        pooled: pooled.quality().map(pct),
        per_class: per_class
            .iter()
            .enumerate()
            .map(|(c, k)| if c as u32 == VOID { None } else { k.quality().map(pct) })
            .collect(),
    }
}

/// PQ, SQ and RQ of a single image pair.
pub fn panoptic_quality(pred: &PanopticMap, gt: &PanopticMap, spec: &ThingStuffSpec) -> Result<PqSummary> {
    Ok(summarize(&match_segments(pred, gt, spec)?.per_class, spec))
}
