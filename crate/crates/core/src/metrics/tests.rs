use rand::Rng;

use super::*;
use crate::panoptic::{merge_panoptic, Grid};
use crate::testutil::rng;

const CHAIR: u32 = 5;
const TABLE: u32 = 7;
const WALL: u32 = 1;
const FLOOR: u32 = 2;

fn nyu() -> ThingStuffSpec {
    ThingStuffSpec::new(40, &[1, 2, 22])
}

fn map(h: usize, w: usize, v: &[u32]) -> LabelMap {
    Grid::new(h, w, v.to_vec()).unwrap()
}

fn pan(sem: LabelMap, inst: LabelMap) -> PanopticMap {
    merge_panoptic(&sem, &inst, &nyu(), 1).unwrap()
}

#[test]
fn miou_hand_cases() {
    let gt = map(2, 2, &[0, 0, 0, 1]);
    assert_eq!(miou(&gt, &gt, 2, None).unwrap().miou, Some(100.0));
    let pred = map(2, 2, &[0, 0, 0, 0]);
    let r = miou(&pred, &gt, 2, None).unwrap();
    assert_eq!(r.per_class, [Some(75.0), Some(0.0)]);
    assert_eq!(r.miou, Some(37.5));
    let disjoint = map(2, 2, &[1, 1, 1, 0]);
    assert_eq!(miou(&disjoint, &gt, 2, None).unwrap().miou, Some(0.0));
}

#[test]
fn miou_excludes_void_and_absent_classes() {
    let gt = map(1, 4, &[0, 3, 3, 4]);
    let pred = map(1, 4, &[9, 3, 3, 0]);
    let r = miou(&pred, &gt, 10, Some(0)).unwrap();
    assert_eq!(r.per_class[0], None);
    assert_eq!(r.per_class[9], None);
    assert_eq!(r.per_class[3], Some(100.0));
    assert_eq!(r.per_class[4], Some(0.0));
    assert_eq!(r.miou, Some(50.0));
    let all_void = map(1, 2, &[0, 0]);
    assert_eq!(miou(&pred.clone(), &map(1, 4, &[0; 4]), 10, Some(0)).unwrap().miou, None);
    assert!(miou(&all_void, &gt, 10, Some(0)).is_err());
    assert!(miou(&map(1, 4, &[0, 11, 0, 0]), &gt, 10, Some(0)).is_err());
}

#[test]
fn confusion_miou_equals_set_arithmetic() {
    let mut r = rng(4);
    for _ in 0..50 {
        let n = 6;
        let gt = LabelMap::from_fn(9, 7, |_, _| r.gen_range(0..n));
        let pred = LabelMap::from_fn(9, 7, |_, _| r.gen_range(0..n));
        let got = miou(&pred, &gt, n as usize, Some(0)).unwrap();
        let mut ious = Vec::new();
        for c in 1..n {
            let valid = |i: usize| gt.data()[i] != 0;
            let inter = (0..63).filter(|&i| valid(i) && gt.data()[i] == c && pred.data()[i] == c).count();
            let union = (0..63).filter(|&i| valid(i) && (gt.data()[i] == c || pred.data()[i] == c)).count();
            if union > 0 {
                ious.push(100.0 * inter as f64 / union as f64);
            }
        }
        let want = ious.iter().sum::<f64>() / ious.len() as f64;
        assert!((got.miou.unwrap() - want).abs() < 1e-9);
    }
}

#[test]
fn pq_hand_cases() {
    let gt = pan(LabelMap::filled(1, 10, CHAIR), LabelMap::filled(1, 10, 1));
    let full = panoptic_quality(&gt, &gt, &nyu()).unwrap().all.unwrap();
    assert_eq!((full.pq, full.sq, full.rq), (100.0, 100.0, 100.0));

    let sem = map(1, 10, &[CHAIR, CHAIR, CHAIR, CHAIR, CHAIR, CHAIR, 0, 0, 0, 0]);
    let pred = pan(sem, LabelMap::filled(1, 10, 1));
    let q = panoptic_quality(&pred, &gt, &nyu()).unwrap();
    let a = q.all.unwrap();
    assert_eq!((a.pq, a.sq, a.rq), (60.0, 60.0, 100.0));
    assert_eq!(q.stuff, None);

    let empty = pan(LabelMap::filled(1, 10, 0), LabelMap::filled(1, 10, 0));
    let q = panoptic_quality(&empty, &gt, &nyu()).unwrap().all.unwrap();
    assert_eq!((q.pq, q.rq), (0.0, 0.0));
}

#[test]
fn pq_counts_fp_fn_and_stuff() {
    // gt: wall row, two chairs. pred: wall row, one chair matched, one table FP.
    let gt_sem = map(3, 4, &[WALL, WALL, WALL, WALL, CHAIR, CHAIR, CHAIR, CHAIR, CHAIR, CHAIR, FLOOR, FLOOR]);
    let gt_inst = map(3, 4, &[0, 0, 0, 0, 1, 1, 2, 2, 2, 2, 0, 0]);
    let pr_sem = map(3, 4, &[WALL, WALL, WALL, WALL, CHAIR, CHAIR, TABLE, TABLE, TABLE, TABLE, WALL, WALL]);
    let pr_inst = map(3, 4, &[0, 0, 0, 0, 3, 3, 4, 4, 4, 4, 0, 0]);
    let m = match_segments(&pan(pr_sem, pr_inst), &pan(gt_sem, gt_inst), &nyu()).unwrap();
    let c = |k: u32| m.per_class[k as usize];
    assert_eq!((c(CHAIR).tp, c(CHAIR).fp, c(CHAIR).fn_), (1, 0, 1));
    assert_eq!((c(TABLE).tp, c(TABLE).fp, c(TABLE).fn_), (0, 1, 0));
    assert_eq!((c(WALL).tp, c(WALL).fp), (1, 0));
    assert!((c(WALL).iou_sum - 4.0 / 6.0).abs() < 1e-12);
    assert_eq!((c(FLOOR).tp, c(FLOOR).fn_), (0, 1));
    assert_eq!(m.pairs.len(), 2);
}

#[test]
fn prediction_on_void_is_not_a_false_positive() {
    let gt = pan(map(1, 6, &[CHAIR, CHAIR, 0, 0, 0, 0]), map(1, 6, &[1, 1, 0, 0, 0, 0]));
    let pred = pan(map(1, 6, &[CHAIR, CHAIR, TABLE, TABLE, TABLE, CHAIR]), map(1, 6, &[1, 1, 2, 2, 2, 0]));
    let m = match_segments(&pred, &gt, &nyu()).unwrap();
    assert_eq!(m.per_class[TABLE as usize].fp, 0);
    assert_eq!(m.per_class[CHAIR as usize].tp, 1);
}

fn random_panoptic(r: &mut impl Rng, h: usize, w: usize) -> PanopticMap {
    // Up to six segments drawn from stuff classes and chair/table instances.
    let n = r.gen_range(1..=6);
    let kinds: Vec<(u32, u32)> = (0..n)
        .map(|k| match r.gen_range(0..4) {
            0 => (WALL, 0),
            1 => (FLOOR, 0),
            2 => (CHAIR, k + 1),
            _ => (TABLE, k + 1),
        })
        .collect();
    let cells: Vec<usize> = (0..h * w).map(|_| r.gen_range(0..=n as usize)).collect();
    let sem = LabelMap::new(h, w, cells.iter().map(|&c| if c == 0 { 0 } else { kinds[c - 1].0 }).collect()).unwrap();
    let inst = LabelMap::new(h, w, cells.iter().map(|&c| if c == 0 { 0 } else { kinds[c - 1].1 }).collect()).unwrap();
    pan(sem, inst)
}

/// Perturbs `gt` by overwriting a random block with a random segment.
fn perturb(r: &mut impl Rng, gt: &PanopticMap) -> PanopticMap {
    let (h, w) = (gt.height(), gt.width());
    let (mut sem, mut inst) = (gt.semantic.clone(), gt.instance_id.clone());
    for _ in 0..r.gen_range(0..4) {
        let (y0, x0) = (r.gen_range(0..h), r.gen_range(0..w));
        let (y1, x1) = (r.gen_range(y0..h) + 1, r.gen_range(x0..w) + 1);
        let (c, i) = [(CHAIR, 7), (TABLE, 8), (WALL, 0), (0, 0)][r.gen_range(0..4)];
        for y in y0..y1 {
            for x in x0..x1 {
                sem.set(y, x, c);
                inst.set(y, x, i);
            }
        }
    }
    pan(sem, inst)
}

#[test]
fn pq_equals_sq_times_rq() {
    let mut r = rng(77);
    let spec = nyu();
    for _ in 0..100 {
        let gt = random_panoptic(&mut r, 12, 14);
        let pred = perturb(&mut r, &gt);
        let m = match_segments(&pred, &gt, &spec).unwrap();
        for k in &m.per_class {
            if let Some((pq, sq, rq)) = k.quality() {
                assert!((pq - sq * rq).abs() <= 1e-9);
            }
        }
        let s = summarize(&m.per_class, &spec);
        let p = s.pooled.unwrap();
        assert!((p.pq - p.sq * p.rq / 100.0).abs() <= 1e-9 * 100.0);
        let a = s.all.unwrap();
        assert!(a.pq <= a.sq + 1e-9);
    }
}

#[test]
fn pq_invariant_to_instance_ids() {
    let mut r = rng(8);
    for _ in 0..30 {
        let gt = random_panoptic(&mut r, 10, 10);
        let pred = perturb(&mut r, &gt);
        let mut shuffled = pred.clone();
        let k = pred.instances.len() as u32;
        for v in shuffled.instance_id.data_mut() {
            if *v > 0 {
                *v = k + 1 - *v;
            }
        }
        shuffled.instances.reverse();
        for (n, i) in shuffled.instances.iter_mut().enumerate() {
            i.id = n as u32 + 1;
        }
        let a = match_segments(&pred, &gt, &nyu()).unwrap();
        let b = match_segments(&shuffled, &gt, &nyu()).unwrap();
        assert_eq!(a.per_class, b.per_class);
    }
}

#[test]
fn angular_hand_cases() {
    assert_eq!(angular_error(350.0, 10.0), 20.0);
    assert_eq!(maae(&[(12.0, 12.0), (200.0, 200.0)]), Some(0.0));
    assert_eq!(maae(&[(0.0, 90.0), (45.0, 45.0), (359.0, 1.0)]), Some(92.0 / 3.0));
    assert!((maae(&[(0.0, 90.0), (45.0, 45.0), (359.0, 1.0)]).unwrap() - 30.667).abs() < 5e-4);
    assert_eq!(maae(&[]), None);
    assert_eq!(angular_error(0.0, 180.0), 180.0);
}

#[test]
fn balanced_accuracy_hand_cases() {
    assert_eq!(balanced_accuracy(&[0, 1, 2], &[0, 1, 2], 3), Some(100.0));
    assert_eq!(balanced_accuracy(&[0, 1, 1, 1], &[0, 0, 1, 1], 2), Some(75.0));
    // Class 2 has no ground-truth sample and is excluded.
    assert_eq!(balanced_accuracy(&[0, 2, 1], &[0, 0, 1], 3), Some(75.0));
    assert_eq!(balanced_accuracy(&[], &[], 3), None);
}

fn sample(r: &mut impl Rng) -> (ImagePrediction, ImageGroundTruth) {
    let gt = random_panoptic(r, 8, 9);
    let mut pred = perturb(r, &gt);
    let mut gt = gt;
    for i in gt.instances.iter_mut().chain(pred.instances.iter_mut()) {
        i.orientation_deg = Some(r.gen_range(0.0..360.0));
    }
    (
        ImagePrediction {
            semantic: pred.semantic.clone(),
            panoptic: pred,
            scene: Some(r.gen_range(0..4)),
        },
        ImageGroundTruth {
            semantic: Some(gt.semantic.clone()),
            panoptic: Some(gt),
            scene: Some(r.gen_range(0..4)),
        },
    )
}

#[test]
fn accumulator_merge_is_associative() {
    let mut r = rng(3);
    let spec = nyu();
    let evals: Vec<ImageEval> = (0..9)
        .map(|_| {
            let (p, g) = sample(&mut r);
            evaluate_image(&p, &g, &spec, 4).unwrap()
        })
        .collect();
    let mut seq = EvalAccumulator::new(&spec, 4);
    for (i, e) in evals.iter().enumerate() {
        seq.add(&i.to_string(), e);
    }
    let mut parts: Vec<EvalAccumulator> = evals
        .chunks(3)
        .enumerate()
        .map(|(k, ch)| {
            let mut a = EvalAccumulator::new(&spec, 4);
            for (j, e) in ch.iter().enumerate() {
                a.add(&(3 * k + j).to_string(), e);
            }
            a
        })
        .collect();
    let mut tail = parts.pop().unwrap();
    let mut mid = parts.pop().unwrap();
    mid.merge(&tail);
    let mut merged = parts.pop().unwrap();
    merged.merge(&mid);
    let a = seq.report(Default::default());
    let b = merged.report(Default::default());
    assert_eq!(a.confusion, b.confusion);
    assert_eq!(a.per_image, b.per_image);
    assert!((a.miou.unwrap() - b.miou.unwrap()).abs() < 1e-9);
    assert!((a.panoptic.unwrap().all.unwrap().pq - b.panoptic.unwrap().all.unwrap().pq).abs() < 1e-9);
    assert_eq!(a.bacc, b.bacc);

    // Reordered images give the same counts.
    let mut rev = EvalAccumulator::new(&spec, 4);
    for (i, e) in evals.iter().enumerate().rev() {
        rev.add(&i.to_string(), e);
    }
    let c = rev.report(Default::default());
    assert_eq!(c.confusion, a.confusion);
    assert!((c.maae_deg.unwrap() - a.maae_deg.unwrap()).abs() < 1e-9);
    tail = EvalAccumulator::new(&spec, 4);
    assert_eq!(tail.report(Default::default()).miou, None);
}

#[test]
fn perfect_predictions_score_perfectly() {
    let mut r = rng(12);
    let spec = nyu();
    let mut acc = EvalAccumulator::new(&spec, 4);
    for i in 0..5 {
        let (_, g) = sample(&mut r);
        let p = ImagePrediction {
            semantic: g.semantic.clone().unwrap(),
            panoptic: g.panoptic.clone().unwrap(),
            scene: g.scene,
        };
        acc.add(&i.to_string(), &evaluate_image(&p, &g, &spec, 4).unwrap());
    }
    let rep = acc.report(Default::default());
    assert_eq!(rep.miou, Some(100.0));
    let pq = rep.panoptic.as_ref().unwrap().all.unwrap();
    assert_eq!((pq.pq, pq.sq, pq.rq), (100.0, 100.0, 100.0));
    assert_eq!(rep.maae_deg, Some(0.0));
    assert_eq!(rep.bacc, Some(100.0));
    let text = rep.to_text();
    assert!(text.contains("miou=100.00\n"));
    assert!(text.contains("pq=100.00\n"));
    assert!(text.contains("maae_deg=0.00\n"));
    let back: EvalReport = serde_json::from_str(&rep.to_json()).unwrap();
    assert_eq!(back, rep);
}

#[test]
fn missing_ground_truth_leaves_metrics_absent() {
    let spec = nyu();
    let p = pan(LabelMap::filled(2, 2, CHAIR), LabelMap::filled(2, 2, 1));
    let pred = ImagePrediction { semantic: p.semantic.clone(), panoptic: p, scene: Some(1) };
    let e = evaluate_image(&pred, &ImageGroundTruth::default(), &spec, 3).unwrap();
    let mut acc = EvalAccumulator::new(&spec, 3);
    acc.add("a", &e);
    acc.skip("b", "unreadable");
    let rep = acc.report(Default::default());
    assert_eq!((rep.miou, rep.maae_deg, rep.bacc), (None, None, None));
    assert!(rep.panoptic.is_none());
    assert_eq!((rep.images, rep.skipped), (1, 1));
    assert!(rep.to_text().contains("pq=absent\n"));
}
