use super::semantic::Confusion;

/// Absolute angular difference in degrees with wraparound, in `[0, 180]`.
pub fn angular_error(pred_deg: f64, gt_deg: f64) -> f64 {
    let d = (pred_deg - gt_deg).rem_euclid(360.0);
    d.min(360.0 - d)
}

/// Mean absolute angular error over `(pred, gt)` pairs; absent without pairs.
pub fn maae(pairs: &[(f64, f64)]) -> Option<f64> {
    if pairs.is_empty() {
        return None;
    }
    Some(pairs.iter().map(|&(p, g)| angular_error(p, g)).sum::<f64>() / pairs.len() as f64)
}

/// Mean per-class recall in percent over classes with at least one sample.
pub fn balanced_accuracy_from_confusion(m: &Confusion) -> Option<f64> {
    let n = m.size();
    let mut sum = 0.0;
    let mut count = 0;
    for c in 0..n {
        let support: u64 = (0..n).map(|p| m.get(c, p)).sum();
        if support > 0 {
            sum += m.get(c, c) as f64 / support as f64;
            count += 1;
        }
    }
    (count > 0).then(|| 100.0 * sum / count as f64)
}

/// Balanced accuracy of scene labels in `0..num_classes`.
/// Labels out of range count as wrong predictions or are ignored (ground truth).
pub fn balanced_accuracy(pred: &[usize], gt: &[usize], num_classes: usize) -> Option<f64> {
    let mut m = Confusion::new(num_classes + 1);
    for (&p, &g) in pred.iter().zip(gt) {
        if g < num_classes {
            m.add(g as u32, p.min(num_classes) as u32).expect("in range");
        }
    }
    balanced_accuracy_from_confusion(&m)
}
