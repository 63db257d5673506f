use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::panoptic::LabelMap;

/// Square confusion matrix over label ids `0..n`; rows are ground truth.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    n: usize,
    counts: Vec<u64>,
}

impl Confusion {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            counts: vec![0; n * n],
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.n + pred]
    }

    /// Adds one observation; labels outside `0..n` are errors.
    pub fn add(&mut self, gt: u32, pred: u32) -> Result<()> {
        let (g, p) = (gt as usize, pred as usize);
        if g >= self.n || p >= self.n {
            return Err(config_err!("label pair ({gt}, {pred}) outside 0..{}", self.n));
        }
        self.counts[g * self.n + p] += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &Confusion) {
        assert_eq!(self.n, other.n, "merging confusion matrices of different sizes");
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Rows as nested vectors.
    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.n.max(1)).map(<[u64]>::to_vec).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiouResult {
    /// Percent; absent when no class occurs.
    pub miou: Option<f64>,
    /// Percent per label id; absent for the void id and for classes in
    /// neither ground truth nor prediction.
    pub per_class: Vec<Option<f64>>,
}

/// Pixelwise confusion of two label maps, skipping pixels whose ground truth is `void`.
pub fn confusion(pred: &LabelMap, gt: &LabelMap, num_labels: usize, void: Option<u32>) -> Result<Confusion> {
    if !pred.same_dims(gt) {
        return Err(config_err!(
            "prediction {}x{} and ground truth {}x{} differ",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        ));
    }
    let mut m = Confusion::new(num_labels);
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        if Some(g) != void {
            m.add(g, p)?;
        }
    }
    Ok(m)
}

/// Per-class IoU from a confusion matrix, averaged over classes present in
/// ground truth or prediction. Predictions of the void id count as misses.
pub fn miou_from_confusion(m: &Confusion, void: Option<u32>) -> MiouResult {
    let n = m.size();
    let mut per_class = vec![None; n];
    let mut sum = 0.0;
    let mut count = 0usize;
    for (c, slot) in per_class.iter_mut().enumerate() {
        if Some(c as u32) == void {
            continue;
        }
        let tp = m.get(c, c);
        let row: u64 = (0..n).map(|p| m.get(c, p)).sum();
        let col: u64 = (0..n).map(|g| m.get(g, c)).sum();
        let union = row + col - tp;
        if union > 0 {
            let iou = 100.0 * tp as f64 / union as f64;
            *slot = Some(iou);
            sum += iou;
            count += 1;
        }
    }
    MiouResult {
        miou: (count > 0).then(|| sum / count as f64),
        per_class,
    }
}

/// mIoU of a single pair of maps over labels `0..num_labels`.
pub fn miou(pred: &LabelMap, gt: &LabelMap, num_labels: usize, void: Option<u32>) -> Result<MiouResult> {
    Ok(miou_from_confusion(&confusion(pred, gt, num_labels, void)?, void))
}
