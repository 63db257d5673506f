//! Bottom-up panoptic post-processing: center extraction, offset grouping,
//! semantic-instance merging and per-instance orientation.

mod centers;
mod grid;
mod grouping;
mod merge;

pub use centers::{extract_centers, Center};
pub use grid::{Grid, LabelMap, Mask};
pub use grouping::group_pixels;
pub use merge::{aggregate_orientation, gt_foreground_mode, merge_panoptic, predicted_foreground, Foreground};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::tensor::Tensor;

/// Class id of unlabeled pixels.
pub const VOID: u32 = 0;
/// Multiplier of the class in the `class * 1000 + instance` encoding.
pub const LABEL_DIVISOR: u32 = 1000;

/// Partition of class ids `1..=num_classes` into stuff and things; 0 is void.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ThingStuffSpec {
    num_classes: u32,
    stuff: BTreeSet<u32>,
}

impl ThingStuffSpec {
    /// Stuff ids outside `1..=num_classes` are ignored.
    pub fn new(num_classes: u32, stuff: &[u32]) -> Self {
        Self {
            num_classes,
            stuff: stuff.iter().copied().filter(|&c| c != VOID && c <= num_classes).collect(),
        }
    }

    pub fn num_classes(&self) -> u32 {
        self.num_classes
    }

    pub fn void_id(&self) -> u32 {
        VOID
    }

    pub fn is_stuff(&self, class: u32) -> bool {
        self.stuff.contains(&class)
    }

    pub fn is_thing(&self, class: u32) -> bool {
        class != VOID && class <= self.num_classes && !self.stuff.contains(&class)
    }

    pub fn stuff_class_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.stuff.iter().copied()
    }

    pub fn thing_class_ids(&self) -> impl Iterator<Item = u32> + '_ {
        (1..=self.num_classes).filter(|c| !self.stuff.contains(c))
    }
}

/// Tunable post-processing knobs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PostprocessSettings {
    pub center_threshold: f32,
    pub nms_kernel: usize,
    pub top_k: usize,
    pub min_instance_pixels: usize,
}

impl Default for PostprocessSettings {
    fn default() -> Self {
        Self {
            center_threshold: 0.1,
            nms_kernel: 7,
            top_k: 64,
            min_instance_pixels: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceInfo {
    /// Dense id in `1..=K`.
    pub id: u32,
    pub semantic_class: u32,
    /// Center of mass `(y, x)` of the instance pixels.
    pub center: (f64, f64),
    pub pixel_count: usize,
    pub orientation_deg: Option<f64>,
    /// Heatmap score of the seeding center, when the instance came from one.
    pub score: Option<f32>,
    /// Id of the instance in the map that was merged.
    #[serde(skip)]
    pub source_id: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PanopticMap {
    pub semantic: LabelMap,
    /// 0 means no instance.
    pub instance_id: LabelMap,
    pub instances: Vec<InstanceInfo>,
}

impl PanopticMap {
    pub fn height(&self) -> usize {
        self.semantic.height()
    }

    pub fn width(&self) -> usize {
        self.semantic.width()
    }

    pub fn instance(&self, id: u32) -> Option<&InstanceInfo> {
        id.checked_sub(1).and_then(|i| self.instances.get(i as usize))
    }

    /// Per-pixel `class * 1000 + instance`.
    pub fn encode(&self) -> Result<Grid<u16>> {
        let data = self
            .semantic
            .data()
            .iter()
            .zip(self.instance_id.data())
            .map(|(&c, &i)| {
                if i >= LABEL_DIVISOR {
                    return Err(config_err!("instance id {i} does not fit the panoptic encoding"));
                }
                u16::try_from(c * LABEL_DIVISOR + i).map_err(|_| config_err!("class {c} does not fit the panoptic encoding"))
            })
            .collect::<Result<Vec<_>>>()?;
        Grid::new(self.height(), self.width(), data)
    }

    /// Rebuilds a map from `class * 1000 + instance` codes.
    ///
    /// Distinct codes with a nonzero instance part become instances with
    /// dense ids in ascending code order. Instances of stuff classes are
    /// dropped; orientations are left absent.
    pub fn decode(codes: &Grid<u16>, spec: &ThingStuffSpec) -> Result<PanopticMap> {
        let mut ids = BTreeMap::new();
        for &code in codes.data() {
            let (c, i) = (code as u32 / LABEL_DIVISOR, code as u32 % LABEL_DIVISOR);
            if c > spec.num_classes() {
                return Err(config_err!("panoptic code {code} has class {c} > {}", spec.num_classes()));
            }
            if i > 0 && spec.is_thing(c) {
                ids.entry(code).or_insert(0u32);
            }
        }
        for (n, v) in ids.values_mut().enumerate() {
            *v = n as u32 + 1;
        }
        let (h, w) = (codes.height(), codes.width());
        let semantic = codes.map(|&code| code as u32 / LABEL_DIVISOR);
        let instance_id = codes.map(|code| ids.get(code).copied().unwrap_or(0));
        let mut instances: Vec<InstanceInfo> = ids
            .iter()
            .map(|(&code, &id)| InstanceInfo {
                id,
                semantic_class: code as u32 / LABEL_DIVISOR,
                center: (0.0, 0.0),
                pixel_count: 0,
                orientation_deg: None,
                score: None,
                source_id: code as u32 % LABEL_DIVISOR,
            })
            .collect();
        accumulate_centroids(&instance_id, &mut instances);
        debug_assert_eq!((semantic.height(), semantic.width()), (h, w));
        Ok(PanopticMap {
            semantic,
            instance_id,
            instances,
        })
    }
}

/// Fills `pixel_count` and `center` of dense-id instances from an id map.
pub(crate) fn accumulate_centroids(instance_id: &LabelMap, instances: &mut [InstanceInfo]) {
    let mut sums = vec![(0usize, 0f64, 0f64); instances.len()];
    for (y, x, &id) in instance_id.iter() {
        if id > 0 {
            let s = &mut sums[id as usize - 1];
            s.0 += 1;
            s.1 += y as f64;
            s.2 += x as f64;
        }
    }
    for (inst, (n, sy, sx)) in instances.iter_mut().zip(sums) {
        inst.pixel_count = n;
        inst.center = if n > 0 { (sy / n as f64, sx / n as f64) } else { (0.0, 0.0) };
    }
}

/// Height and width of a single-image dense map with `channels` channels.
/// Accepts `[H, W, C]`, `[1, H, W, C]` and, for one channel, `[H, W]`.
pub fn plane_dims(t: &Tensor, channels: usize) -> Result<(usize, usize)> {
    match *t.shape() {
        [h, w] if channels == 1 => Ok((h, w)),
        [h, w, c] | [1, h, w, c] if c == channels => Ok((h, w)),
        _ => Err(config_err!("expected a single-image map with {channels} channels, got shape {:?}", t.shape())),
    }
}

/// Per-pixel argmax of `[H, W, N]` logits as class ids `1..=N`; ties go to
/// the lower class.
pub fn semantic_argmax(logits: &Tensor) -> Result<LabelMap> {
    let n = logits.channels();
    let (h, w) = plane_dims(logits, n)?;
    let data = logits
        .data()
        .chunks_exact(n)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best as u32 + 1
        })
        .collect();
    Grid::new(h, w, data)
}

/// Single-image network outputs consumed by [`postprocess`].
pub struct DenseMaps<'a> {
    pub semantic: &'a LabelMap,
    pub heatmap: &'a Tensor,
    pub offsets: &'a Tensor,
    pub orientation: &'a Tensor,
}

/// Full bottom-up pipeline for one image. With `gt_semantic` the foreground
/// mask and instance classes come from ground truth instead of the prediction.
pub fn postprocess(
    maps: &DenseMaps<'_>,
    spec: &ThingStuffSpec,
    settings: &PostprocessSettings,
    gt_semantic: Option<&LabelMap>,
) -> Result<PanopticMap> {
    let fg = match gt_semantic {
        Some(gt) => gt_foreground_mode(gt, spec),
        None => predicted_foreground(maps.semantic, spec),
    };
    let centers = extract_centers(maps.heatmap, settings.center_threshold, settings.nms_kernel, settings.top_k)?;
    let grouped = group_pixels(&centers, maps.offsets, &fg.mask)?;
    let mut pan = merge_panoptic(&fg.classes, &grouped, spec, settings.min_instance_pixels)?;
    if gt_semantic.is_some() {
        // Non-instance pixels keep the predicted semantic labels.
        for ((s, &i), &p) in pan.semantic.data_mut().iter_mut().zip(pan.instance_id.data()).zip(maps.semantic.data()) {
            if i == 0 {
                *s = p;
            }
        }
    }
    for inst in &mut pan.instances {
        inst.score = centers.get(inst.source_id as usize - 1).map(|c| c.score);
    }
    aggregate_orientation(maps.orientation, &pan)
}
