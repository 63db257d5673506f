//! Dataset evaluation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use emsaformer_core::metrics::{evaluate_image, EvalAccumulator, EvalReport, ImageEval, ImageGroundTruth, ImagePrediction};
use emsaformer_core::panoptic::{PostprocessSettings, ThingStuffSpec};
use emsaformer_core::{ImageAnalysis, Model};
use rayon::prelude::*;

use crate::error::{input, CliError, CliResult};
use crate::io::{read_labels, read_panoptic, read_rgb, read_scene, read_u16};

/// Sample names, one per line; blank lines and `#` comments are ignored.
pub fn read_manifest(path: &Path) -> CliResult<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(input(path.display()))?;
    let names: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect();
    if names.is_empty() {
        return Err(CliError::Input(format!("{}: split manifest lists no samples", path.display())));
    }
    Ok(names)
}

fn optional(dir: &Path, name: &str) -> Option<PathBuf> {
    let p = dir.join(name);
    p.exists().then_some(p)
}

/// Ground truth of a sample directory. Missing files disable their metric.
pub fn load_ground_truth(dir: &Path, spec: &ThingStuffSpec) -> CliResult<ImageGroundTruth> {
    let semantic = optional(dir, "semantic.png").map(|p| read_labels(&p)).transpose()?;
    let panoptic = optional(dir, "panoptic.png")
        .map(|p| read_panoptic(&p, optional(dir, "instances.json").as_deref(), spec))
        .transpose()?;
    let scene = optional(dir, "scene.txt").map(|p| read_scene(&p)).transpose()?;
    Ok(ImageGroundTruth { semantic, panoptic, scene })
}

/// Predictions written by `infer` (or any directory in the same format).
pub fn load_prediction(dir: &Path, spec: &ThingStuffSpec) -> CliResult<ImagePrediction> {
    let sem_path = dir.join("semantic.png");
    let semantic = read_labels(&sem_path)?;
    let panoptic = read_panoptic(&dir.join("panoptic.png"), optional(dir, "instances.json").as_deref(), spec)?;
    if !panoptic.semantic.same_dims(&semantic) {
        return Err(CliError::Input(format!("{}: semantic and panoptic sizes differ", dir.display())));
    }
    let scene = optional(dir, "scene.txt").map(|p| read_scene(&p)).transpose()?;
    Ok(ImagePrediction { semantic, panoptic, scene })
}

/// Reads `rgb.png` and, when present, `depth.png` and runs the model.
pub fn predict_sample(
    model: &Model,
    rgb: &Path,
    depth: Option<&Path>,
    settings: &PostprocessSettings,
    gt_semantic: Option<&emsaformer_core::panoptic::LabelMap>,
) -> CliResult<ImageAnalysis> {
    let img = read_rgb(rgb)?;
    let depth_mm = match depth {
        Some(p) => {
            let d = read_u16(p)?;
            if (d.height(), d.width()) != (img.height, img.width) {
                return Err(CliError::Input(format!(
                    "depth is {}x{} but rgb is {}x{}",
                    d.width(),
                    d.height(),
                    img.width,
                    img.height
                )));
            }
            Some(d.into_data())
        }
        None => None,
    };
    if depth_mm.is_none() && model.config.encoder.variant.uses_depth() {
        return Err(CliError::Input(format!("variant {} needs a depth image", model.config.encoder.variant)));
    }
    let (rgb_t, depth_t) = model.preprocess(&img.data, depth_mm.as_deref(), img.height, img.width)?;
    let depth_t = depth_t.filter(|_| model.config.encoder.variant.uses_depth());
    Ok(model.analyze(&rgb_t, depth_t.as_ref(), settings, gt_semantic)?.0)
}

pub struct EvalOptions {
    pub dataset_dir: PathBuf,
    pub split_manifest: PathBuf,
    /// Score stored predictions instead of running a model.
    pub predictions: Option<PathBuf>,
    pub gt_foreground: bool,
    pub settings: PostprocessSettings,
}

fn evaluate_one(
    name: &str,
    model: Option<&Model>,
    spec: &ThingStuffSpec,
    num_scene: usize,
    opts: &EvalOptions,
) -> CliResult<ImageEval> {
    let dir = opts.dataset_dir.join(name);
    if !dir.is_dir() {
        return Err(CliError::Input(format!("{} is not a directory", dir.display())));
    }
    let gt = load_ground_truth(&dir, spec)?;
    let pred = match (&opts.predictions, model) {
        (Some(p), _) => load_prediction(&p.join(name), spec)?,
        (None, Some(model)) => {
            let gt_sem = if opts.gt_foreground {
                Some(gt.semantic.as_ref().ok_or_else(|| CliError::Input("no semantic ground truth for --gt-foreground".into()))?)
            } else {
                None
            };
            let a = predict_sample(model, &dir.join("rgb.png"), optional(&dir, "depth.png").as_deref(), &opts.settings, gt_sem)?;
            ImagePrediction { semantic: a.semantic, panoptic: a.panoptic, scene: Some(a.scene_label) }
        }
        (None, None) => return Err(CliError::Input("either weights or a prediction directory is required".into())),
    };
    Ok(evaluate_image(&pred, &gt, spec, num_scene)?)
}

/// Scores every sample of the manifest. Images are processed in parallel and
/// accumulated in manifest order, so the report does not depend on the
/// thread count. Malformed samples are skipped with a warning.
pub fn evaluate_dataset(
    model: Option<&Model>,
    spec: &ThingStuffSpec,
    num_scene: usize,
    opts: &EvalOptions,
    settings: BTreeMap<String, String>,
) -> CliResult<EvalReport> {
    let names = read_manifest(&opts.split_manifest)?;
    let results: Vec<CliResult<ImageEval>> =
        names.par_iter().map(|n| evaluate_one(n, model, spec, num_scene, opts)).collect();
    let mut acc = EvalAccumulator::new(spec, num_scene);
    for (name, r) in names.iter().zip(results) {
        match r {
            Ok(e) => acc.add(name, &e),
            Err(e) => acc.skip(name, &e.to_string()),
        }
    }
    Ok(acc.report(settings))
}
