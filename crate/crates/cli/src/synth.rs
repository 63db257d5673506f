//! Synthetic RGB-D scenes with ground truth, in the dataset layout read by `evaluate`.

use std::path::Path;

use emsaformer_core::panoptic::{Grid, InstanceInfo, LabelMap, PanopticMap, ThingStuffSpec, LABEL_DIVISOR};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CliError, CliResult};
use crate::io::{palette_color, write_json, write_rgb, write_scene, write_semantic, write_u16, InstancesFile, RgbImage};

#[derive(Clone, Debug)]
pub struct SynthOptions {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    pub num_scene_classes: usize,
}

/// One generated sample.
pub struct Sample {
    pub rgb: RgbImage,
    pub depth: Grid<u16>,
    pub panoptic: PanopticMap,
    pub scene: usize,
}

pub fn sample(rng: &mut ChaCha8Rng, h: usize, w: usize, spec: &ThingStuffSpec, num_scene: usize) -> Sample {
    let stuff: Vec<u32> = spec.stuff_class_ids().collect();
    let things: Vec<u32> = spec.thing_class_ids().collect();
    let horizon = rng.gen_range(h / 4..=h / 2);
    let mut semantic = LabelMap::from_fn(h, w, |y, _| if y < horizon { stuff[0] } else { stuff[1 % stuff.len()] });
    let mut instance = LabelMap::filled(h, w, 0);
    let mut depth = Grid::from_fn(h, w, |y, _| (4000 - (3000 * y / h.max(1))) as u16);
    let n = rng.gen_range(1..=4);
    let mut orientations = Vec::new();
    for k in 0..n {
        let class = things[rng.gen_range(0..things.len())];
        let (bh, bw) = (rng.gen_range(h / 8..=h / 3).max(2), rng.gen_range(w / 8..=w / 3).max(2));
        let (y0, x0) = (rng.gen_range(0..h - bh), rng.gen_range(0..w - bw));
        let near = rng.gen_range(600..2500u16);
        for y in y0..y0 + bh {
            for x in x0..x0 + bw {
                semantic.set(y, x, class);
                instance.set(y, x, k as u32 + 1);
                depth.set(y, x, near);
            }
        }
        orientations.push(rng.gen_range(0.0..360.0f64));
    }
    // A void strip along the bottom edge.
    for y in h - (h / 20).max(1)..h {
        for x in 0..w {
            semantic.set(y, x, 0);
            instance.set(y, x, 0);
        }
    }
    let mut rgb = Vec::with_capacity(h * w * 3);
    for (y, x, &c) in semantic.iter() {
        let base = palette_color(c as u8);
        let shade = depth.get(y, x) / 64;
        for v in base {
            let noise: i32 = rng.gen_range(-12..=12);
            rgb.push((v as i32 / 2 + 60 - shade as i32 / 2 + noise).clamp(0, 255) as u8);
        }
    }
    let mut instances: Vec<InstanceInfo> = Vec::new();
    for (k, deg) in orientations.into_iter().enumerate() {
        let id = k as u32 + 1;
        let pixels: Vec<(usize, usize)> =
            instance.iter().filter(|&(_, _, &i)| i == id).map(|(y, x, _)| (y, x)).collect();
        if pixels.is_empty() {
            continue;
        }
        let (y, x) = pixels[0];
        let n = pixels.len() as f64;
        instances.push(InstanceInfo {
            id,
            semantic_class: *semantic.get(y, x),
            center: (
                pixels.iter().map(|p| p.0 as f64).sum::<f64>() / n,
                pixels.iter().map(|p| p.1 as f64).sum::<f64>() / n,
            ),
            pixel_count: pixels.len(),
            orientation_deg: Some(deg),
            score: None,
            source_id: id,
        });
    }
    Sample {
        rgb: RgbImage { height: h, width: w, data: rgb },
        depth,
        panoptic: PanopticMap { semantic, instance_id: instance, instances },
        scene: rng.gen_range(0..num_scene),
    }
}

/// Writes `count` samples plus a `split.txt` manifest; returns the sample names.
pub fn write_dataset(dir: &Path, opts: &SynthOptions, spec: &ThingStuffSpec) -> CliResult<Vec<String>> {
    if opts.height < 32 || opts.width < 32 {
        return Err(CliError::Input("synthetic images must be at least 32x32".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut names = Vec::new();
    for i in 0..opts.count {
        let name = format!("sample_{i:04}");
        let d = dir.join(&name);
        std::fs::create_dir_all(&d).map_err(|e| CliError::Failed(format!("{}: {e}", d.display())))?;
        let s = sample(&mut rng, opts.height, opts.width, spec, opts.num_scene_classes);
        write_rgb(&d.join("rgb.png"), &s.rgb)?;
        write_u16(&d.join("depth.png"), &s.depth)?;
        write_semantic(&d.join("semantic.png"), &s.panoptic.semantic)?;
        let codes = Grid::from_fn(opts.height, opts.width, |y, x| {
            (*s.panoptic.semantic.get(y, x) * LABEL_DIVISOR + *s.panoptic.instance_id.get(y, x)) as u16
        });
        write_u16(&d.join("panoptic.png"), &codes)?;
        let file = InstancesFile {
            height: opts.height,
            width: opts.width,
            settings: Default::default(),
            instances: s.panoptic.instances.clone(),
        };
        write_json(&d.join("instances.json"), &file)?;
        write_scene(&d.join("scene.txt"), s.scene, &[])?;
        names.push(name);
    }
    let manifest = names.join("\n") + "\n";
    std::fs::write(dir.join("split.txt"), manifest).map_err(|e| CliError::Failed(e.to_string()))?;
    Ok(names)
}
