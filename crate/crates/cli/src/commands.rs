use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use emsaformer_core::encoder::EncoderVariant;
use emsaformer_core::model_io::{self, reference_init, ModelConfig};
use emsaformer_core::panoptic::PostprocessSettings;
use emsaformer_core::{ImageAnalysis, Model};

use crate::error::{CliError, CliResult};
use crate::eval::predict_sample;
use crate::io::{write_json, write_scene, write_semantic, write_u16, InstancesFile};

/// Loads and validates a weight file, optionally checking its variant.
pub fn load_model(weights: &Path, variant: Option<&str>) -> CliResult<Model> {
    let (config, store) = model_io::load(weights).map_err(|e| CliError::Weights(format!("{}: {e}", weights.display())))?;
    if let Some(name) = variant {
        let v = EncoderVariant::parse(name).ok_or_else(|| CliError::Input(format!("unknown variant {name:?}")))?;
        if v != config.encoder.variant {
            return Err(CliError::Weights(format!(
                "{} holds {} weights, not {v}",
                weights.display(),
                config.encoder.variant
            )));
        }
    }
    Model::load(&config, &store).map_err(|e| CliError::Weights(e.to_string()))
}

/// Post-processing knobs as report settings.
pub fn settings_map(s: &PostprocessSettings) -> BTreeMap<String, String> {
    BTreeMap::from([
        ("center_threshold".to_string(), s.center_threshold.to_string()),
        ("nms_kernel".to_string(), s.nms_kernel.to_string()),
        ("top_k".to_string(), s.top_k.to_string()),
        ("min_instance_pixels".to_string(), s.min_instance_pixels.to_string()),
    ])
}

pub struct InferOptions {
    pub weights: PathBuf,
    pub rgb: PathBuf,
    pub depth: Option<PathBuf>,
    pub out: PathBuf,
    pub variant: Option<String>,
    pub settings: PostprocessSettings,
}

/// Writes `semantic.png`, `panoptic.png`, `instances.json` and `scene.txt`.
pub fn write_artifacts(out: &Path, a: &ImageAnalysis, settings: BTreeMap<String, String>) -> CliResult<()> {
    std::fs::create_dir_all(out).map_err(|e| CliError::Failed(format!("{}: {e}", out.display())))?;
    write_semantic(&out.join("semantic.png"), &a.semantic)?;
    write_u16(&out.join("panoptic.png"), &a.panoptic.encode()?)?;
    let instances = InstancesFile {
        height: a.semantic.height(),
        width: a.semantic.width(),
        settings,
        instances: a.panoptic.instances.clone(),
    };
    write_json(&out.join("instances.json"), &instances)?;
    write_scene(&out.join("scene.txt"), a.scene_label, &a.scene_logits)
}

pub fn infer(opts: &InferOptions, mut settings: BTreeMap<String, String>) -> CliResult<ImageAnalysis> {
    let model = load_model(&opts.weights, opts.variant.as_deref())?;
    if opts.depth.is_none() && model.config.encoder.variant.uses_depth() {
        return Err(CliError::Input(format!("variant {} needs --depth", model.config.encoder.variant)));
    }
    let a = predict_sample(&model, &opts.rgb, opts.depth.as_deref(), &opts.settings, None)?;
    settings.insert("variant".into(), model.config.encoder.variant.to_string());
    write_artifacts(&opts.out, &a, settings)?;
    Ok(a)
}

/// Named configuration: `tiny` or an encoder variant.
pub fn preset(name: &str) -> CliResult<ModelConfig> {
    ModelConfig::preset(name).ok_or_else(|| {
        let names: Vec<&str> = EncoderVariant::ALL.iter().map(|v| v.name()).collect();
        CliError::Input(format!("unknown preset {name:?}; expected tiny or one of {}", names.join(", ")))
    })
}

pub fn init_weights(name: &str, seed: u64, out: &Path) -> CliResult<()> {
    let config = preset(name)?;
    let store = reference_init(&config, seed)?;
    model_io::save(out, &config, &store).map_err(|e| CliError::Failed(format!("{}: {e}", out.display())))
}
