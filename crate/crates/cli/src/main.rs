use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use emsaformer_cli::bench::run_bench;
use emsaformer_cli::commands::{infer, init_weights, load_model, preset, settings_map, InferOptions};
use emsaformer_cli::eval::{evaluate_dataset, EvalOptions};
use emsaformer_cli::synth::{write_dataset, SynthOptions};
use emsaformer_cli::{CliError, CliResult};
use emsaformer_core::model_io::reference_init;
use emsaformer_core::oracle::property_driver;
use emsaformer_core::panoptic::PostprocessSettings;
use emsaformer_core::Model;

#[derive(Parser)]
#[command(name = "emsaformer", version, about = "RGB-D panoptic segmentation, orientation and scene classification")]
struct Cli {
    /// Worker threads; defaults to the number of available cores.
    #[arg(long, global = true, env = "EMSF_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct PostArgs {
    /// Minimum center heatmap score.
    #[arg(long, default_value_t = 0.1)]
    center_threshold: f32,
    /// Side of the center non-maximum suppression window (odd).
    #[arg(long, default_value_t = 7)]
    nms_kernel: usize,
    /// Maximum number of instance centers per image.
    #[arg(long, default_value_t = 64)]
    top_k: usize,
    /// Instances with fewer pixels are dropped.
    #[arg(long, default_value_t = 10)]
    min_instance_pixels: usize,
}

impl PostArgs {
    fn settings(&self) -> PostprocessSettings {
        PostprocessSettings {
            center_threshold: self.center_threshold,
            nms_kernel: self.nms_kernel,
            top_k: self.top_k,
            min_instance_pixels: self.min_instance_pixels,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Analyze one RGB-D frame and write semantic.png, panoptic.png, instances.json and scene.txt.
    Infer {
        #[arg(long)]
        weights: PathBuf,
        /// 8-bit RGB PNG.
        #[arg(long)]
        rgb: PathBuf,
        /// 16-bit depth PNG in millimetres.
        #[arg(long)]
        depth: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Expected encoder variant of the weight file.
        #[arg(long)]
        variant: Option<String>,
        #[command(flatten)]
        post: PostArgs,
    },
    /// Score a dataset split, either by running a model or from stored predictions.
    Evaluate {
        #[arg(long, required_unless_present = "predictions")]
        weights: Option<PathBuf>,
        #[arg(long)]
        dataset_dir: PathBuf,
        /// Text file with one sample directory name per line.
        #[arg(long)]
        split_manifest: PathBuf,
        /// JSON report destination; the text form goes to stdout.
        #[arg(long)]
        out: PathBuf,
        /// Directory of per-sample prediction folders in `infer` format.
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Take the foreground mask and instance classes from ground-truth semantics.
        #[arg(long, default_value_t = false)]
        gt_foreground: bool,
        /// Class set of stored predictions when no weights are given.
        #[arg(long, default_value = "swinv2-t-128-multi")]
        preset: String,
        #[command(flatten)]
        post: PostArgs,
    },
    /// Time the pipeline on a fixed synthetic frame.
    Bench {
        /// Weight file; without it the reference initialization of --preset is used.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, default_value = "tiny")]
        preset: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 480)]
        height: usize,
        #[arg(long, default_value_t = 640)]
        width: usize,
        #[arg(long, default_value_t = 20)]
        iters: usize,
        #[arg(long, default_value_t = 3)]
        warmup: usize,
        /// Print the report as JSON.
        #[arg(long, default_value_t = false)]
        json: bool,
        #[command(flatten)]
        post: PostArgs,
    },
    /// Write reference-initialized weights for a preset.
    InitWeights {
        /// `tiny` or an encoder variant name.
        #[arg(long, default_value = "swinv2-t-128-multi")]
        preset: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the oracle property checks.
    #[command(hide = true)]
    Selftest {
        /// Seed range `start..end`.
        #[arg(long, default_value = "0..100")]
        seeds: String,
        #[arg(long, default_value = "all")]
        property: String,
        /// Directory for failing-seed dumps.
        #[arg(long)]
        dump_dir: Option<PathBuf>,
    },
    /// Generate a synthetic dataset with ground truth.
    #[command(hide = true)]
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 96)]
        height: usize,
        #[arg(long, default_value_t = 128)]
        width: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "swinv2-t-128-multi")]
        preset: String,
    },
}

fn parse_range(s: &str) -> CliResult<std::ops::Range<u64>> {
    let bad = || CliError::Input(format!("seed range {s:?} is not start..end"));
    let (a, b) = s.split_once("..").ok_or_else(bad)?;
    let (a, b) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
    if a >= b {
        return Err(bad());
    }
    Ok(a..b)
}

fn run(command: Command, threads: usize) -> CliResult<()> {
    let echo = |post: &PostArgs| {
        let mut s = settings_map(&post.settings());
        s.insert("threads".into(), threads.to_string());
        s
    };
    match command {
        Command::Infer { weights, rgb, depth, out, variant, post } => {
            let opts = InferOptions { weights, rgb, depth, out, variant, settings: post.settings() };
            let a = infer(&opts, echo(&post))?;
            println!(
                "wrote {} ({} instances, scene {})",
                opts.out.display(),
                a.panoptic.instances.len(),
                a.scene_label
            );
        }
        Command::Evaluate { weights, dataset_dir, split_manifest, out, predictions, gt_foreground, preset: name, post } => {
            let model = if predictions.is_none() { weights.as_deref().map(|w| load_model(w, None)).transpose()? } else { None };
            let config = match &model {
                Some(m) => m.config.clone(),
                None => preset(&name)?,
            };
            let mut settings = echo(&post);
            settings.insert("gt_foreground".into(), gt_foreground.to_string());
            settings.insert("source".into(), if predictions.is_some() { "predictions" } else { "model" }.into());
            let opts = EvalOptions { dataset_dir, split_manifest, predictions, gt_foreground, settings: post.settings() };
            let report = evaluate_dataset(model.as_ref(), &config.thing_stuff(), config.num_scene_classes, &opts, settings)?;
            std::fs::write(&out, report.to_json() + "\n").map_err(|e| CliError::Failed(format!("{}: {e}", out.display())))?;
            print!("{}", report.to_text());
        }
        Command::Bench { weights, preset: name, seed, height, width, iters, warmup, json, post } => {
            let model = match &weights {
                Some(w) => load_model(w, None)?,
                None => {
                    let config = preset(&name)?;
                    Model::load(&config, &reference_init(&config, seed)?)?
                }
            };
            let mut settings: BTreeMap<String, String> = echo(&post);
            for (k, v) in [
                ("variant", model.config.encoder.variant.to_string()),
                ("weights", weights.as_ref().map_or(format!("reference:{name}:{seed}"), |w| w.display().to_string())),
                ("height", height.to_string()),
                ("width", width.to_string()),
                ("iters", iters.to_string()),
                ("warmup", warmup.to_string()),
            ] {
                settings.insert(k.into(), v);
            }
            let report = run_bench(&model, height, width, iters, warmup, &post.settings(), settings)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report).expect("serializable"));
            } else {
                print!("{}", report.to_text());
            }
        }
        Command::InitWeights { preset: name, seed, out } => {
            init_weights(&name, seed, &out)?;
            println!("wrote {}", out.display());
        }
        Command::Selftest { seeds, property, dump_dir } => {
            let report = property_driver(parse_range(&seeds)?, &property, dump_dir.as_deref())
                .map_err(|e| CliError::Input(e.to_string()))?;
            print!("{}", report.to_text());
            if !report.ok() {
                return Err(CliError::Failed(format!("{} property checks failed", report.failures.len())));
            }
        }
        Command::Synth { out, count, height, width, seed, preset: name } => {
            let config = preset(&name)?;
            let opts = SynthOptions { count, height, width, seed, num_scene_classes: config.num_scene_classes };
            let names = write_dataset(&out, &opts, &config.thing_stuff())?;
            println!("wrote {} samples to {}", names.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli.threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("emsaformer: cannot start {threads} threads: {e}");
            return ExitCode::from(1);
        }
    };
    match pool.install(|| run(cli.command, threads)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("emsaformer: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
