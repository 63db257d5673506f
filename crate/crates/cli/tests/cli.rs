use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use emsaformer_cli::io::{read_labels, read_u16, read_rgb, write_rgb, write_u16, RgbImage};
use emsaformer_core::panoptic::Grid;
use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_emsaformer"));
    c.env_remove("EMSF_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new(preset: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let f = Self { dir };
        ok(&["init-weights", "--preset", preset, "--out", s(&f.weights())]);
        ok(&["synth", "--out", s(&f.data()), "--count", "3", "--height", "64", "--width", "80", "--preset", "tiny"]);
        f
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn weights(&self) -> PathBuf {
        self.path("w.emsf")
    }

    fn data(&self) -> PathBuf {
        self.path("data")
    }

    fn sample(&self, i: usize, file: &str) -> PathBuf {
        self.data().join(format!("sample_{i:04}")).join(file)
    }
}

#[test]
fn infer_writes_all_artifacts_at_input_size() {
    let f = Fixture::new("tiny");
    let (rgb, depth, out) = (f.path("rgb.png"), f.path("depth.png"), f.path("out"));
    let (h, w) = (480, 640);
    let img = RgbImage { height: h, width: w, data: (0..h * w * 3).map(|i| (i * 7 % 256) as u8).collect() };
    write_rgb(&rgb, &img).unwrap();
    write_u16(&depth, &Grid::from_fn(h, w, |y, x| (800 + y * 4 + x) as u16)).unwrap();
    ok(&["infer", "--weights", s(&f.weights()), "--rgb", s(&rgb), "--depth", s(&depth), "--out", s(&out)]);
    let sem = read_labels(&out.join("semantic.png")).unwrap();
    let pan = read_u16(&out.join("panoptic.png")).unwrap();
    assert_eq!((sem.height(), sem.width()), (h, w));
    assert_eq!((pan.height(), pan.width()), (h, w));
    let inst: Value = serde_json::from_str(&std::fs::read_to_string(out.join("instances.json")).unwrap()).unwrap();
    assert_eq!(inst["height"], h);
    for key in ["center_threshold", "nms_kernel", "top_k", "min_instance_pixels", "threads", "variant"] {
        assert!(inst["settings"][key].is_string(), "missing setting {key}");
    }
    for i in inst["instances"].as_array().unwrap() {
        for key in ["id", "semantic_class", "center", "pixel_count", "orientation_deg", "score"] {
            assert!(i.get(key).is_some(), "instance lacks {key}");
        }
    }
    let scene = std::fs::read_to_string(out.join("scene.txt")).unwrap();
    assert!(scene.starts_with("label "));
    assert_eq!(scene.lines().nth(1).unwrap().split_whitespace().count(), 11);
}

#[test]
fn depth_contract_and_exit_codes() {
    let f = Fixture::new("tiny");
    let rgb = f.sample(0, "rgb.png");
    let out = f.path("o");
    // Depth-requiring variant without depth.
    let r = run(&["infer", "--weights", s(&f.weights()), "--rgb", s(&rgb), "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(2));
    // Unreadable input.
    let r = run(&["infer", "--weights", s(&f.weights()), "--rgb", "/nonexistent.png", "--depth", s(&rgb), "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(2));
    // Dimension mismatch.
    let small = f.path("small.png");
    write_u16(&small, &Grid::filled(10, 10, 1000u16)).unwrap();
    let r = run(&["infer", "--weights", s(&f.weights()), "--rgb", s(&rgb), "--depth", s(&small), "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(2));
    // Corrupt weights.
    let bad = f.path("bad.emsf");
    let bytes = std::fs::read(f.weights()).unwrap();
    std::fs::write(&bad, &bytes[..bytes.len() / 2]).unwrap();
    let r = run(&["infer", "--weights", s(&bad), "--rgb", s(&rgb), "--depth", s(&f.sample(0, "depth.png")), "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(3));
    // Variant mismatch.
    let r = run(&[
        "infer", "--weights", s(&f.weights()), "--rgb", s(&rgb), "--depth", s(&f.sample(0, "depth.png")),
        "--out", s(&out), "--variant", "rgb-only",
    ]);
    assert_eq!(r.status.code(), Some(3));

    // An RGB-only model runs without depth.
    let rgb_only = f.path("rgb.emsf");
    ok(&["init-weights", "--preset", "tiny-rgb-only", "--out", s(&rgb_only)]);
    ok(&["infer", "--weights", s(&rgb_only), "--rgb", s(&rgb), "--out", s(&out), "--variant", "rgb-only"]);
    assert!(out.join("panoptic.png").exists());
}

#[test]
fn thread_count_does_not_change_outputs() {
    let f = Fixture::new("tiny");
    let (rgb, depth) = (f.sample(1, "rgb.png"), f.sample(1, "depth.png"));
    let mut pngs = Vec::new();
    for threads in ["1", "8"] {
        let out = f.path(&format!("t{threads}"));
        ok(&[
            "--threads", threads, "infer", "--weights", s(&f.weights()), "--rgb", s(&rgb), "--depth", s(&depth),
            "--out", s(&out), "--center-threshold", "0.0",
        ]);
        pngs.push(std::fs::read(out.join("panoptic.png")).unwrap());
    }
    assert_eq!(pngs[0], pngs[1]);
}

#[test]
fn env_var_sets_default_threads() {
    let f = Fixture::new("tiny");
    let out = f.path("o");
    let r = bin()
        .env("EMSF_THREADS", "2")
        .args(["infer", "--weights", s(&f.weights()), "--rgb", s(&f.sample(0, "rgb.png"))])
        .args(["--depth", s(&f.sample(0, "depth.png")), "--out", s(&out)])
        .output()
        .unwrap();
    assert!(r.status.success());
    let inst: Value = serde_json::from_str(&std::fs::read_to_string(out.join("instances.json")).unwrap()).unwrap();
    assert_eq!(inst["settings"]["threads"], "2");
}

fn report(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn self_evaluation_is_perfect() {
    let f = Fixture::new("tiny");
    let out = f.path("r.json");
    let text = ok(&[
        "evaluate", "--predictions", s(&f.data()), "--dataset-dir", s(&f.data()),
        "--split-manifest", s(&f.data().join("split.txt")), "--out", s(&out), "--preset", "tiny",
    ]);
    for line in ["miou=100.00", "pq=100.00", "sq=100.00", "rq=100.00", "maae_deg=0.00", "bacc=100.00"] {
        assert!(text.lines().any(|l| l == line), "missing {line} in\n{text}");
    }
    let r = report(&out);
    assert_eq!(r["images"], 3);
    assert_eq!(r["settings"]["source"], "predictions");
}

#[test]
fn evaluate_infer_outputs_and_thread_invariance() {
    let f = Fixture::new("tiny");
    let preds = f.path("preds");
    for i in 0..3 {
        ok(&[
            "infer", "--weights", s(&f.weights()), "--rgb", s(&f.sample(i, "rgb.png")),
            "--depth", s(&f.sample(i, "depth.png")), "--out", s(&preds.join(format!("sample_{i:04}"))),
        ]);
    }
    let manifest = f.data().join("split.txt");
    ok(&[
        "evaluate", "--predictions", s(&preds), "--dataset-dir", s(&f.data()),
        "--split-manifest", s(&manifest), "--out", s(&f.path("p.json")), "--preset", "tiny",
    ]);
    assert_eq!(report(&f.path("p.json"))["skipped"], 0);

    let mut reports = Vec::new();
    for threads in ["1", "4"] {
        let out = f.path(&format!("m{threads}.json"));
        ok(&[
            "--threads", threads, "evaluate", "--weights", s(&f.weights()), "--dataset-dir", s(&f.data()),
            "--split-manifest", s(&manifest), "--out", s(&out),
        ]);
        let mut r = report(&out);
        r["settings"].as_object_mut().unwrap().remove("threads");
        reports.push(r);
    }
    assert_eq!(reports[0], reports[1]);
    // Model predictions match the stored ones written by infer.
    let mut stored = report(&f.path("p.json"));
    stored["settings"] = Value::Null;
    reports[0]["settings"] = Value::Null;
    assert_eq!(stored, reports[0]);
}

#[test]
fn evaluate_gt_foreground_mode() {
    let f = Fixture::new("tiny");
    let out = f.path("g.json");
    ok(&[
        "evaluate", "--weights", s(&f.weights()), "--dataset-dir", s(&f.data()),
        "--split-manifest", s(&f.data().join("split.txt")), "--out", s(&out), "--gt-foreground",
    ]);
    assert_eq!(report(&out)["settings"]["gt_foreground"], "true");
}

#[test]
fn evaluate_skips_bad_samples_and_reports_absent_metrics() {
    let f = Fixture::new("tiny");
    let manifest = f.path("split.txt");
    std::fs::write(&manifest, "sample_0000\nmissing_sample\n# comment\n\nsample_0001\n").unwrap();
    std::fs::remove_file(f.sample(1, "scene.txt")).unwrap();
    std::fs::remove_file(f.sample(0, "scene.txt")).unwrap();
    std::fs::write(f.sample(1, "panoptic.png"), b"not a png").unwrap();
    let out = f.path("r.json");
    let text = ok(&[
        "evaluate", "--predictions", s(&f.data()), "--dataset-dir", s(&f.data()),
        "--split-manifest", s(&manifest), "--out", s(&out), "--preset", "tiny",
    ]);
    let r = report(&out);
    assert_eq!(r["images"], 1);
    assert_eq!(r["skipped"], 2);
    assert_eq!(r["warnings"].as_array().unwrap().len(), 2);
    assert!(r["bacc"].is_null());
    assert!(text.contains("bacc=absent"));

    let empty = f.path("empty.txt");
    std::fs::write(&empty, "\n# nothing\n").unwrap();
    let r = run(&[
        "evaluate", "--predictions", s(&f.data()), "--dataset-dir", s(&f.data()),
        "--split-manifest", s(&empty), "--out", s(&out), "--preset", "tiny",
    ]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn bench_reports_stage_rows() {
    let text = ok(&["bench", "--preset", "tiny", "--height", "48", "--width", "64", "--iters", "10"]);
    let rows: Vec<&str> = text.lines().skip(1).take(5).collect();
    let names: Vec<&str> = rows.iter().map(|r| r.split_whitespace().next().unwrap()).collect();
    assert_eq!(names, ["encoder", "context", "decoders", "postprocess", "total"]);
    assert!(text.contains("setting.iters=10"));

    let json: Value = serde_json::from_str(&ok(&[
        "bench", "--preset", "tiny", "--height", "48", "--width", "64", "--iters", "10", "--json",
    ]))
    .unwrap();
    assert_eq!(json["stages"].as_array().unwrap().len(), 4);
    for st in json["stages"].as_array().unwrap().iter().chain([&json["total"]]) {
        let (p10, med, p90) = (st["p10_ms"].as_f64().unwrap(), st["median_ms"].as_f64().unwrap(), st["p90_ms"].as_f64().unwrap());
        assert!(p10 <= med && med <= p90);
    }
    assert_eq!(json["settings"]["warmup"], "3");
    assert_eq!(json["samples_ms"].as_array().unwrap().len(), 10);

    let r = run(&["bench", "--preset", "tiny", "--iters", "5"]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn selftest_runs_properties() {
    let text = ok(&["selftest", "--seeds", "0..3", "--property", "window-roundtrip"]);
    assert!(text.starts_with("properties=1 seeds=3 runs=3 passed=3 failed=0"));
    assert_eq!(run(&["selftest", "--property", "nope"]).status.code(), Some(2));
    assert_eq!(run(&["selftest", "--seeds", "5..1"]).status.code(), Some(2));
}

#[test]
fn help_lists_defaults() {
    let text = ok(&["infer", "--help"]);
    for d in ["[default: 0.1]", "[default: 7]", "[default: 64]", "[default: 10]", "EMSF_THREADS"] {
        assert!(text.contains(d), "help lacks {d}");
    }
    let text = ok(&["bench", "--help"]);
    for d in ["[default: 480]", "[default: 640]", "[default: 20]", "[default: 3]"] {
        assert!(text.contains(d), "help lacks {d}");
    }
}

#[test]
fn synthetic_rgb_is_readable() {
    let f = Fixture::new("tiny");
    let img = read_rgb(&f.sample(2, "rgb.png")).unwrap();
    assert_eq!((img.height, img.width), (64, 80));
}
