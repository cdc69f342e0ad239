use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use occface::formats::{save_mask, save_point_cloud, save_range_image};
use occface_core::{OcclusionMask, PointCloud, RangeImage, Vec3};
use serde_json::Value;
use tempfile::{tempdir, TempDir};

fn occface(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_occface"))
        .args(args)
        .env_remove("OCCFACE_REPORT_DIR")
        .output()
        .unwrap()
}

fn json(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(bytes)))
}

fn ok(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    json(&out.stdout)
}

fn error(out: &Output, code: i32, kind: &str) -> Value {
    assert_eq!(out.status.code(), Some(code), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out.stderr);
    assert_eq!(v["error"]["kind"], kind);
    assert_eq!(v["error"]["exit_code"], code);
    assert!(v["error"]["message"].as_str().is_some_and(|m| !m.is_empty()));
    v
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn bowl(w: usize, h: usize, k: f64) -> RangeImage {
    RangeImage::from_fn(w, h, |r, c| {
        let (x, y) = (c as f64 - w as f64 / 2.0, r as f64 - h as f64 / 2.0);
        Some(k * (x * x + y * y) / 100.0 + 0.01 * (r * c) as f64 / 10.0)
    })
    .unwrap()
}

fn face_cloud(dir: &Path) -> PathBuf {
    let pts = (0..15)
        .flat_map(|r| (0..15).map(move |c| (r, c)))
        .map(|(r, c)| {
            let (x, y) = (c as f64 / 14.0, r as f64 / 14.0);
            Vec3::new(x, y, 0.3 * (-((x - 0.5).powi(2) + (y - 0.4).powi(2)) / 0.05).exp() + 0.1 * x * y)
        })
        .collect();
    let p = dir.join("face.xyz");
    save_point_cloud(&p, &PointCloud::new(pts)).unwrap();
    p
}

fn strip_timings(mut v: Value) -> Value {
    v.as_object_mut().unwrap().remove("timings");
    v
}

#[test]
fn register_identical_clouds_reports_zero_rmse_after_one_iteration() {
    let dir = tempdir().unwrap();
    let f = face_cloud(dir.path());
    let v = ok(&occface(&["register", "--probe", s(&f), "--model", s(&f)]));
    assert_eq!(v["format"], "occface-register-report");
    assert_eq!(v["version"], 1);
    assert_eq!(v["result"]["final_rmse"], 0.0);
    assert_eq!(v["result"]["iterations"], 1);
    assert!(v["timings"]["seconds"].is_number());
}

#[test]
fn repeated_runs_match_outside_timings() {
    let dir = tempdir().unwrap();
    let f = face_cloud(dir.path());
    let a = ok(&occface(&["register", "--probe", s(&f), "--model", s(&f)]));
    let b = ok(&occface(&["register", "--probe", s(&f), "--model", s(&f)]));
    assert_eq!(strip_timings(a), strip_timings(b));
}

#[test]
fn report_dir_from_environment() {
    let dir = tempdir().unwrap();
    let f = face_cloud(dir.path());
    let reports = dir.path().join("reports");
    let out = Command::new(env!("CARGO_BIN_EXE_occface"))
        .args(["register", "--probe", s(&f), "--model", s(&f)])
        .env("OCCFACE_REPORT_DIR", &reports)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    let v = json(&fs::read(reports.join("register.json")).unwrap());
    assert_eq!(v["command"], "register");

    let explicit = dir.path().join("mine.json");
    let out = Command::new(env!("CARGO_BIN_EXE_occface"))
        .args(["register", "--probe", s(&f), "--model", s(&f), "--report", s(&explicit)])
        .env("OCCFACE_REPORT_DIR", &reports)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(explicit.exists());
}

#[test]
fn missing_input_is_an_io_error() {
    let dir = tempdir().unwrap();
    let f = face_cloud(dir.path());
    let missing = dir.path().join("nope.xyz");
    error(&occface(&["register", "--probe", s(&missing), "--model", s(&f)]), 3, "io");
}

#[test]
fn malformed_input_is_a_validation_error() {
    let dir = tempdir().unwrap();
    let f = face_cloud(dir.path());
    let bad = dir.path().join("bad.xyz");
    fs::write(&bad, "0 0 0\n1 1\n").unwrap();
    let v = error(&occface(&["register", "--probe", s(&bad), "--model", s(&f)]), 2, "validation");
    assert!(v["error"]["message"].as_str().unwrap().contains(":2:"));
}

#[test]
fn usage_and_config_errors_are_validation_errors() {
    error(&occface(&["frobnicate"]), 2, "validation");
    error(&occface(&["register", "--probe", "a.xyz"]), 2, "validation");
    error(&occface(&["config", "--set", "icp.bogus=1"]), 2, "validation");
    error(&occface(&["config", "--set", "icp.max_iterations=0"]), 2, "validation");
    error(&occface(&["config", "--config", "/nonexistent/c.toml"]), 3, "io");
}

#[test]
fn help_exits_cleanly() {
    let out = occface(&["--help"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("pipeline"));
}

#[test]
fn config_prints_effective_toml() {
    let out = occface(&["config", "--set", "icp.max_iterations=17"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let cfg = occface::config::Config::from_toml(&text).unwrap();
    assert_eq!(cfg.icp.max_iterations, 17);
}

#[test]
fn underdetermined_restoration_is_a_numerical_error() {
    let dir = tempdir().unwrap();
    let d = dir.path();
    let mut inputs = Vec::new();
    for k in 0..3 {
        let p = d.join(format!("t{k}.pgm"));
        save_range_image(&p, &bowl(8, 8, 1.0 + k as f64)).unwrap();
        inputs.push(p);
    }
    let basis = d.join("basis.json");
    let mut args = vec!["basis", "--output", s(&basis), "--inputs"];
    args.extend(inputs.iter().map(|p| s(p)));
    let v = ok(&occface(&args));
    assert!(v["result"]["components"].as_u64().unwrap() >= 1);

    let mask = d.join("mask.pgm");
    save_mask(&mask, &OcclusionMask::new(8, 8, vec![true; 64]).unwrap()).unwrap();
    let out = d.join("r.pgm");
    error(
        &occface(&["restore", "--input", s(&inputs[0]), "--mask", s(&mask), "--basis", s(&basis), "--output", s(&out)]),
        4,
        "numerical",
    );
}

#[test]
fn preprocess_detect_restore_features_chain() {
    let dir = tempdir().unwrap();
    let d = dir.path();
    let mut inputs = Vec::new();
    for k in 0..4 {
        let p = d.join(format!("t{k}.pgm"));
        save_range_image(&p, &bowl(12, 12, 1.0 + 0.1 * k as f64)).unwrap();
        inputs.push(p);
    }
    let basis = d.join("basis.json");
    let mut args = vec!["basis", "--output", s(&basis), "--inputs"];
    args.extend(inputs.iter().map(|p| s(p)));
    ok(&occface(&args));

    let mut occluded = bowl(12, 12, 1.05);
    for r in 3..6 {
        for c in 4..8 {
            let i = r * 12 + c;
            occluded.set(i, occluded.at(i).map(|z| z + 5.0));
        }
    }
    let occ = d.join("occ.pgm");
    save_range_image(&occ, &occluded).unwrap();

    let smooth = d.join("smooth.pgm");
    let v = ok(&occface(&["preprocess", "--input", s(&occ), "--output", s(&smooth)]));
    assert_eq!(v["result"]["input"]["valid_pixels"], 144);

    let mask = d.join("mask.pgm");
    let diff = d.join("diff.pgm");
    let v = ok(&occface(&[
        "detect", "--input", s(&smooth), "--basis", s(&basis), "--mask", s(&mask), "--diff", s(&diff),
    ]));
    assert!(v["result"]["occluded_pixels"].as_u64().unwrap() > 0);
    assert!(diff.exists() && mask.exists());

    let restored = d.join("restored.pgm");
    let v = ok(&occface(&[
        "restore", "--input", s(&smooth), "--mask", s(&mask), "--basis", s(&basis), "--output", s(&restored),
    ]));
    assert!(v["result"]["filled_pixels"].as_u64().unwrap() > 0);

    let feat = d.join("f.txt");
    let nm = d.join("n.ppm");
    let v = ok(&occface(&[
        "features", "--input", s(&restored), "--output", s(&feat), "--normal-map", s(&nm),
        "--set", "features.downsample_factor=2",
    ]));
    assert_eq!(v["result"]["length"], 6 * 6 * 3);
    assert!(fs::read(&nm).unwrap().starts_with(b"P6"));
}

#[test]
fn train_and_evaluate_on_collected_features() {
    let dir = tempdir().unwrap();
    let d = dir.path();
    let gallery = d.join("gallery.json");
    let probes = d.join("probes.json");
    for subject in 0..3u32 {
        for (set, bump, kind) in [(&gallery, 0.0, "none"), (&probes, 0.02, "eye")] {
            let img = d.join(format!("s{subject}_{kind}.pgm"));
            save_range_image(&img, &bowl(8, 8, 1.0 + subject as f64 + bump)).unwrap();
            let sub = subject.to_string();
            ok(&occface(&[
                "features", "--input", s(&img), "--output", s(&d.join("f.txt")), "--collect", s(set),
                "--subject", &sub, "--kind", kind, "--set", "features.downsample_factor=1",
            ]));
        }
    }
    let model = d.join("model.json");
    let v = ok(&occface(&["train", "--features", s(&gallery), "--output", s(&model)]));
    assert_eq!(v["result"]["samples"], 3);
    let v = ok(&occface(&["evaluate", "--model", s(&model), "--features", s(&probes), "--ranks", "1,2,3"]));
    let r = &v["result"];
    assert!(r["rank_1"].as_f64().unwrap() <= r["rank_2"].as_f64().unwrap());
    assert_eq!(r["ranks"].as_array().unwrap().len(), 3);
    assert_eq!(r["ranks"][2]["rate"], 1.0);

    let mlp = d.join("mlp.json");
    let v = ok(&occface(&[
        "train", "--features", s(&gallery), "--output", s(&mlp),
        "--set", "recognition.classifier.kind=mlp", "--set", "recognition.classifier.mlp.epochs=50",
    ]));
    assert!(v["result"]["final_loss"].is_number());
    ok(&occface(&["evaluate", "--model", s(&mlp), "--features", s(&probes)]));

    error(&occface(&["evaluate", "--model", s(&gallery), "--features", s(&probes)]), 2, "validation");
}

fn synth(dir: &TempDir, subjects: &str, occlusions: &str) -> PathBuf {
    let out = dir.path().join("ds");
    let v = ok(&occface(&[
        "synth", "--out", s(&out), "--subjects", subjects, "--occlusions", occlusions, "--seed", "3",
    ]));
    PathBuf::from(v["result"]["manifest"].as_str().unwrap())
}

#[test]
fn synth_rejects_a_single_subject() {
    let dir = tempdir().unwrap();
    error(
        &occface(&["synth", "--out", s(&dir.path().join("x")), "--subjects", "1"]),
        2,
        "validation",
    );
}

#[test]
fn pipeline_runs_and_stages_rerun_identically() {
    let dir = tempdir().unwrap();
    let manifest = synth(&dir, "3", "2");
    let dump = dir.path().join("dump");
    let report = dir.path().join("pipeline.json");
    let out = occface(&[
        "pipeline", "--manifest", s(&manifest), "--dump", s(&dump), "--report", s(&report),
        "--set", "recognition.seeds=[0, 1]",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&fs::read(&report).unwrap());
    assert_eq!(v["format"], "occface-pipeline-report");
    assert_eq!(v["scans"].as_array().unwrap().len(), 9);
    assert_eq!(v["evaluations"].as_array().unwrap().len(), 2);
    assert_eq!(v["registration_plot"].as_array().unwrap().len(), 3);
    assert!(v["timings"]["total_seconds"].is_number());

    let ds = manifest.parent().unwrap();
    let id = "s001_1_eye";
    let scan = dump.join(id);
    let w = dir.path().join("work");
    fs::create_dir_all(&w).unwrap();
    let basis = dump.join("basis.json");

    ok(&occface(&[
        "register", "--probe", s(&ds.join(format!("scans/{id}.xyz"))), "--model", s(&ds.join("template.xyz")),
        "--image", s(&w.join("registered.pgm")),
    ]));
    ok(&occface(&["preprocess", "--input", s(&w.join("registered.pgm")), "--output", s(&w.join("smoothed.pgm"))]));
    ok(&occface(&[
        "detect", "--input", s(&w.join("smoothed.pgm")), "--basis", s(&basis), "--mask", s(&w.join("mask.pgm")),
    ]));
    ok(&occface(&[
        "restore", "--input", s(&w.join("smoothed.pgm")), "--mask", s(&w.join("mask.pgm")), "--basis", s(&basis),
        "--output", s(&w.join("restored.pgm")),
    ]));
    ok(&occface(&["features", "--input", s(&w.join("restored.pgm")), "--output", s(&w.join("features.txt"))]));

    for f in ["registered.pgm", "smoothed.pgm", "mask.pgm", "restored.pgm", "features.txt"] {
        assert_eq!(fs::read(w.join(f)).unwrap(), fs::read(scan.join(f)).unwrap(), "{f} differs");
    }
}
