use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn facewarp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_facewarp"))
        .args(args)
        .env("FACEWARP_THREADS", "1")
        .output()
        .expect("spawn facewarp")
}

fn run_ok(args: &[&str]) -> Output {
    let out = facewarp(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn ok_json(args: &[&str]) -> Value {
    serde_json::from_slice(&run_ok(args).stdout).expect("stdout is JSON")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TINY: &str = r#"{
  "mesh_lon": 20, "mesh_lat": 20, "n_controls": 10, "input_size": 32,
  "channels": [4, 8], "strides": [2, 2], "hidden": 16, "feature_block": 0,
  "lm_hidden": 6, "feature_dim": 8, "init_focal": 100.0, "batch_size": 2,
  "phase1_epochs": 2, "phase2_epochs": 1
}"#;

#[test]
fn synth_train_infer_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = root.join("tiny.json");
    std::fs::write(&cfg, TINY).unwrap();
    let data = root.join("data");
    let model = root.join("model.fwck");
    let pred = root.join("pred");
    let report = root.join("report");

    ok_json(&["synth", "--count", "5", "--seed", "3", "--out-dir", p(&data), "--config", p(&cfg)]);
    assert!(data.join("bboxes.csv").is_file());
    assert!(data.join("truth/000004.json").is_file());

    run_ok(&["train", "--data", p(&data), "--out", p(&model), "--holdout", "1"]);
    assert!(model.is_file());
    assert!(model.with_extension("csv").is_file());

    run_ok(&["infer", "--model", p(&model), "--image", p(&data), "--out", p(&pred)]);
    for suffix in ["json", "init.json", "mesh.obj", "visibility.json", "camera.txt"] {
        assert!(pred.join(format!("000002.{suffix}")).is_file(), "{suffix}");
    }

    let summary = ok_json(&[
        "eval",
        "--pred",
        p(&pred),
        "--truth",
        p(&data.join("truth")),
        "--bboxes",
        p(&data.join("bboxes.csv")),
        "--report",
        p(&report),
        "--resamples",
        "3",
    ]);
    assert!(summary.is_object());
    let records = std::fs::read_to_string(report.join("records.csv")).unwrap();
    assert_eq!(records.lines().count(), 6);
    assert!(report.join("pose_table.json").is_file());
    assert!(report.join("ced.csv").is_file());

    // a landmark file fits back onto the default mesh through the DLT camera
    let fit_dir = root.join("fit");
    let rep = ok_json(&["fit", p(&pred.join("000000.json")), "--out", p(&fit_dir)]);
    assert!(rep["max_reprojection_error_px"].as_f64().unwrap() < 1e-6);
    assert!(fit_dir.join("mesh.obj").is_file());
    assert!(fit_dir.join("camera.txt").is_file());

    // image input goes through the network first
    let rep = ok_json(&[
        "fit",
        p(&data.join("000001.fwgd")),
        "--model",
        p(&model),
        "--out",
        p(&root.join("fit_img")),
    ]);
    assert!(rep["max_reprojection_error_px"].as_f64().unwrap() < 1e-6);
}

#[test]
fn gen_mesh_writes_obj_with_landmarks() {
    let dir = tempfile::tempdir().unwrap();
    let obj = dir.path().join("face.obj");
    run_ok(&["gen-mesh", "--out", p(&obj), "--lon", "15", "--lat", "15", "--controls", "8"]);
    let text = std::fs::read_to_string(&obj).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("v ")).count(), 225);
    assert_eq!(text.lines().filter(|l| l.starts_with("f ")).count(), 2 * 14 * 14);
}

#[test]
fn gradcheck_passes() {
    let v = ok_json(&["gradcheck", "--module", "tps", "--seeds", "2", "--json"]);
    assert!(v.is_object() || v.is_array());
}

#[test]
fn errors_are_json_on_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let out = facewarp(&["fit", "does/not/exist.json", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&out.stderr).expect("stderr is JSON");
    assert_eq!(err["error"], "io");
    assert!(err["message"].is_string());

    let out = facewarp(&["no-such-command"]);
    assert_eq!(out.status.code(), Some(2));
}
