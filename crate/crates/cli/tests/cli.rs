use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn lidarsr(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lidarsr"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = lidarsr(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn error_kind(dir: &Path, args: &[&str]) -> String {
    let out = lidarsr(dir, args);
    assert!(!out.status.success(), "{args:?} should fail");
    let line = String::from_utf8(out.stderr).unwrap();
    let v: Value = serde_json::from_str(line.trim()).expect("one JSON error line");
    assert!(v["message"].is_string());
    v["error"].as_str().unwrap().to_string()
}

#[test]
fn simulate_decimate_upsample() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["simulate", "--frames", "2", "--seed", "4", "--out", "frames"]);
    assert!(d.join("frames/scene_00004.ldi").exists() && d.join("frames/scene_00005.ldi").exists());
    ok(d, &["decimate", "frames/scene_00004.ldi", "--out", "low"]);
    let out = ok(d, &["upsample", "low/scene_00004_low.ldi", "--method", "bicubic", "--ply", "--out", "up"]);
    assert!(out.contains("scene_00004_low_up.ldi"));
    assert!(d.join("up/scene_00004_low_up.ply").exists());
}

#[test]
fn simulate_from_scene_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(
        d.join("scene.json"),
        r#"{"seed": 7, "ground_z": -1.73, "primitives": [
            {"shape": {"kind": "sphere", "center": [8.0, 0.0, 0.0], "radius": 1.0}, "class": 4}]}"#,
    )
    .unwrap();
    ok(d, &["simulate", "--config", "scene.json"]);
    assert!(d.join("scene_00007.ldi").exists());
}

#[test]
fn project_raw_scan() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let record: Vec<u8> = [10.0f32, 0.0, 0.0, 0.5].iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(d.join("scan.bin"), &record).unwrap();
    ok(d, &["project", "scan.bin"]);
    assert!(d.join("scan.ldi").exists());
    fs::write(d.join("bad.bin"), [0u8; 17]).unwrap();
    assert_eq!(error_kind(d, &["project", "bad.bin"]), "MalformedFile");
}

#[test]
fn train_then_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(
        d.join("up.cfg"),
        "# tiny run\niterations = 3\nbatch_size = 2\neval_interval = 1\nnetwork = {\"residual_blocks\": 1, \"base_filters\": 4}\n",
    )
    .unwrap();
    let out = ok(d, &["train-upsampler", "--frames", "4", "--config", "up.cfg", "--out", "run"]);
    let v: Value = serde_json::from_str(out.trim()).unwrap();
    assert!(v["best_step"].as_u64().unwrap() >= 1);
    assert_eq!(fs::read_to_string(d.join("run/train_log.jsonl")).unwrap().lines().count(), 3);

    fs::write(d.join("ex.cfg"), "iterations = 2\nnetwork = {\"block_filters\": [4, 4, 4, 4, 4]}\n").unwrap();
    ok(d, &["train-extractor", "--frames", "2", "--config", "ex.cfg", "--out", "run"]);

    let out = ok(d, &[
        "evaluate", "--frames", "2", "--seed", "50", "--method", "run/upsampler.lwt",
        "--extractor", "run/extractor.lwt", "--out", "eval",
    ]);
    let report: Value = serde_json::from_str(&out).unwrap();
    assert!(report["mae"].as_f64().unwrap() > 0.0);
    assert!(report["miou"].is_number());
    assert_eq!(report["frames"], 2);
    assert!(d.join("eval/metrics.json").exists());

    let out = ok(d, &["evaluate", "--frames", "2", "--method", "gt"]);
    let report: Value = serde_json::from_str(&out).unwrap();
    assert_eq!((report["mae"].as_f64(), report["mse"].as_f64()), (Some(0.0), Some(0.0)));
}

#[test]
fn feature_loss_needs_extractor() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("c.cfg"), "loss = \"feat-1\"\niterations = 1\n").unwrap();
    assert_eq!(
        error_kind(d, &["train-upsampler", "--frames", "2", "--config", "c.cfg"]),
        "MissingExtractor"
    );
}

#[test]
fn survey_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = ok(d, &[
        "survey-prepare", "--frames", "2", "--method", "gt", "--method", "nearest",
        "--method", "smooth=bilinear", "--subjects", "2", "--out", "survey",
    ]);
    let v: Value = serde_json::from_str(out.trim()).unwrap();
    assert_eq!((v["instances"].as_u64(), v["subjects"].as_u64()), (Some(6), Some(2)));
    let manifest: Value = serde_json::from_str(&fs::read_to_string(d.join("survey/manifest.json")).unwrap()).unwrap();
    let aliases = manifest["aliases"].as_object().unwrap();
    let score = |name: &str| match name {
        "gt" => 5,
        "smooth" => 4,
        _ => 1,
    };
    let mut lines = String::from("# exported ratings\n");
    for subject in ["subject01", "subject02"] {
        for inst in manifest["instances"].as_array().unwrap() {
            let alias = inst["alias"].as_str().unwrap();
            let name = aliases[alias].as_str().unwrap();
            lines += &format!(
                "{{\"subject\":\"{subject}\",\"scene\":\"{}\",\"alias\":\"{alias}\",\"score\":{}}}\n",
                inst["scene"].as_str().unwrap(),
                score(name)
            );
        }
    }
    assert!(!lines.contains("smooth") && !lines.contains("nearest"));
    fs::write(d.join("ratings.jsonl"), &lines).unwrap();
    let out = ok(d, &["survey-aggregate", "--manifest", "survey/manifest.json", "ratings.jsonl"]);
    let report: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(report["methods"]["gt"]["mean"], 5.0);
    assert_eq!(report["methods"]["smooth"]["mean"], 4.0);
    assert_eq!(report["methods"]["nearest"]["votes"], 4);
    assert!(report["missing"].as_array().unwrap().is_empty());

    let stray = format!("{{\"subject\":\"x\",\"scene\":\"scene00\",\"alias\":\"{}\",\"score\":3}}\n", "nope");
    fs::write(d.join("bad.jsonl"), stray).unwrap();
    assert_eq!(
        error_kind(d, &["survey-aggregate", "--manifest", "survey/manifest.json", "bad.jsonl"]),
        "UnknownAlias"
    );
}

#[test]
fn failures_are_machine_readable() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(error_kind(d, &["decimate", "missing.ldi"]), "Io");
    ok(d, &["simulate"]);
    assert_eq!(error_kind(d, &["upsample", "scene_00000.ldi", "--method", "spline"]), "BadConfig");
    assert_eq!(error_kind(d, &["no-such-command"]), "Usage");
    fs::write(d.join("geom.json"), r#"{"elevations": [0.1, 0.0, 0.2, 0.3], "columns": 8, "max_range": 50}"#).unwrap();
    assert_eq!(error_kind(d, &["simulate", "--geometry", "geom.json"]), "NonMonotoneElevations");
}
