use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use facepulse::ingest::fseq::write_fseq;
use facepulse::ingest::synth::{synth_pulse_video, SynthSpec};
use facepulse::ingest::{write_frame_dir, write_landmarks};
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_facepulse"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn stderr_error(out: &Output) -> Value {
    assert!(!out.status.success());
    let line = String::from_utf8_lossy(&out.stderr);
    let last = line.lines().last().expect("stderr has a line");
    serde_json::from_str(last).expect("stderr is JSON")
}

/// Writes a synthetic clip as a PNG directory plus landmarks.
fn clip(dir: &Path, name: &str, frames: usize, phase_step: f64, seed: u64) -> (PathBuf, PathBuf) {
    let video = synth_pulse_video(&SynthSpec {
        width: 32,
        height: 32,
        duration: frames as f64 / 30.0,
        noise_sigma: 1.0,
        region_phase: (0..15).map(|r| phase_step * r as f64).collect(),
        seed,
        ..SynthSpec::default()
    })
    .unwrap();
    let frames_dir = dir.join(name);
    write_frame_dir(&video.frames, &frames_dir).unwrap();
    let landmarks = dir.join(format!("{name}.jsonl"));
    write_landmarks(&video.landmarks, &landmarks).unwrap();
    (frames_dir, landmarks)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn version_lists_format_versions() {
    let out = run(&["--version"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("FSEQ v1") && text.contains("MEMS v1") && text.contains("VITW v1"), "{text}");
}

#[test]
fn selftest_passes_and_is_reproducible() {
    let a = run(&["--strict", "selftest", "--seed", "3"]);
    let b = run(&["--jobs", "1", "selftest", "--seed", "3"]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stdout));
    assert_eq!(a.stdout, b.stdout);
    let last: Value = serde_json::from_str(String::from_utf8_lossy(&a.stdout).lines().last().unwrap()).unwrap();
    assert_eq!(last["summary"]["passed"], true);
}

#[test]
fn short_video_gives_zero_maps_and_a_warning() {
    let dir = tempfile::tempdir().unwrap();
    let (frames, landmarks) = clip(dir.path(), "short", 100, 0.0, 1);
    let out = dir.path().join("maps");
    let report = stdout_json(&run(&["stmap", "--frames", s(&frames), "--landmarks", s(&landmarks), "--out", s(&out)]));
    assert_eq!(report["maps"], 0);
    assert!(report["warning"].as_str().unwrap().contains("100 frames"));
}

#[test]
fn stmap_writes_maps_and_pngs() {
    let dir = tempfile::tempdir().unwrap();
    let (frames, landmarks) = clip(dir.path(), "clip", 226, 0.1, 2);
    let out = dir.path().join("maps");
    let report = stdout_json(&run(&[
        "stmap", "--frames", s(&frames), "--landmarks", s(&landmarks), "--out", s(&out), "--label", "real", "--export-png",
    ]));
    assert_eq!(report["maps"], 3);
    let files: Vec<_> = std::fs::read_dir(&out).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(files.iter().filter(|p| p.extension().unwrap() == "mems").count(), 3);
    let png = files.iter().find(|p| p.extension().unwrap() == "png").unwrap();
    assert_eq!(image::image_dimensions(png).unwrap(), (196, 60));
}

#[test]
fn stride_precedence_flag_over_file_over_default() {
    let dir = tempfile::tempdir().unwrap();
    let (frames, landmarks) = clip(dir.path(), "clip", 300, 0.1, 3);
    let config = dir.path().join("c.toml");
    std::fs::write(&config, "[window]\nstride_s = 1.0\n").unwrap();
    let count = |use_file: bool, use_flag: bool| {
        let out = dir.path().join(format!("m{use_file}{use_flag}"));
        let mut args = vec!["stmap", "--frames", s(&frames), "--landmarks", s(&landmarks), "--out", s(&out)];
        if use_file {
            args.extend(["--config", s(&config)]);
        }
        if use_flag {
            args.extend(["--stride", "0.25"]);
        }
        stdout_json(&run(&args))["maps"].as_u64().unwrap()
    };
    // 300 frames: stride 15 -> 7 maps, 30 -> 4, 8 -> 14
    assert_eq!(count(false, false), 7);
    assert_eq!(count(true, false), 4);
    assert_eq!(count(false, true), 14);
    assert_eq!(count(true, true), 14);
}

#[test]
fn magnify_writes_one_sequence_per_octave() {
    let dir = tempfile::tempdir().unwrap();
    let video = synth_pulse_video(&SynthSpec { width: 32, height: 32, duration: 1.0, ..SynthSpec::default() }).unwrap();
    let input = dir.path().join("in.fseq");
    write_fseq(&video.frames, &input).unwrap();
    let out = dir.path().join("mag");
    let report = stdout_json(&run(&["magnify", "--frames", s(&input), "--out", s(&out), "--alphas", "5,10,20", "--band", "0.8:2.5"]));
    assert_eq!(report["alphas"], serde_json::json!([5.0, 10.0, 20.0]));
    for i in 1..=3 {
        assert!(out.join(format!("octave{i}.fseq")).is_file());
    }
}

#[test]
fn errors_are_json_on_stderr() {
    let missing = stderr_error(&run(&["magnify", "--frames", "/does/not/exist", "--out", "/tmp/x"]));
    assert_eq!(missing["error"], "missing_path");
    assert!(missing["message"].as_str().unwrap().contains("/does/not/exist"));

    let bad_levels = stderr_error(&run(&["magnify", "--frames", "/x", "--out", "/y", "--levels", "2"]));
    assert_eq!(bad_levels["error"], "invalid_argument");

    let unknown_key = stderr_error(&run(&["--set", "band.middle=1", "magnify", "--frames", "/x", "--out", "/y"]));
    assert_eq!(unknown_key["error"], "format");

    let usage = stderr_error(&run(&["frobnicate"]));
    assert_eq!(usage["error"], "usage");
}

#[test]
fn train_predict_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut manifest = String::new();
    for (i, (label, split)) in [("real", "train"), ("fake", "train"), ("real", "val"), ("fake", "val")].iter().enumerate() {
        // "fake" clips get incoherent region phases
        let step = if *label == "real" { 0.1 } else { 2.3 };
        let name = format!("v{i}");
        clip(dir.path(), &name, 211, step, 10 + i as u64);
        manifest.push_str(&format!(r#"{{"video": "{name}", "landmarks": "{name}.jsonl", "label": "{label}", "split": "{split}"}}"#));
        manifest.push('\n');
    }
    let manifest_path = dir.path().join("manifest.jsonl");
    std::fs::write(&manifest_path, manifest).unwrap();
    let weights = dir.path().join("model.vitw");
    let log = dir.path().join("metrics.jsonl");

    let trained = stdout_json(&run(&[
        "--strict", "train", "--manifest", s(&manifest_path), "--out", s(&weights), "--log", s(&log), "--epochs", "2", "--batch-size", "2", "--lr", "1e-3",
    ]));
    assert_eq!(trained["train_maps"], 4);
    assert_eq!(trained["val_maps"], 4);
    let lines: Vec<Value> = std::fs::read_to_string(&log).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[1]["epoch"], 2);

    let (frames, landmarks) = clip(dir.path(), "query", 226, 0.1, 99);
    let verdict = stdout_json(&run(&["predict", "--weights", s(&weights), "--frames", s(&frames), "--landmarks", s(&landmarks)]));
    assert_eq!(verdict["per_map"].as_array().unwrap().len(), 3);
    assert!(["real", "fake"].contains(&verdict["verdict"].as_str().unwrap()));
    let votes = &verdict["votes"];
    assert_eq!(votes["real"].as_u64().unwrap() + votes["fake"].as_u64().unwrap(), 3);

    let maps = dir.path().join("query-maps");
    stdout_json(&run(&["stmap", "--frames", s(&frames), "--landmarks", s(&landmarks), "--out", s(&maps)]));
    let from_maps = stdout_json(&run(&["predict", "--weights", s(&weights), "--maps", s(&maps)]));
    assert_eq!(from_maps["mean_probs"], verdict["mean_probs"]);

    let report_path = dir.path().join("eval.json");
    let report = stdout_json(&run(&["eval", "--manifest", s(&manifest_path), "--weights", s(&weights), "--out", s(&report_path)]));
    for split in ["train", "val"] {
        let c = &report[split]["confusion"];
        let total: u64 = ["real_as_real", "real_as_fake", "fake_as_real", "fake_as_fake"].iter().map(|k| c[k].as_u64().unwrap()).sum();
        assert_eq!(total, 4);
        assert_eq!(report[split]["videos"], 2);
    }
    assert!(report.get("test").is_none());
    assert!(report_path.is_file());

    let mismatch = stderr_error(&run(&["predict", "--weights", s(&weights), "--maps", s(&maps), "--set", "vit.hidden_dim=32"]));
    assert_eq!(mismatch["error"], "config_mismatch");
}
