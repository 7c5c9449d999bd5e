//! End-to-end runs of the `scvad` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scvad(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_scvad"));
    cmd.args(args);
    match threads {
        Some(t) => cmd.env("SCVAD_THREADS", t),
        None => cmd.env_remove("SCVAD_THREADS"),
    };
    cmd.output().unwrap()
}

fn ok(out: Output) {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// synth → train → detect → eval with the fixture settings; returns the run
/// root holding `synth/`, `model/`, `detect/`, `eval/`.
fn pipeline(root: &Path, threads: Option<&str>) {
    let (sy, m, d, e) = (root.join("synth"), root.join("model"), root.join("detect"), root.join("eval"));
    let stream = sy.join("stream.scvf");
    ok(scvad(
        &["synth", "--output", s(&sy), "--seed", "7", "--dim", "16", "--length", "160",
          "--span", "100-119", "--magnitude", "0.2"],
        threads,
    ));
    ok(scvad(
        &["train", "--input", s(&stream), "--output", s(&m), "--model-dim", "32",
          "--n-shots", "30", "--window", "5", "--lr", "0.003", "--seed", "7"],
        threads,
    ));
    ok(scvad(&["detect", "--input", s(&stream), "--model", s(&m), "--output", s(&d)], threads));
    ok(scvad(
        &["eval", "--input", s(&stream), "--model", s(&m), "--verdicts",
          s(&d.join("verdicts.csv")), "--output", s(&e)],
        threads,
    ));
}

/// Every artifact except the manifests, which carry wall-clock durations.
fn artifacts(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["synth", "model", "detect", "eval"] {
        let mut entries: Vec<_> = fs::read_dir(root.join(sub))
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.file_name().unwrap() != "manifest.json")
            .collect();
        entries.sort();
        for p in entries {
            let rel = p.strip_prefix(root).unwrap().to_path_buf();
            out.push((rel, fs::read(&p).unwrap()));
        }
    }
    out
}

#[test]
fn pipeline_matches_golden_files_and_is_thread_independent() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path(), Some("1"));
    pipeline(b.path(), Some("3"));

    let synth = a.path().join("synth");
    assert_eq!(fs::read(synth.join("stream.scvf")).unwrap(), fs::read(data("fixture.scvf")).unwrap());
    assert_eq!(
        fs::read(synth.join("stream.meta.json")).unwrap(),
        fs::read(data("fixture.meta.json")).unwrap()
    );
    assert_eq!(
        fs::read_to_string(a.path().join("eval/eval.json")).unwrap(),
        fs::read_to_string(data("golden_eval.json")).unwrap()
    );

    let (fa, fb) = (artifacts(a.path()), artifacts(b.path()));
    assert_eq!(fa.len(), fb.len());
    for ((pa, ba), (pb, bb)) in fa.iter().zip(&fb) {
        assert_eq!(pa, pb);
        assert!(ba == bb, "{} differs between thread counts", pa.display());
    }

    for (sub, command) in [("synth", "synth"), ("model", "train"), ("detect", "detect"), ("eval", "eval")] {
        let text = fs::read_to_string(a.path().join(sub).join("manifest.json")).unwrap();
        let m: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(m["command"], command);
        assert_eq!(m["version"], env!("CARGO_PKG_VERSION"));
    }
}

fn error_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1, "stderr: {text}");
    serde_json::from_str(lines[0]).unwrap()
}

#[test]
fn missing_input_is_a_data_error_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = scvad(
        &["train", "--input", s(&dir.path().join("absent.scvf")), "--output", s(&out_dir)],
        None,
    );
    assert_eq!(out.status.code(), Some(65));
    assert_eq!(error_json(&out)["error"], "data");
    assert!(!out_dir.exists());
}

#[test]
fn too_few_shots_for_window_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = scvad(
        &["train", "--input", s(&data("fixture.scvf")), "--output", s(&out_dir),
          "--n-shots", "5", "--window", "10"],
        None,
    );
    assert_eq!(out.status.code(), Some(64));
    assert_eq!(error_json(&out)["code"], 64);
    assert!(!out_dir.exists());
}

#[test]
fn bad_flags_and_thread_settings_are_usage_errors() {
    let out = scvad(&["train", "--bogus"], None);
    assert_eq!(out.status.code(), Some(64));
    error_json(&out);
    let dir = tempfile::tempdir().unwrap();
    let out = scvad(&["synth", "--output", s(dir.path())], Some("zero"));
    assert_eq!(out.status.code(), Some(64));
}

#[test]
fn corrupt_stream_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.scvf");
    fs::write(&bad, b"NOPE0000000000000000").unwrap();
    let out = scvad(&["train", "--input", s(&bad), "--output", s(&dir.path().join("m"))], None);
    assert_eq!(out.status.code(), Some(65));
}

#[test]
fn config_file_is_used_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"epochs": 2, "n_shots": 30, "window": 5, "model_dim": 8, "seed": 1}"#).unwrap();
    let m = dir.path().join("m");
    ok(scvad(
        &["train", "--input", s(&data("fixture.scvf")), "--output", s(&m),
          "--config", s(&cfg), "--epochs", "3"],
        None,
    ));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(m.join("train_report.json")).unwrap()).unwrap();
    assert_eq!(report["train_config"]["epochs"], 3);
    assert_eq!(report["train_config"]["n_shots"], 30);
    assert_eq!(report["model_config"]["model_dim"], 8);
    assert_eq!(report["loss_curve"].as_array().unwrap().len(), 3);
}

#[test]
fn ablate_writes_both_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("abl");
    ok(scvad(
        &["ablate", "--input", s(&data("fixture.scvf")), "--output", s(&out),
          "--model-dim", "8", "--n-shots", "30", "--window", "5", "--epochs", "2"],
        None,
    ));
    let csv = fs::read_to_string(out.join("ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(fs::read_to_string(out.join("ablation.txt")).unwrap().contains("IV"));
    assert!(out.join("manifest.json").exists());
}

#[test]
fn help_exits_cleanly() {
    let out = scvad(&["--help"], None);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("ablate"));
}
