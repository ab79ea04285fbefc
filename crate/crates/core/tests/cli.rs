// SPDX-License-Identifier: MIT OR Apache-2.0

//! Command-line behaviour.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_clvs"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn ok(out: &Output) -> String {
    assert_eq!(
        out.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn gen_model_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a.json", "b.json"] {
        let out = bin()
            .args(["gen-model", "--seed", "9", "--layers", "3", "--vocab", "16", "--name", name, "--out"])
            .arg(dir.path())
            .output()
            .unwrap();
        ok(&out);
    }
    let a = std::fs::read(dir.path().join("a.json")).unwrap();
    let b = std::fs::read(dir.path().join("b.json")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn gen_model_rejects_bad_dims() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["gen-model", "--head-dim", "3", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn repeated_vanilla_runs_have_identical_checksums() {
    let dir = tempfile::tempdir().unwrap();
    let mut sums = Vec::new();
    for run in ["one", "two"] {
        let out = bin()
            .args(["run", "--mode", "vanilla", "--config"])
            .arg(configs().join("clvs.json"))
            .arg("--out")
            .arg(dir.path().join(run))
            .output()
            .unwrap();
        sums.push(ok(&out).split_whitespace().next().unwrap().to_string());
    }
    assert_eq!(sums[0], sums[1]);
    assert!(!dir.path().join("one/report.json").exists());
}

#[test]
fn analyze_rebuilds_the_report() {
    let dir = tempfile::tempdir().unwrap();
    ok(&bin()
        .args(["run", "--config"])
        .arg(configs().join("clvs.json"))
        .arg("--out")
        .arg(dir.path().join("run"))
        .output()
        .unwrap());
    ok(&bin()
        .arg("analyze")
        .arg("--vanilla")
        .arg(dir.path().join("run/vanilla.clvstrace.jsonl"))
        .arg("--clvs")
        .arg(dir.path().join("run/clvs.clvstrace.jsonl"))
        .arg("--out")
        .arg(dir.path().join("again"))
        .output()
        .unwrap());
    let a = std::fs::read(dir.path().join("run/report.json")).unwrap();
    let b = std::fs::read(dir.path().join("again/report.json")).unwrap();
    assert_eq!(a, b);
    let csv = std::fs::read_to_string(dir.path().join("again/report.csv")).unwrap();
    assert!(csv.starts_with("layer,a_obj_vanilla,a_obj_clvs,relative_increase\n"));
}

#[test]
fn verify_subcommand_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(&bin()
        .args(["verify", "--config"])
        .arg(configs().join("scripted_decay.json"))
        .arg("--out")
        .arg(dir.path().join("v"))
        .output()
        .unwrap());
    assert!(stdout.contains("verified 2 run(s)"));
    assert!(!dir.path().join("v").exists());
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let good = std::fs::read_to_string(configs().join("clvs.json")).unwrap();
    let cases = [
        (good.replace("\"mode\": \"clvs\"", "\"mode\": \"fast\""), "mode"),
        (good.replace("\"max_new\": 8,", "\"max_new\": 8, \"colour\": 1,"), "colour"),
        (good.replace("\"prompt\": [1, 2,", "\"prompt\": [1,"), "prompt"),
        (good.replace("\"prompt\": [1,", "\"prompt\": [99,"), "prompt[0]"),
        (good.replace("\"mode\": \"clvs\"", "\"mode\": \"scripted\""), "scripted"),
        ("{ not json".to_string(), "<root>"),
    ];
    for (text, field) in cases {
        let path = dir.path().join("bad.json");
        std::fs::write(&path, text).unwrap();
        let out = bin().args(["run", "--config"]).arg(&path).arg("--out").arg(dir.path()).output().unwrap();
        let stderr = String::from_utf8_lossy(&out.stderr);
        assert_eq!(out.status.code(), Some(2), "{field}: {stderr}");
        assert!(stderr.contains(field), "{field}: {stderr}");
    }
    let out = bin().arg("run").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_trace_is_a_runtime_failure() {
    let out = bin()
        .args(["analyze", "--vanilla", "/nonexistent/a", "--clvs", "/nonexistent/b"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}
