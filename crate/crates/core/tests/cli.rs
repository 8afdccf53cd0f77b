mod common;

use std::process::Command;

fn ordino() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ordino"))
}

#[test]
fn ordinality_from_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.csv");
    std::fs::write(&path, "m=4\n1,0.9,0.5,0.1\n0.9,1,0.8,0.3\n0.5,0.8,1,0.7\n0.1,0.3,0.7,1\n").unwrap();
    let out = ordino().args(["ordinality", "--matrix"]).arg(&path).args(["--window", "4"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text, "OS 100.0000\nLOS(4) 100.0000\n");
}

#[test]
fn unknown_flag_prints_usage() {
    let out = ordino().args(["train", "--bogus"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage:"));
}

#[test]
fn errors_are_one_line() {
    let out = ordino().args(["ordinality", "--matrix", "/does/not/exist.csv"]).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1);
    assert!(err.starts_with("error: "));
}

#[test]
fn train_eval_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("run.json");
    std::fs::write(&cfg_path, common::tiny_config().to_json()).unwrap();
    let out_dir = dir.path().join("ckpt");
    let status = ordino().arg("train").arg("--config").arg(&cfg_path).arg("--out").arg(&out_dir).output().unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    for f in ["stage1.json", "stage2.json", "report.json", "similarity.csv", "train_log.jsonl"] {
        assert!(out_dir.join(f).exists(), "missing {f}");
    }
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    for key in ["mae", "accuracy", "os", "los", "config_hash", "seed"] {
        assert!(report.get(key).is_some(), "report lacks {key}");
    }

    let eval = ordino().arg("eval").arg("--checkpoint").arg(out_dir.join("stage2.json")).output().unwrap();
    assert!(eval.status.success());
    let evaluated: serde_json::Value = serde_json::from_slice(&eval.stdout).unwrap();
    assert_eq!(evaluated, report);

    let png = dir.path().join("heat.png");
    let plot = ordino().arg("plot").arg("--matrix").arg(out_dir.join("similarity.csv")).arg("--out").arg(&png).output().unwrap();
    assert!(plot.status.success());
    assert!(image::open(&png).is_ok());
}

#[test]
fn generate_data_writes_image_folders() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("run.json");
    std::fs::write(&cfg_path, common::tiny_config().to_json()).unwrap();
    let out = ordino().arg("generate-data").arg("--config").arg(&cfg_path).arg("--out").arg(dir.path().join("data")).output().unwrap();
    assert!(out.status.success());
    let labels = std::fs::read_to_string(dir.path().join("data/test/labels.csv")).unwrap();
    assert!(labels.starts_with("path,rank_value\n"));
    let ds = ordino::data::load_image_folder(
        &dir.path().join("data/train"),
        &dir.path().join("data/train/labels.csv"),
        &[1.0, 2.0, 3.0, 4.0],
        8,
    )
    .unwrap();
    assert_eq!(ds.class_histogram(), vec![19; 4]);
}
