use std::path::Path;
use std::process::{Command, Output};

fn harmony(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_harmony"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = harmony(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn study_to_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let study = d.join("study");
    ok(&[
        "synth",
        "study",
        "--out",
        s(&study),
        "--composites",
        "10",
        "--size",
        "32",
        "--subjects",
        "12",
        "--seed",
        "3",
    ]);
    let manifest = study.join("manifest.jsonl");

    let mos = d.join("mos.csv");
    ok(&[
        "mos",
        "--ratings",
        s(&study.join("ratings.csv")),
        "--out",
        s(&mos),
        "--summary",
        s(&d.join("summary.json")),
    ]);
    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["total_ratings"], 12 * 90);

    let scores = d.join("scores.csv");
    ok(&[
        "score",
        "--manifest",
        s(&manifest),
        "--metric",
        "psnr",
        "--metric",
        "ssim",
        "--out",
        s(&scores),
    ]);
    let rows = std::fs::read_to_string(&scores).unwrap().lines().count();
    assert_eq!(rows, 1 + 2 * 90);

    let split = d.join("split.json");
    ok(&["split", "--manifest", s(&manifest), "--seed", "5", "--out", s(&split)]);
    let report = d.join("report.json");
    let table = ok(&[
        "eval",
        "--scores",
        s(&scores),
        "--mos",
        s(&mos),
        "--split",
        s(&split),
        "--out",
        s(&report),
    ]);
    assert!(table.contains("PSNR") || table.contains("psnr"), "{table}");
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert!(json.is_object() || json.is_array());

    ok(&[
        "sessions",
        "--manifest",
        s(&manifest),
        "--sessions",
        "3",
        "--out-dir",
        s(&d.join("sessions")),
    ]);
    assert_eq!(std::fs::read_dir(d.join("sessions")).unwrap().count(), 3);
}

#[test]
fn oversized_metric_request_reports_failures() {
    let dir = tempfile::tempdir().unwrap();
    let study = dir.path().join("study");
    ok(&[
        "synth",
        "study",
        "--out",
        s(&study),
        "--composites",
        "5",
        "--size",
        "32",
    ]);
    // MS-SSIM needs larger images than these
    let out = harmony(&[
        "score",
        "--manifest",
        s(&study.join("manifest.jsonl")),
        "--metric",
        "ms-ssim",
        "--out",
        s(&dir.path().join("scores.csv")),
    ]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn bad_arguments_are_rejected() {
    assert!(!harmony(&["eval", "--fit", "cubic"]).status.success());
    assert!(!harmony(&["train", "--stage", "3"]).status.success());
    let out = harmony(&["mos", "--ratings", "/nonexistent/ratings.csv", "--out", "/tmp/x.csv"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn train_then_predict() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let task = d.join("task");
    ok(&["synth", "task", "--n", "20", "--out", s(&task), "--seed", "2"]);
    let model = d.join("model.json");
    ok(&[
        "train",
        "--manifest",
        s(&task.join("manifest.jsonl")),
        "--mos",
        s(&task.join("mos.csv")),
        "--out",
        s(&model),
        "--history",
        s(&d.join("history.json")),
        "--stage1-epochs",
        "1",
        "--stage2-epochs",
        "1",
    ]);
    let history: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("history.json")).unwrap()).unwrap();
    assert_eq!(history["epochs"].as_array().unwrap().len(), 2);
    let preds = d.join("pred.csv");
    ok(&[
        "predict",
        "--model",
        s(&model),
        "--manifest",
        s(&task.join("manifest.jsonl")),
        "--out",
        s(&preds),
    ]);
    assert_eq!(std::fs::read_to_string(&preds).unwrap().lines().count(), 21);
}
