use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_moctsvm"))
}

fn iris() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/iris.csv")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn toy(dir: &Path) -> PathBuf {
    let p = dir.join("toy.csv");
    let mut s = String::from("u,v,kind\n");
    for i in 0..8 {
        let t = i as f64 / 8.0;
        s += &format!("{},{},left\n", 0.1 + 0.1 * t, t);
        s += &format!("{},{},right\n", 0.8 + 0.1 * t, 1.0 - t);
    }
    std::fs::write(&p, s).unwrap();
    p
}

#[test]
fn train_then_predict() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy(dir.path());
    let model = dir.path().join("m.json");
    let out = run(&[
        "train", "--data", data.to_str().unwrap(), "--depth", "1", "--c1", "10", "--c2", "1", "--c3", "0.1",
        "--time-limit", "10", "--deterministic", "--out", model.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let preds = run(&["predict", "--model", model.to_str().unwrap(), "--data", data.to_str().unwrap(), "--label-col", "kind"]);
    assert!(preds.status.success());
    let text = String::from_utf8(preds.stdout).unwrap();
    assert_eq!(text.lines().next(), Some("row,class"));
    assert_eq!(text.lines().count(), 17);
    assert!(String::from_utf8_lossy(&preds.stderr).contains("accuracy 1.0000"));
}

#[test]
fn cart_training_writes_json() {
    let out = run(&["train", "--data", iris().to_str().unwrap(), "--method", "cart", "--depth", "3"]);
    assert!(out.status.success());
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["metadata"]["method"], "cart");
    assert_eq!(doc["depth"], 3);
}

#[test]
fn exit_codes() {
    assert_eq!(run(&["train"]).status.code(), Some(1));
    assert_eq!(run(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(run(&["oracle-check", "--trials", "0"]).status.code(), Some(1));
    assert_eq!(run(&["train", "--data", "/nonexistent.csv"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "a,b,y\n1,zz,p\n2,3,q\n").unwrap();
    assert_eq!(run(&["train", "--data", bad.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(run(&["train", "--data", iris().to_str().unwrap(), "--c1", "-1"]).status.code(), Some(1));
    assert!(run(&["--help"]).status.success());
}

#[test]
fn oracle_check_passes_and_repeats() {
    let a = run(&["oracle-check", "--trials", "4", "--seed", "9"]);
    let b = run(&["oracle-check", "--trials", "4", "--seed", "9"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert!(String::from_utf8_lossy(&a.stdout).contains(": pass"));
}

#[test]
fn crossval_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = run(&[
        "crossval", "--data", iris().to_str().unwrap(), "--method", "cart", "--depth", "2", "--folds", "3",
        "--repeats", "1", "--out", out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = std::fs::read_to_string(out_dir.join("report.txt")).unwrap();
    assert!(table.contains("iris") && table.contains("cart"));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(json[0]["fold_results"].as_array().unwrap().len(), 3);
}

#[test]
fn export_model_writes_text_format() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy(dir.path());
    let out = run(&["export-model", "--data", data.to_str().unwrap(), "--depth", "1"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("MOCTSVM-MODEL 1"));
    assert!(text.contains(" delta "));
}
