use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn fmtk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fmtk")).args(args).output().expect("binary runs")
}

fn run_ok(args: &[&str]) -> Output {
    let out = fmtk(args);
    assert!(
        out.status.success(),
        "fmtk {args:?} exited with {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen(dir: &Path, seed: &str, count: &str) -> PathBuf {
    run_ok(&["gen-data", "--count", count, "--seed", seed, "--image-size", "32", "--out", s(dir)]);
    dir.join("manifest.csv")
}

fn sorted_files(dir: &Path) -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    files
}

fn find_checkpoint(dir: &Path, suffix: &str) -> PathBuf {
    sorted_files(dir)
        .into_iter()
        .find(|p| p.to_string_lossy().ends_with(suffix))
        .unwrap_or_else(|| panic!("no *{suffix} in {}", dir.display()))
}

#[test]
fn gen_data_is_deterministic_per_seed() {
    let tmp = TempDir::new().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    gen(&a, "11", "12");
    gen(&b, "11", "12");
    gen(&c, "12", "12");
    assert_eq!(fs::read(a.join("manifest.csv")).unwrap(), fs::read(b.join("manifest.csv")).unwrap());
    let images = |d: &Path| sorted_files(&d.join("images")).into_iter().map(|p| fs::read(p).unwrap()).collect::<Vec<_>>();
    assert_eq!(images(&a).len(), 12);
    assert_eq!(images(&a), images(&b));
    assert_ne!(images(&a), images(&c));
}

#[test]
fn exit_codes() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(fmtk(&[]).status.code(), Some(1));
    assert_eq!(fmtk(&["--help"]).status.code(), Some(0));
    assert_eq!(fmtk(&["gen-data", "--bogus", "--out", s(tmp.path())]).status.code(), Some(1));
    let missing = tmp.path().join("nope.csv");
    let out = fmtk(&["evaluate", "--data", s(&missing), "--model", s(&missing), "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let bad_cfg = tmp.path().join("bad.json");
    fs::write(&bad_cfg, "{ not json").unwrap();
    assert_eq!(fmtk(&["gen-data", "--config", s(&bad_cfg), "--out", s(tmp.path())]).status.code(), Some(2));
}

#[test]
fn run_manifest_replays_the_same_outputs() {
    let tmp = TempDir::new().unwrap();
    let first = tmp.path().join("first");
    run_ok(&["gen-data", "--count", "12", "--seed", "3", "--out", s(&first)]);
    let manifest = first.join("run_manifest.json");
    let v: serde_json::Value = serde_json::from_slice(&fs::read(&manifest).unwrap()).unwrap();
    assert_eq!(v["command"], "gen-data");
    assert_eq!(v["config"]["count"], 12);

    let second = tmp.path().join("second");
    run_ok(&["gen-data", "--config", s(&manifest), "--out", s(&second)]);
    assert_eq!(fs::read(first.join("manifest.csv")).unwrap(), fs::read(second.join("manifest.csv")).unwrap());
}

#[test]
fn teacher_to_gradcam_workflow() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    let manifest = gen(&data, "5", "40");

    let teacher = tmp.path().join("teacher");
    run_ok(&["train-teacher", "--data", s(&manifest), "--epochs", "1", "--batch", "8", "--seed", "1", "--out", s(&teacher)]);
    let ckpt = find_checkpoint(&teacher, "_best.fmtk");

    let eval = tmp.path().join("eval");
    let out = run_ok(&["evaluate", "--data", s(&manifest), "--model", s(&ckpt), "--split", "test", "--out", s(&eval)]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("macro"));
    let report = sorted_files(&eval).into_iter().find(|p| p.extension().is_some_and(|e| e == "json") && p.file_name().unwrap() != "run_manifest.json");
    let report: serde_json::Value = serde_json::from_slice(&fs::read(report.expect("eval json")).unwrap()).unwrap();
    let f1 = report["overall"]["macro_f1"].as_f64().expect("macro_f1 field");
    assert!((0.0..=1.0).contains(&f1));

    let image = sorted_files(&data.join("images")).remove(0);
    let cam = tmp.path().join("cam");
    run_ok(&["gradcam", "--model", s(&ckpt), "--image", s(&image), "--target", "class:0", "--image-size", "32", "--out", s(&cam)]);
    for f in ["heatmap.csv", "heatmap.json", "overlay.png", "run_manifest.json"] {
        assert!(cam.join(f).is_file(), "missing {f}");
    }

    let predicted = tmp.path().join("cam_predicted");
    run_ok(&["gradcam", "--model", s(&ckpt), "--image", s(&image), "--image-size", "32", "--out", s(&predicted)]);
    let heat: serde_json::Value = serde_json::from_slice(&fs::read(predicted.join("heatmap.json")).unwrap()).unwrap();
    assert_eq!(heat["target"]["task"], "class");
    let run: serde_json::Value = serde_json::from_slice(&fs::read(predicted.join("run_manifest.json")).unwrap()).unwrap();
    assert_eq!(run["config"]["target"], heat["target"]);

    let emb = tmp.path().join("emb");
    run_ok(&["export-embeddings", "--data", s(&manifest), "--model", s(&ckpt), "--out", s(&emb)]);
    let rows = fs::read_to_string(emb.join("embeddings.csv")).unwrap().lines().count();
    assert_eq!(rows, 41);
}
