mod common;

use std::process::{Command, Output};

use common::*;

fn facecon(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_facecon"))
        .args(args)
        .env_remove("FCB_CACHE_DIR")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_succeeds_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = toy_manifest();
    let args = [
        "run",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--metric",
        "all",
    ];
    let first = facecon(&args);
    assert_eq!(first.status.code(), Some(0), "{}", stderr(&first));
    let md = std::fs::read_to_string(dir.path().join("table_mode1_cosine.md")).unwrap();
    assert!(md.contains("| real |") || md.contains("real"), "{md}");
    assert!(md.contains("**"));
    let before = outputs(dir.path());

    let second = facecon(&args);
    assert_eq!(second.status.code(), Some(0));
    assert!(stderr(&second).contains("6 hits"), "{}", stderr(&second));
    assert_eq!(before, outputs(dir.path()));
}

#[test]
fn score_then_report_in_one_format() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = toy_manifest();
    let m = manifest.to_str().unwrap();
    let out = dir.path().to_str().unwrap();
    let score = facecon(&["score", "--manifest", m, "--out", out, "--mode", "1", "--pairs", "10"]);
    assert_eq!(score.status.code(), Some(0), "{}", stderr(&score));
    assert!(dir.path().join("scores.json").is_file());

    let report = facecon(&["report", "--manifest", m, "--out", out, "--format", "markdown"]);
    assert_eq!(report.status.code(), Some(0), "{}", stderr(&report));
    assert!(dir.path().join("table_mode1_cosine.md").is_file());
    assert!(!dir.path().join("table_mode1_cosine.csv").exists());
    assert!(!dir.path().join("table_mode2_cosine.md").exists());
}

#[test]
fn extract_populates_the_cache_dir() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("elsewhere");
    let manifest = toy_manifest();
    let o = Command::new(env!("CARGO_BIN_EXE_facecon"))
        .args([
            "extract",
            "--manifest",
            manifest.to_str().unwrap(),
            "--out",
            dir.path().to_str().unwrap(),
        ])
        .env("FCB_CACHE_DIR", &cache)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(std::fs::read_dir(&cache).unwrap().count(), 6);
}

#[test]
fn invalid_manifest_exits_1_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    let video = fixtures().join("toy/videos/real/steady_a");
    let text = format!(
        "models = [\"toy\"]\nmetric = \"manhattan\"\n\n[[sources]]\nname = \"r\"\nkind = \"real\"\nvideos = {}\n",
        toml_paths(&[video])
    );
    std::fs::write(&path, text).unwrap();
    let o = facecon(&[
        "run",
        "--manifest",
        path.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("bad.toml:2"), "{err}");

    let o = facecon(&["run", "--manifest", "/nonexistent/run.toml"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn failed_video_exits_2() {
    let work = tempfile::tempdir().unwrap();
    copy_dir(&fixtures().join("toy"), work.path());
    std::fs::remove_file(work.path().join("videos/real/steady_b/0.png")).unwrap();
    std::fs::write(work.path().join("videos/real/steady_b/0.png"), b"garbage").unwrap();
    let manifest = work.path().join("toy.toml");
    let out = work.path().join("out");
    let o = facecon(&[
        "run",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("real/steady_b"));
    assert!(out.join("table_mode1_cosine.txt").is_file());
}
