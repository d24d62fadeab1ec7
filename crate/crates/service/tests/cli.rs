mod common;

use std::fs;

use common::{fixture_checkpoint, run, run_ok, s};

#[test]
fn fixture_writes_files_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fx");
    run_ok(&["fixture", "--out", s(&out), "--n", "8"]);
    let files = fs::read_dir(&out).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "gesture")).count();
    assert_eq!(files, 8);
    let manifest = fs::read_to_string(out.join("manifest.tsv")).unwrap();
    assert_eq!(manifest.lines().filter(|l| l.contains(".gesture")).count(), 8);
}

#[test]
fn train_writes_one_metrics_row_per_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let (_, ckpt) = fixture_checkpoint(dir.path(), 50);
    let metrics = fs::read_to_string(ckpt.with_extension("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(
        lines.next().unwrap(),
        "epoch,lr,train_ang,train_pose,train_aff,train_reg,train_total,val_total,mean_pose_error_val"
    );
    assert_eq!(lines.count(), 50);
    assert!(ckpt.exists());
}

#[test]
fn generate_eval_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, ckpt) = fixture_checkpoint(dir.path(), 30);
    let a = dir.path().join("a.gesture");
    let b = dir.path().join("b.gesture");
    let bvh = dir.path().join("a.bvh");
    let traj = dir.path().join("a.csv");
    let base = ["generate", "--checkpoint", s(&ckpt), "--sentence", "hello", "--emotion", "joyous"];
    let stdout = run_ok(&[&base[..], &["--out", s(&a), "--bvh", s(&bvh), "--trajectories", s(&traj)]].concat());
    assert!(stdout.contains("mean") && stdout.contains("p95"), "{stdout}");
    run_ok(&[&base[..], &["--out", s(&b)]].concat());
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text, fs::read_to_string(&b).unwrap());
    let frames: usize = text
        .lines()
        .find_map(|l| l.strip_prefix("frames "))
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    assert!(frames >= 20, "{frames} frames");
    assert!(fs::read_to_string(&bvh).unwrap().starts_with("HIERARCHY"));
    assert!(fs::read_to_string(&traj).unwrap().starts_with("t,joint,x,y,z"));

    let out = run(&["generate", "--checkpoint", s(&ckpt), "--sentence", "hello", "--emotion", "blorf", "--out", s(&a)]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("blorf"), "{err}");

    let out = run(&["generate", "--checkpoint", s(&dir.path().join("missing.ckpt")), "--sentence", "hi", "--out", s(&a)]);
    assert!(!out.status.success());

    let report = run_ok(&["eval", "--gt", s(&manifest), "--pred", s(&manifest)]);
    assert!(report.contains("mean_pose_error 0.000000"), "{report}");
    let report = run_ok(&["eval", "--gt", s(&manifest), "--checkpoint", s(&ckpt)]);
    assert!(report.contains("mean_pose_error"), "{report}");
}

#[test]
fn checkpoint_can_come_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let (_, ckpt) = fixture_checkpoint(dir.path(), 2);
    let out_path = dir.path().join("env.gesture");
    let out = common::bin()
        .env("T2G_CHECKPOINT", &ckpt)
        .args(["generate", "--sentence", "hi there", "--out", s(&out_path)])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_path.exists());
}

#[test]
fn bench_reports_latency() {
    let stdout = run_ok(&["bench", "--frames", "5", "--d-model", "32"]);
    assert!(stdout.contains("ms/frame"), "{stdout}");
    let out = run(&["bench", "--frames", "3", "--d-model", "32", "--max-mean-ms", "0"]);
    assert!(!out.status.success());
}
