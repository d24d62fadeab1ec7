#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_gesture"));
    for var in ["T2G_SKELETON", "T2G_LEXICON", "T2G_EMBEDDINGS", "T2G_CHECKPOINT"] {
        c.env_remove(var);
    }
    c
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn run_ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Fixture corpus plus a briefly trained small checkpoint inside `dir`.
pub fn fixture_checkpoint(dir: &Path, epochs: usize) -> (PathBuf, PathBuf) {
    let corpus = dir.join("corpus");
    run_ok(&["fixture", "--out", s(&corpus), "--n", "8"]);
    let manifest = corpus.join("manifest.tsv");
    let ckpt = dir.join("model.ckpt");
    let epochs = epochs.to_string();
    run_ok(&[
        "train", "--corpus", s(&manifest), "--checkpoint", s(&ckpt), "--epochs", &epochs, "--d-model", "16",
        "--d-word", "16", "--t-sen", "8", "--window", "6", "--batch-size", "8",
    ]);
    (manifest, ckpt)
}
