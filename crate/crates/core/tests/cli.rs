//! The `rdiv` binary end to end: exit codes, determinism and the split log.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn rdiv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rdiv")).args(args).output().expect("binary runs")
}

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    out
}

#[test]
fn synth_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let out = rdiv(&["synth", "--out", d.to_str().unwrap(), "--count", "4", "--seed", "7"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let (ta, tb) = (tree(&a), tree(&b));
    assert_eq!(ta.len(), 4 + 4 + 2);
    assert_eq!(ta, tb);
    assert!(out_is_empty(&rdiv(&["synth", "--out", a.to_str().unwrap(), "--count", "1", "-q"])));
}

fn out_is_empty(out: &Output) -> bool {
    out.status.success() && out.stdout.is_empty()
}

#[test]
fn nan_learning_rate_exits_with_usage_error() {
    let out = rdiv(&["train", "--data", "d", "--out", "m.ckpt", "--lr", "NaN"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning rate"));
}

#[test]
fn unknown_verb_and_flag_exit_with_usage_error() {
    assert_eq!(rdiv(&["fly"]).status.code(), Some(1));
    assert_eq!(rdiv(&["infer", "--model", "m", "--images", "i", "--out", "o", "--fast"]).status.code(), Some(1));
    assert_eq!(rdiv(&["--help"]).status.code(), Some(0));
}

#[test]
fn unreadable_checkpoint_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("m.ckpt");
    fs::write(&ckpt, b"RDIV").unwrap();
    let out = rdiv(&["infer", "--model", ckpt.to_str().unwrap(), "--images", ".", "--out", "d.json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runaway_learning_rate_exits_as_diverged() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    assert!(rdiv(&["synth", "--out", data.to_str().unwrap(), "--count", "2", "--seed", "1"]).status.success());
    let out = rdiv(&[
        "train", "--data", data.to_str().unwrap(), "--out", dir.path().join("m.ckpt").to_str().unwrap(),
        "--steps", "50", "--lr", "1e300", "--batch", "1", "--split", "0.5",
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!dir.path().join("m.ckpt").exists());
}

#[test]
fn eval_logs_the_split_of_211_images() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    let ckpt = dir.path().join("m.ckpt");
    let (d, c) = (data.to_str().unwrap(), ckpt.to_str().unwrap());
    assert!(rdiv(&["synth", "--out", d, "--count", "211", "--seed", "3"]).status.success());
    let out = rdiv(&["train", "--data", d, "--out", c, "--steps", "1", "--batch", "1", "--seed", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = rdiv(&["eval", "--model", c, "--data", d, "--seed", "3", "--conf", "0.0"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train=168 test=43"));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("mean test IOU"));
    assert!(stdout.contains("train labels") && stdout.contains("test predictions"));
}
