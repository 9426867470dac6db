//! End-to-end runs of the binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clinigym")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let o = bin(args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generated_suite_validates() {
    let dir = tempfile::tempdir().unwrap();
    let tasks = dir.path().join("micro.jsonl");
    ok(&["tasks", "gen-micro", "--seed", "3", "--n", "6", "--out", s(&tasks)]);
    let o = ok(&["tasks", "validate", s(&tasks)]);
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), "valid 6 invalid 0");
}

#[test]
fn training_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    for p in [&a, &b] {
        ok(&["train", "--variant", "full", "--steps", "8", "--seed", "2", "--out", s(p)]);
    }
    let (x, y) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(x, y);
    assert_eq!(String::from_utf8(x).unwrap().lines().count(), 9);
}

#[test]
fn resumed_training_continues_the_step_count() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("ck.bin");
    let m1 = dir.path().join("m1.csv");
    let m2 = dir.path().join("m2.csv");
    ok(&["train", "--steps", "4", "--out", s(&m1), "--checkpoint", s(&ck)]);
    // The step budget is a total, so this adds three steps.
    ok(&["train", "--steps", "7", "--out", s(&m2), "--resume", s(&ck)]);
    let first = std::fs::read_to_string(&m1).unwrap();
    let text = std::fs::read_to_string(&m2).unwrap();
    assert_eq!(text.lines().count(), 4);
    let step = |l: &str| l.split(',').next().unwrap().parse::<usize>().unwrap();
    assert_eq!(step(text.lines().nth(1).unwrap()), step(first.lines().last().unwrap()) + 1);
}

#[test]
fn recorded_runs_replay_to_the_same_scores() {
    let dir = tempfile::tempdir().unwrap();
    let tasks = dir.path().join("micro.jsonl");
    let traj = dir.path().join("traj.jsonl");
    let again = dir.path().join("again.jsonl");
    ok(&["tasks", "gen-micro", "--seed", "1", "--n", "4", "--out", s(&tasks)]);
    ok(&["run", "--tasks", s(&tasks), "--seed", "5", "--out", s(&traj)]);
    ok(&["run", "--tasks", s(&tasks), "--replay", s(&traj), "--out", s(&again)]);
    let score = |t: &Path| ok(&["score", "--trajectory", s(t), "--tasks", s(&tasks)]).stdout;
    let first = score(&traj);
    assert_eq!(String::from_utf8_lossy(&first).lines().count(), 5);
    assert_eq!(first, score(&again));
}

#[test]
fn replayed_pharmacology_answer_scores() {
    let dir = tempfile::tempdir().unwrap();
    let tasks = dir.path().join("mcqa.jsonl");
    let index = dir.path().join("kb.idx");
    ok(&["tasks", "convert-mcqa", "--input", s(&fixture("medqa_pharmacology.jsonl")), "--out", s(&tasks)]);
    ok(&["ingest", "--corpus", s(&fixture("corpus.jsonl")), "--index", s(&index)]);
    let o = ok(&["run", "--tasks", s(&tasks), "--index", s(&index), "--render"]);
    assert!(!o.stdout.is_empty());
}

#[test]
fn cosine_sweep_passes_from_the_command_line() {
    let dir = tempfile::tempdir().unwrap();
    let o = ok(&["lab", "cosine-sweep", "--out", s(dir.path()), "--seeds", "1", "--steps", "5"]);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("PASS") && !text.contains("FAIL"), "{text}");
}

#[test]
fn bad_inputs_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.csv");
    assert_eq!(bin(&["train", "--variant", "nope", "--out", s(&out)]).status.code(), Some(2));
    assert_eq!(bin(&["lab", "nope", "--out", s(dir.path())]).status.code(), Some(2));
    assert_eq!(bin(&["tasks", "validate", s(&dir.path().join("missing.jsonl"))]).status.code(), Some(2));
    assert_eq!(bin(&["train"]).status.code(), Some(2));
}
