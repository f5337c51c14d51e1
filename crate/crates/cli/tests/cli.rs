use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use biflag::data::load_corpus;
use tempfile::TempDir;

fn biflag(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_biflag"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Tiny model settings so end-to-end runs take well under a second.
const TINY: [&str; 10] = [
    "--hidden",
    "8",
    "--set",
    "word_dim=6",
    "--set",
    "char_emb_dim=4",
    "--set",
    "char_dim=4",
    "--dropout",
    "0",
];

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let f = Self {
            dir: tempfile::tempdir().unwrap(),
        };
        ok(&biflag(&[
            "synth",
            "--sentences",
            "12",
            "--seed",
            "5",
            "--set",
            "word_dim=6",
            "--output",
            s(&f.path("train.jsonl")),
            "--embeddings",
            s(&f.path("vectors.txt")),
        ]));
        ok(&biflag(&["synth", "--sentences", "6", "--seed", "6", "--output", s(&f.path("dev.jsonl"))]));
        f
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn train(&self, checkpoint: &str, report: &str) -> Output {
        let paths = [
            self.path("train.jsonl"),
            self.path("dev.jsonl"),
            self.path("vectors.txt"),
            self.path(checkpoint),
            self.path(report),
        ];
        let mut args = vec![
            "train",
            "--corpus",
            s(&paths[0]),
            "--dev",
            s(&paths[1]),
            "--embeddings",
            s(&paths[2]),
            "--checkpoint",
            s(&paths[3]),
            "--report-dir",
            s(&paths[4]),
            "--epochs",
            "3",
            "--seed",
            "2",
        ];
        args.extend(TINY);
        biflag(&args)
    }
}

#[test]
fn synth_is_deterministic_and_reports_layers() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    let out = biflag(&["synth", "--sentences", "30", "--seed", "3", "-o", s(&a)]);
    ok(&out);
    ok(&biflag(&["synth", "--sentences", "30", "--seed", "3", "-o", s(&b)]));
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let stats = String::from_utf8_lossy(&out.stderr);
    assert!(stats.contains("# sentences") && stats.contains("30"), "{stats}");
    let corpus = load_corpus(&a).unwrap();
    assert_eq!(corpus.sentences.len(), 30);
    assert_eq!(corpus.labels.num_types(), 4);
}

#[test]
fn training_requires_embeddings() {
    let f = Fixture::new();
    let out = biflag(&["train", "--corpus", s(&f.path("train.jsonl")), "--checkpoint", s(&f.path("m.ckpt"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("embeddings"));
}

#[test]
fn invalid_settings_exit_with_one() {
    let out = biflag(&["synth", "--set", "learning_rate=3"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));
    let out = biflag(&["synth", "--set", "batch_size=many"]);
    assert_eq!(out.status.code(), Some(1));
    let out = biflag(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn config_file_is_applied_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# synthetic run\nsentences = 4\nseed = 9\n").unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    ok(&biflag(&["synth", "--config", s(&cfg), "-o", s(&a)]));
    ok(&biflag(&["synth", "--config", s(&cfg), "--sentences", "7", "-o", s(&b)]));
    assert_eq!(load_corpus(&a).unwrap().sentences.len(), 4);
    assert_eq!(load_corpus(&b).unwrap().sentences.len(), 7);
}

#[test]
fn configuration_is_echoed_before_work() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_biflag"))
        .args(["synth", "--sentences", "2", "-o", s(&dir.path().join("x.jsonl"))])
        .env("RUST_LOG", "info")
        .output()
        .unwrap();
    ok(&out);
    let err = String::from_utf8_lossy(&out.stderr);
    let echo = err.find("lr_flat = 0.015").expect("echo present");
    let stats = err.find("# sentences").expect("stats present");
    assert!(echo < stats);
}

#[test]
fn train_eval_predict_bench_round_trip() {
    let f = Fixture::new();
    ok(&f.train("a.ckpt", "run_a"));
    ok(&f.train("b.ckpt", "run_b"));

    // Same seed, same metrics.
    let log_a = fs::read_to_string(f.path("run_a/metrics.jsonl")).unwrap();
    let log_b = fs::read_to_string(f.path("run_b/metrics.jsonl")).unwrap();
    assert_eq!(log_a, log_b);
    assert_eq!(log_a.lines().count(), 3);
    for line in log_a.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let (outer, inner, total) = (v["l_outer"].as_f64().unwrap(), v["l_inner"].as_f64().unwrap(), v["loss"].as_f64().unwrap());
        assert!(total >= outer && inner >= 0.0);
        assert!(v["dev"]["f1"].is_number());
    }

    let ckpt = f.path("a.ckpt");
    let dev = f.path("dev.jsonl");
    let out = biflag(&["eval", "--checkpoint", s(&ckpt), "--corpus", s(&dev), "--report-dir", s(&f.path("eval"))]);
    ok(&out);
    let table = String::from_utf8_lossy(&out.stdout);
    for row in ["Overall", "Outermost", "Inner", "length"] {
        assert!(table.contains(row), "{row} missing from\n{table}");
    }
    let rows: Vec<serde_json::Value> = fs::read_to_string(f.path("eval/report.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let tp = |pred: &dyn Fn(&str) -> bool| -> u64 {
        rows.iter()
            .filter(|r| pred(r["stratum"].as_str().unwrap()))
            .map(|r| r["tp"].as_u64().unwrap())
            .sum()
    };
    let overall = tp(&|s| s == "overall");
    assert_eq!(tp(&|s| s.starts_with("type:")), overall);
    assert_eq!(tp(&|s| s.starts_with("layer:")), overall);

    let pred = f.path("pred.jsonl");
    ok(&biflag(&["predict", "--checkpoint", s(&ckpt), "--corpus", s(&dev), "-o", s(&pred)]));
    let back = load_corpus(&pred).expect("predictions parse as a corpus");
    assert_eq!(back.sentences.len(), 6);

    let out = biflag(&["bench", "--checkpoint", s(&ckpt), "--corpus", s(&dev), "--passes", "3"]);
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stdout).contains("tokens/s"));
}

#[test]
fn checkpoint_problems_are_reported() {
    let f = Fixture::new();
    ok(&f.train("m.ckpt", "run"));
    let ckpt = f.path("m.ckpt");

    let other = f.path("other.jsonl");
    fs::write(&other, "{\"tokens\":[\"a\",\"b\"],\"entities\":[{\"start\":0,\"end\":1,\"type\":\"DISEASE\"}]}\n").unwrap();
    let out = biflag(&["eval", "--checkpoint", s(&ckpt), "--corpus", s(&other)]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("PER") && err.contains("DISEASE"), "{err}");

    let broken = f.path("broken.ckpt");
    fs::write(&broken, b"not a checkpoint").unwrap();
    let out = biflag(&["eval", "--checkpoint", s(&broken), "--corpus", s(&f.path("dev.jsonl"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("magic"));
}
