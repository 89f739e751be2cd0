use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rcl_core::{SequenceSet, SimilarityIndex};

const FAST: [&str; 12] = [
    "-p",
    "epochs=2",
    "-p",
    "dim=8",
    "-p",
    "blocks=1",
    "-p",
    "batch_size=32",
    "-p",
    "max_len=12",
    "-p",
    "patience=0",
];

fn rcl(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rcl"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("RCL_DATA_DIR")
        .output()
        .expect("binary runs")
}

/// Runs `rcl` and returns the run directory it reports.
fn run_ok(out: &Path, args: &[&str]) -> PathBuf {
    let o = rcl(out, args);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(o.status.success(), "{args:?} failed:\n{stdout}\n{}", String::from_utf8_lossy(&o.stderr));
    let line = stdout
        .lines()
        .find_map(|l| l.strip_prefix("run directory: "))
        .expect("run directory line");
    PathBuf::from(line)
}

fn synth(out: &Path, users: &str) -> PathBuf {
    let dir = run_ok(
        out,
        &["synth", "--users", users, "--items", "100", "--intents", "5", "--max-len", "12", "--seed", "3"],
    );
    dir.join("sequences")
}

#[test]
fn missing_verb_prints_usage_and_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let o = rcl(tmp.path(), &[]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    let o = rcl(tmp.path(), &["frobnicate"]);
    assert!(!o.status.success());
}

#[test]
fn bad_config_fails_with_message() {
    let tmp = tempfile::tempdir().unwrap();
    let o = rcl(tmp.path(), &["--config", "/nonexistent/run.cfg", "synth"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("reading config"));
    let cfg = tmp.path().join("bad.cfg");
    fs::write(&cfg, "lambda=2\n").unwrap();
    let o = rcl(tmp.path(), &["--config", cfg.to_str().unwrap(), "synth"]);
    assert!(!o.status.success());
    let o = rcl(tmp.path(), &["--metric", "hamming", "synth"]);
    assert!(!o.status.success());
}

#[test]
fn index_has_ceil_alpha_n_neighbors() {
    let tmp = tempfile::tempdir().unwrap();
    let set = synth(tmp.path(), "1000");
    let run = run_ok(
        tmp.path(),
        &["index", "--set", set.to_str().unwrap(), "--metric", "jaccard", "--alpha", "0.05"],
    );
    let index = SimilarityIndex::read_binary(fs::read(run.join("index.bin")).unwrap().as_slice()).unwrap();
    assert_eq!(index.len(), 1000);
    assert_eq!(index.k, 50);
    assert!(index.neighbors.iter().all(|r| r.len() == 50));
    let csv = fs::read_to_string(run.join("index.csv")).unwrap();
    assert!(csv.lines().count() > 1000);
}

#[test]
fn training_is_reproducible_and_config_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let set = synth(tmp.path(), "200");
    let set_s = set.to_str().unwrap();
    let mut args = vec!["train", "--set", set_s, "--variant", "wrcl", "--seed", "5", "-p", "checkpoint_every=1"];
    args.extend(FAST);
    let first = run_ok(tmp.path(), &args);
    let name = first.file_name().unwrap().to_str().unwrap().to_string();
    assert!(name.starts_with("train-") && name.ends_with("-s5"), "{name}");
    let eval_a = fs::read_to_string(first.join("eval.csv")).unwrap();
    assert!(eval_a.starts_with("variant,k,hr,ndcg\nwrcl,5,"));
    assert_eq!(fs::read_to_string(first.join("steps.jsonl")).unwrap().lines().count(), 2 * 7);
    assert!(first.join("checkpoints/epoch-0002.bin").exists());

    // A second output root, so the identical config cannot reuse the run.
    let other = tmp.path().join("again");
    let second = run_ok(&other, &args);
    assert_eq!(fs::read_to_string(second.join("eval.csv")).unwrap(), eval_a);
    assert_eq!(fs::read(second.join("model.bin")).unwrap(), fs::read(first.join("model.bin")).unwrap());

    // Reloading the effective config reproduces the run directory name.
    let cfg = first.join("config.txt");
    let third = run_ok(&tmp.path().join("third"), &["train", "--set", set_s, "--config", cfg.to_str().unwrap()]);
    assert_eq!(third.file_name(), first.file_name());
    assert_eq!(fs::read_to_string(third.join("eval.csv")).unwrap(), eval_a);

    let ckpt = first.join("model.bin");
    let ev = run_ok(
        tmp.path(),
        &["eval", "--set", set_s, "--checkpoint", ckpt.to_str().unwrap(), "--variant", "wrcl", "--dots", "50"],
    );
    assert_eq!(fs::read_to_string(ev.join("eval.csv")).unwrap(), eval_a);
    let dots = fs::read_to_string(ev.join("dots.csv")).unwrap();
    assert!(dots.starts_with("kind,mean_dot,centers\nstrong,"));
}

#[test]
fn ablate_writes_one_row_per_pair() {
    let tmp = tempfile::tempdir().unwrap();
    let set = synth(tmp.path(), "200");
    let mut args = vec![
        "ablate",
        "--set",
        set.to_str().unwrap(),
        "--variants",
        "weak,wrcl",
        "--metrics",
        "jaccard,ngram2,levenshtein",
    ];
    args.extend(FAST);
    let run = run_ok(tmp.path(), &args);
    let csv = fs::read_to_string(run.join("ablation.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "variant,metric,hr@5,hr@10,ndcg@5,ndcg@10");
    assert_eq!(lines.len(), 1 + 6);
    assert!(lines[1..].iter().any(|l| l.starts_with("wrcl,levenshtein,")));
}

#[test]
fn histogram_and_preprocess() {
    let tmp = tempfile::tempdir().unwrap();
    let set = synth(tmp.path(), "200");
    let run = run_ok(tmp.path(), &["histogram", "--set", set.to_str().unwrap(), "--bins", "10"]);
    let csv = fs::read_to_string(run.join("histogram.csv")).unwrap();
    assert_eq!(csv.lines().count(), 11);
    assert!(csv.starts_with("bin_low,bin_high,count\n"));

    let raw = tmp.path().join("ratings.csv");
    let mut rows = String::new();
    for u in 0..6 {
        for t in 0..6 {
            rows.push_str(&format!("u{u},i{},{t}\n", (u + t) % 6));
        }
    }
    rows.push_str("lonely,i0,0\n");
    fs::write(&raw, rows).unwrap();
    let run = run_ok(tmp.path(), &["preprocess", "--input", raw.to_str().unwrap(), "--k", "5"]);
    let loaded = SequenceSet::load(run.join("sequences")).unwrap();
    assert_eq!(loaded.user_count, 6);
    assert_eq!(loaded.item_count, 6);
    assert_eq!(loaded.test.len(), 6);
    let raw_stats = fs::read_to_string(run.join("raw_stats.txt")).unwrap();
    assert!(raw_stats.contains("users=7"));
}

#[test]
fn data_dir_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let set = synth(tmp.path(), "200");
    let o = Command::new(env!("CARGO_BIN_EXE_rcl"))
        .args(["--out", tmp.path().to_str().unwrap(), "histogram"])
        .env("RCL_DATA_DIR", &set)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}
