//! End-to-end checks of the command-line pipeline.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hmgrec"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("spawn hmgrec");
    assert!(
        out.status.success(),
        "command {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn run_err(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("spawn hmgrec");
    assert!(!out.status.success(), "command {args:?} unexpectedly passed");
    out
}

fn p(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

fn s(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// synth -> ingest -> train -> evaluate in `dir`; returns the report JSON.
fn pipeline(dir: &Path, seed: &str) -> String {
    let log = p(dir, "log.csv");
    let ds = p(dir, "ds.json");
    let ckpt = p(dir, "model.json");
    let history = p(dir, "loss.csv");
    let report = p(dir, "report.json");
    run_ok(&[
        "synth", "--users", "60", "--items", "40", "--seed", seed, "--output", s(&log),
    ]);
    run_ok(&["ingest", "--input", s(&log), "--output", s(&ds)]);
    run_ok(&[
        "train", "--data", s(&ds), "--checkpoint", s(&ckpt), "--history", s(&history),
        "--epochs", "3", "--seed", seed, "--encoder", "gcn",
    ]);
    run_ok(&[
        "evaluate", "--checkpoint", s(&ckpt), "--data", s(&ds), "--report", s(&report),
        "--seed", seed,
    ]);
    fs::read_to_string(report).unwrap()
}

#[test]
fn synth_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let a = p(dir.path(), "a.csv");
    let b = p(dir.path(), "b.csv");
    for out in [&a, &b] {
        run_ok(&[
            "synth", "--users", "50", "--items", "30",
            "--mix", "direct-buy=0.5,view-then-buy=0.5",
            "--seed", "7", "--output", s(out),
        ]);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn full_pipeline_is_reproducible() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let report_a = pipeline(dir_a.path(), "13");
    let report_b = pipeline(dir_b.path(), "13");
    assert_eq!(report_a, report_b, "report JSON must be byte-identical");
    assert!(report_a.contains("\"metrics\""));

    let history = fs::read_to_string(p(dir_a.path(), "loss.csv")).unwrap();
    let mut lines = history.lines();
    assert_eq!(lines.next(), Some("epoch,contra_loss,rec_loss"));
    assert_eq!(lines.count(), 3);
}

#[test]
fn recommend_prints_ranked_items() {
    let dir = tempfile::tempdir().unwrap();
    pipeline(dir.path(), "5");
    let out = run_ok(&[
        "recommend",
        "--checkpoint", s(&p(dir.path(), "model.json")),
        "--data", s(&p(dir.path(), "ds.json")),
        "--user", "0",
        "--k", "5",
    ]);
    let stdout = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = stdout.lines().collect();
    assert_eq!(rows.len(), 5);
    assert!(rows[0].starts_with("1\t"));
}

#[test]
fn evaluate_rejects_mismatched_dataset() {
    let dir = tempfile::tempdir().unwrap();
    pipeline(dir.path(), "3");
    // regenerate a different dataset under the same path
    let log = p(dir.path(), "log2.csv");
    let other = p(dir.path(), "other.json");
    run_ok(&["synth", "--users", "55", "--items", "40", "--seed", "9", "--output", s(&log)]);
    run_ok(&["ingest", "--input", s(&log), "--output", s(&other)]);
    let out = run_err(&[
        "evaluate",
        "--checkpoint", s(&p(dir.path(), "model.json")),
        "--data", s(&other),
        "--report", s(&p(dir.path(), "r2.json")),
    ]);
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("fingerprint"), "stderr: {stderr}");
}

#[test]
fn unknown_config_keys_are_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = p(dir.path(), "bad.toml");
    fs::write(&cfg, "[train]\nlearning_rate = 0.1\n").unwrap();
    let out = run_err(&["--config", s(&cfg), "gradcheck"]);
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.starts_with("error:"), "stderr: {stderr}");
    assert!(stderr.contains("learning_rate"));
}

#[test]
fn missing_input_fails_with_one_line_error() {
    let out = run_err(&["ingest", "--input", "/nonexistent.csv", "--output", "/tmp/x.json"]);
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.lines().next().unwrap().starts_with("error:"));
}

#[test]
fn gradcheck_command_passes_with_defaults() {
    let out = run_ok(&["gradcheck", "--encoder", "gcn", "--fusion", "mean"]);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("gradcheck passed"));
    assert!(!stdout.contains("FAIL"));
}

#[test]
fn graph_dump_is_valid_json() {
    let dir = tempfile::tempdir().unwrap();
    let log = p(dir.path(), "log.csv");
    let ds = p(dir.path(), "ds.json");
    run_ok(&["synth", "--users", "30", "--items", "30", "--seed", "2", "--output", s(&log)]);
    run_ok(&["ingest", "--input", s(&log), "--output", s(&ds)]);
    let out = run_ok(&["graph", "--data", s(&ds), "--user", "0", "--level", "3"]);
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(doc["nodes"].as_array().unwrap().len() >= 2);
    assert_eq!(doc["level"], 3);
}

#[test]
fn stats_json_mirrors_the_statistics_table() {
    let dir = tempfile::tempdir().unwrap();
    let log = p(dir.path(), "log.csv");
    let ds = p(dir.path(), "ds.json");
    let stats = p(dir.path(), "stats.json");
    run_ok(&["synth", "--users", "40", "--items", "30", "--seed", "4", "--output", s(&log)]);
    run_ok(&["ingest", "--input", s(&log), "--output", s(&ds), "--stats", s(&stats)]);
    let doc: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&stats).unwrap()).unwrap();
    assert!(doc["users"].as_u64().unwrap() > 0);
    assert!(doc["items"].as_u64().unwrap() > 0);
    let behaviors = doc["behaviors"].as_array().unwrap();
    assert_eq!(behaviors.len(), 4);
    let pct: f64 = behaviors.iter().map(|b| b["percentage"].as_f64().unwrap()).sum();
    assert!((pct - 100.0).abs() < 0.01);
}
