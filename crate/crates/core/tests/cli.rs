//! Smoke test for the `orlog` binary: synth -> index -> retrieve ->
//! rerank -> eval -> cost, checking exit codes and that the perfect
//! mock oracle lifts P@1 to the ceiling.

use std::path::Path;
use std::process::Command;

use tempfile::TempDir;

fn orlog(args: &[&str], dir: &Path) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_orlog"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "orlog {args:?} failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf8 stdout")
}

#[test]
fn full_cli_walkthrough() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();

    orlog(
        &[
            "synth",
            "--out",
            ".",
            "--seed",
            "7",
            "--entities",
            "120",
            "--queries-per-template",
            "3",
            "--noise",
            "0",
        ],
        dir,
    );
    for f in ["corpus.jsonl", "queries.jsonl", "qrels.txt", "oracle.tsv"] {
        assert!(dir.join(f).exists(), "{f} not written");
    }

    orlog(
        &["index", "--corpus", "corpus.jsonl", "--out", "index.json"],
        dir,
    );

    orlog(
        &[
            "retrieve",
            "--index",
            "index.json",
            "--queries",
            "queries.jsonl",
            "--out",
            "base.run",
            "--k",
            "20",
        ],
        dir,
    );
    let base = std::fs::read_to_string(dir.join("base.run")).unwrap();
    assert!(base.lines().all(|l| l.split_whitespace().count() == 6));

    orlog(
        &[
            "rerank",
            "--queries",
            "queries.jsonl",
            "--corpus",
            "corpus.jsonl",
            "--index",
            "index.json",
            "--out",
            "reranked.run",
            "--ledger",
            "ledger.jsonl",
            "--backend",
            "mock",
            "--mock-table",
            "oracle.tsv",
            "--mode",
            "parametric",
            "--k",
            "20",
        ],
        dir,
    );

    let base_eval = orlog(&["eval", "--run", "base.run", "--qrels", "qrels.txt"], dir);
    let rerank_eval = orlog(
        &[
            "eval",
            "--run",
            "reranked.run",
            "--qrels",
            "qrels.txt",
            "--baseline",
            "base.run",
            "--queries",
            "queries.jsonl",
            "--json",
            "report.json",
            "--csv",
            "breakdown.csv",
        ],
        dir,
    );
    assert!(dir.join("report.json").exists());
    assert!(dir.join("breakdown.csv").exists());

    // with exact 0/1 mock priors the reranked P@1 must beat or match base.
    // the metrics table is a header row followed by a values row; P@1 is
    // the first column.
    let p1 = |report: &str| -> f64 {
        let lines: Vec<&str> = report.lines().collect();
        let header = lines
            .iter()
            .position(|l| l.split_whitespace().next() == Some("P@1"))
            .unwrap_or_else(|| panic!("no metrics header in:\n{report}"));
        lines[header + 1]
            .split_whitespace()
            .next()
            .and_then(|v| v.parse().ok())
            .unwrap_or_else(|| panic!("no P@1 value in:\n{report}"))
    };
    assert!(
        p1(&rerank_eval) >= p1(&base_eval),
        "rerank P@1 {} below base {}",
        p1(&rerank_eval),
        p1(&base_eval)
    );

    let cost = orlog(&["cost", "--ledger", "ledger.jsonl"], dir);
    let mean: f64 = cost
        .lines()
        .find(|l| l.starts_with("avg tokens/pair"))
        .and_then(|l| l.split_whitespace().last())
        .and_then(|v| v.parse().ok())
        .unwrap_or_else(|| panic!("unparseable cost output:\n{cost}"));
    assert!(mean > 0.0);
}

#[test]
fn bad_input_exits_nonzero() {
    let tmp = TempDir::new().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_orlog"))
        .args(["index", "--corpus", "missing.jsonl", "--out", "index.json"])
        .current_dir(tmp.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(!out.stderr.is_empty(), "expected a diagnostic on stderr");
}
