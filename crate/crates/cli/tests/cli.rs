use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/payslips_synth").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_layoutlab")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// Exits nonzero with exactly one diagnostic line.
fn fails(args: &[&str]) -> String {
    let out = run(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    err
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn stats_matches_fixture_manifest() {
    let out = ok(&["stats", "--data", s(&fixture("test.jsonl")), "--labels", s(&fixture("labels.txt")), "--json"]);
    let got: serde_json::Value = serde_json::from_str(&out).unwrap();
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(fixture("manifest.json")).unwrap()).unwrap();
    let want = &manifest["test"];
    assert_eq!(got["pages"], want["pages"]);
    assert_eq!(got["outside"], want["outside"]);
    assert_eq!(got["total"], want["total"]);
    for pair in got["per_label"].as_array().unwrap() {
        let (label, count) = (pair[0].as_str().unwrap(), &pair[1]);
        assert_eq!(count, &want["labels"][label], "{label}");
    }
    let table = ok(&["stats", "--data", s(&fixture("test.jsonl")), "--labels", s(&fixture("labels.txt"))]);
    assert!(table.contains("PAY_DATE"));
}

#[test]
fn ingest_round_trips_and_rejects_bad_tags() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("clean.jsonl");
    let msg = ok(&["ingest", "--input", s(&fixture("test.jsonl")), "--format", "jsonl", "--labels", s(&fixture("labels.txt")), "--out", s(&out)]);
    assert!(msg.contains("12 pages"));
    assert_eq!(fs::read_to_string(&out).unwrap(), fs::read_to_string(fixture("test.jsonl")).unwrap());

    let labels = dir.path().join("one.txt");
    fs::write(&labels, "PAY_DATE\n").unwrap();
    let err = fails(&["ingest", "--input", s(&fixture("test.jsonl")), "--labels", s(&labels), "--out", s(&out)]);
    assert!(err.starts_with("error:"));
    fails(&["ingest", "--input", s(&dir.path().join("missing.jsonl")), "--labels", s(&labels), "--out", s(&out)]);
}

#[test]
fn full_pipeline_on_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    let (train, test, labels) = (fixture("train.jsonl"), fixture("test.jsonl"), fixture("labels.txt"));

    ok(&["build-vocab", "--data", s(&train), "--min-freq", "1", "--out", s(&p("vocab.txt"))]);
    let header = fs::read_to_string(p("vocab.txt")).unwrap();
    assert!(header.starts_with("#vocab v1 lowercase=1"));
    ok(&["build-vocab", "--data", s(&train), "--no-lowercase", "--out", s(&p("cased.txt"))]);
    assert!(fs::read_to_string(p("cased.txt")).unwrap().starts_with("#vocab v1 lowercase=0"));

    fs::write(p("model.cfg"), "# tiny\nhidden = 16\nlayers = 2\nheads = 2\nff_dim = 32\nmax_seq = 96\n").unwrap();
    let out = ok(&[
        "pretrain", "--data", s(&train), "--vocab", s(&p("vocab.txt")), "--model-config", s(&p("model.cfg")),
        "--batch", "8", "--epochs", "1", "--lr", "1e-3", "--warmup-frac", "0.2", "--mask-rate", "0.15",
        "--seed", "3", "--out", s(&p("pre.ckpt")),
    ]);
    assert!(out.contains("pre-trained 2 layers for 5 updates"));
    assert!(p("pre.ckpt.vocab").exists());
    let log = fs::read_to_string(p("pre.ckpt.loss.tsv")).unwrap();
    assert_eq!(log.lines().count(), 5);

    let out = ok(&[
        "finetune", "--ckpt", s(&p("pre.ckpt")), "--data", s(&test), "--labels", s(&labels), "--batch", "4",
        "--epochs", "1", "--lr", "1e-3", "--seed", "1", "--eval-data", s(&test), "--out", s(&p("ner.ckpt")),
    ]);
    let summary: serde_json::Value = serde_json::from_str(out.lines().last().unwrap()).unwrap();
    assert_eq!(summary["seed"], 1);
    assert!(summary["f1"].is_number());

    let report = ok(&[
        "eval", "--ckpt", s(&p("ner.ckpt")), "--data", s(&test), "--labels", s(&labels),
        "--scores-out", s(&p("a.txt")), "--json", s(&p("report.json")),
    ]);
    assert!(report.contains("micro") && report.contains("layers: 2"));
    assert_eq!(fs::read_to_string(p("a.txt")).unwrap().lines().count(), 12);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(p("report.json")).unwrap()).unwrap();
    assert_eq!(json["documents"], 12);
    let cut = ok(&[
        "eval", "--ckpt", s(&p("ner.ckpt")), "--data", s(&test), "--labels", s(&labels), "--layers", "1",
        "--scores-out", s(&p("b.txt")),
    ]);
    assert!(cut.contains("layers: 1"));

    let sig = ok(&["significance", "--scores-a", s(&p("a.txt")), "--scores-b", s(&p("b.txt")), "--iterations", "999", "--seed", "4"]);
    assert!(sig.contains("significance"));
    let exact = ok(&["significance", "--scores-a", s(&p("a.txt")), "--scores-b", s(&p("a.txt")), "--exact"]);
    let last: serde_json::Value = serde_json::from_str(exact.lines().last().unwrap()).unwrap();
    assert_eq!(last["significance_level"], 1.0);
    assert_eq!(last["iterations"], 4096);

    let out = ok(&[
        "multirun", "--ckpt", s(&p("pre.ckpt")), "--data", s(&test), "--labels", s(&labels), "--batch", "6",
        "--epochs", "1", "--lr", "1e-3", "--seeds", "7,7", "--out", s(&p("runs")),
    ]);
    assert!(out.contains("2 runs"));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(p("runs/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["f1"]["std"], 0.0);
    assert_eq!(summary["partial"], false);
    assert_eq!(fs::read_to_string(p("runs/runs.jsonl")).unwrap().lines().count(), 2);
    assert!(p("runs/scores_seed7.txt").exists());

    let table = ok(&[
        "bench", "--ckpt", s(&p("ner.ckpt")), "--data", s(&test), "--layers", "1,2", "--warmup", "1", "--reps", "3",
        "--labels", s(&labels), "--json", s(&p("bench.json")),
    ]);
    assert_eq!(table.lines().count(), 4);
    let rows: serde_json::Value = serde_json::from_str(&fs::read_to_string(p("bench.json")).unwrap()).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 2);
    assert_eq!(rows[1]["timing"]["layers"], 2);

    // failure paths, each a single diagnostic line
    fails(&["eval", "--ckpt", s(&p("pre.ckpt")), "--data", s(&test), "--labels", s(&labels)]);
    fails(&["eval", "--ckpt", s(&p("ner.ckpt")), "--data", s(&test), "--labels", s(&labels), "--layers", "3"]);
    let err = fails(&[
        "finetune", "--ckpt", s(&p("pre.ckpt")), "--vocab", s(&p("cased.txt")), "--data", s(&test), "--labels",
        s(&labels), "--out", s(&p("x.ckpt")),
    ]);
    assert!(err.contains("fingerprint") || err.contains("vocab"), "{err}");
    fails(&["bench", "--ckpt", s(&p("ner.ckpt")), "--data", s(&test), "--reps", "2"]);
    fails(&["multirun", "--ckpt", s(&p("pre.ckpt")), "--data", s(&test), "--labels", s(&labels), "--seeds", "3", "--out", s(&p("r2"))]);
}

#[test]
fn significance_input_errors() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    fs::write(&a, "0.5\n1.0\n").unwrap();
    fs::write(&b, "0.5\n").unwrap();
    fails(&["significance", "--scores-a", s(&a), "--scores-b", s(&b)]);
    fs::write(&b, "0.5\nnope\n").unwrap();
    let err = fails(&["significance", "--scores-a", s(&a), "--scores-b", s(&b)]);
    assert!(err.contains("line 2"));
    fs::write(&b, "1.0\n0.0\n").unwrap();
    let out = ok(&["significance", "--scores-a", s(&a), "--scores-b", s(&b), "--exact"]);
    assert!(out.contains("not highly significant"));
}
