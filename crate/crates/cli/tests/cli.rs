use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn chainrec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chainrec")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = chainrec(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).expect("utf-8 output")
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn lines(p: &Path) -> usize {
    fs::read_to_string(p).expect("readable").lines().count()
}

#[test]
fn generate_extract_train_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let synth = root.join("synth.json");
    fs::write(&synth, r#"{"questions": 24, "pool_size": 5}"#).unwrap();
    let data = root.join("data");
    ok(&["gen-synth", "--config", s(&synth), "--out", s(&data), "--seed", "4"]);
    let corpus = data.join("corpus.jsonl");
    assert_eq!(lines(&corpus), 24);
    assert_eq!(lines(&data.join("gold.jsonl")), 24);

    let chains = root.join("chains.jsonl");
    ok(&["extract-chains", "--corpus", s(&corpus), "--hops", "2", "--out", s(&chains)]);
    for l in fs::read_to_string(&chains).unwrap().lines() {
        let v: serde_json::Value = serde_json::from_str(l).unwrap();
        assert!(!v["chains"].as_array().unwrap().is_empty(), "every generated question has its gold chain");
    }

    let train = root.join("train.json");
    fs::write(&train, r#"{"epochs": 1, "batch_size": 8, "model": {"embed_dim": 6, "hidden_dim": 4, "match_hidden": 4}}"#).unwrap();
    let run = root.join("run");
    ok(&["train", "--corpus", s(&corpus), "--mode", "ranker", "--config", s(&train), "--out", s(&run), "--seed", "1"]);
    for f in ["ranker.ckpt", "log.jsonl", "config.json", "preds.jsonl"] {
        assert!(run.join(f).is_file(), "{f} written");
    }

    let again = root.join("again.jsonl");
    ok(&["predict", "--checkpoint", s(&run.join("ranker.ckpt")), "--corpus", s(&corpus), "--out", s(&again)]);
    assert_eq!(fs::read(&again).unwrap(), fs::read(run.join("preds.jsonl")).unwrap());

    let report = root.join("report.json");
    let stdout = ok(&["eval", "--corpus", s(&corpus), "--gold", s(&data.join("gold.jsonl")), "--preds", s(&again), "--mode", "passage_em", "--report", s(&report)]);
    assert!(stdout.contains("passage_em"));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["passage_em"]["total"], 24);
}

#[test]
fn seed_is_required() {
    let dir = tempfile::tempdir().unwrap();
    let out = chainrec(&["gen-synth", "--out", s(dir.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--seed"));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"questoins": 3}"#).unwrap();
    let out = chainrec(&["gen-synth", "--config", s(&cfg), "--out", s(&dir.path().join("x")), "--seed", "0"]);
    assert!(!out.status.success());
}

#[test]
fn eval_rejects_passages_outside_the_pool() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    fs::write(dir.path().join("s.json"), r#"{"questions": 3}"#).unwrap();
    ok(&["gen-synth", "--config", s(&dir.path().join("s.json")), "--out", s(&data), "--seed", "0"]);
    let preds = dir.path().join("preds.jsonl");
    let gold = fs::read_to_string(data.join("gold.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(gold.lines().next().unwrap()).unwrap();
    let line = serde_json::json!({"id": first["id"], "chain": {"passages": ["nope", "nada"], "links": ["e"]}, "logprob": -1.0});
    fs::write(&preds, format!("{line}\n")).unwrap();
    let out = chainrec(&[
        "eval", "--corpus", s(&data.join("corpus.jsonl")), "--gold", s(&data.join("gold.jsonl")), "--preds", s(&preds), "--report", s(&dir.path().join("r.json")),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("not in its pool"));
}
