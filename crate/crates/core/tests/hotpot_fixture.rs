//! The hand-built HotpotQA-format fixture: loading, ambiguity flags and
//! hand-computed passage_em values.

use std::path::Path;

use chainrec::corpus::{load_corpus, load_gold, order_ambiguous};
use chainrec::eval::{evaluate, EvalMode};
use chainrec::ranker::load_predictions;

fn fixture(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/hotpot20").join(name)
}

#[test]
fn ambiguity_flags_follow_the_answer_rule() {
    let corpus = load_corpus(&fixture("corpus.jsonl")).unwrap();
    let gold = load_gold(&fixture("gold.jsonl")).unwrap();
    let flagged: Vec<&str> = gold.iter().filter(|g| g.ambiguous).map(|g| g.id.as_str()).collect();
    assert_eq!(flagged, ["hp16"]);
    for g in &gold {
        let inst = corpus.iter().find(|q| q.id == g.id).unwrap();
        assert_eq!(g.ambiguous, order_ambiguous(inst, &g.gold_chains[0]), "{}", g.id);
    }
}

#[test]
fn passage_em_matches_hand_computed_values() {
    let gold = load_gold(&fixture("gold.jsonl")).unwrap();
    let preds = load_predictions(&fixture("preds.jsonl")).unwrap();
    let expected: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(fixture("expected.json")).unwrap()).unwrap();
    let report = evaluate(&preds, &gold, EvalMode::PassageEm, true, serde_json::Value::Null).unwrap();
    for r in &report.records {
        assert_eq!(Some(r.passage_em), expected["passage_em"][&r.id].as_bool(), "{}", r.id);
    }
    assert_eq!(report.passage_em.correct as u64, expected["correct"].as_u64().unwrap());
    assert_eq!(report.passage_em.total as u64, expected["total"].as_u64().unwrap());
}
