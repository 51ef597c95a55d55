use super::*;
use proptest::prelude::{any, prop, prop_assert, prop_assert_eq, proptest, Strategy};

fn chain(ps: &[&str], links: &[&str]) -> CandidateChain {
    CandidateChain {
        passages: ps.iter().map(|s| s.to_string()).collect(),
        links: links.iter().map(|s| s.to_string()).collect(),
    }
}

fn gold(id: &str, ambiguous: bool, chains: Vec<CandidateChain>) -> GoldAnnotation {
    GoldAnnotation {
        id: id.into(),
        ambiguous,
        gold_chains: chains,
    }
}

fn pred(id: &str, ps: &[&str], links: Option<&[&str]>) -> PredictedChain {
    PredictedChain {
        id: id.into(),
        chain: PredictedPath {
            passages: ps.iter().map(|s| s.to_string()).collect(),
            links: links.map(|l| l.iter().map(|s| s.to_string()).collect()),
        },
        logprob: 0.0,
    }
}

fn rate(preds: &[PredictedChain], g: &[GoldAnnotation], mode: EvalMode) -> f64 {
    chain_accuracy(preds, g, mode, true).unwrap().value()
}

#[test]
fn exact_prediction_is_correct_in_both_modes() {
    let g = vec![gold("q", false, vec![chain(&["a", "b"], &["E"])])];
    let p = vec![pred("q", &["a", "b"], Some(&["E"]))];
    assert_eq!(rate(&p, &g, EvalMode::PassageEm), 1.0);
    assert_eq!(rate(&p, &g, EvalMode::FullChain), 1.0);
}

#[test]
fn wrong_order_fails_full_chain_only() {
    let g = vec![gold("q", false, vec![chain(&["a", "b"], &["E"])])];
    let p = vec![pred("q", &["b", "a"], Some(&["E"]))];
    assert_eq!(rate(&p, &g, EvalMode::PassageEm), 1.0);
    assert_eq!(rate(&p, &g, EvalMode::FullChain), 0.0);
}

#[test]
fn wrong_link_fails_full_chain_only() {
    let g = vec![gold("q", false, vec![chain(&["a", "b"], &["E"])])];
    let p = vec![pred("q", &["a", "b"], Some(&["F"]))];
    assert_eq!(rate(&p, &g, EvalMode::PassageEm), 1.0);
    assert_eq!(rate(&p, &g, EvalMode::FullChain), 0.0);
    let unlinked = vec![pred("q", &["a", "b"], None)];
    assert_eq!(rate(&unlinked, &g, EvalMode::FullChain), 0.0);
}

#[test]
fn any_gold_chain_counts() {
    let g = vec![gold("q", false, vec![chain(&["a", "b", "c"], &["E", "F"]), chain(&["a", "d", "c"], &["G", "H"])])];
    let p = vec![pred("q", &["a", "d", "c"], Some(&["G", "H"]))];
    assert_eq!(rate(&p, &g, EvalMode::FullChain), 1.0);
    assert_eq!(rate(&p, &g, EvalMode::PassageEm), 1.0);
}

#[test]
fn unknown_or_duplicate_ids_are_rejected() {
    let g = vec![gold("q", false, vec![chain(&["a", "b"], &["E"])])];
    let stray = vec![pred("zz", &["a", "b"], None)];
    assert!(matches!(chain_accuracy(&stray, &g, EvalMode::PassageEm, true), Err(Error::IdMismatch(_))));
    let twice = vec![pred("q", &["a", "b"], None), pred("q", &["a", "b"], None)];
    assert!(matches!(chain_accuracy(&twice, &g, EvalMode::PassageEm, true), Err(Error::IdMismatch(_))));
    let dup_gold = vec![g[0].clone(), g[0].clone()];
    assert!(chain_accuracy(&[], &dup_gold, EvalMode::PassageEm, true).is_err());
}

#[test]
fn missing_predictions_count_against_and_lower_coverage() {
    let g = vec![
        gold("q1", false, vec![chain(&["a", "b"], &["E"])]),
        gold("q2", false, vec![chain(&["c", "d"], &["E"])]),
    ];
    let p = vec![pred("q1", &["a", "b"], Some(&["E"]))];
    let report = evaluate(&p, &g, EvalMode::PassageEm, true, serde_json::Value::Null).unwrap();
    assert_eq!(report.chain_accuracy, Rate::new(1, 2));
    assert_eq!(report.coverage, Rate::new(1, 2));
    assert_eq!(report.records[1].predicted, None);
}

#[test]
fn ambiguous_questions_leave_the_order_sensitive_metric() {
    let g = vec![
        gold("q1", true, vec![chain(&["a", "b"], &["E"])]),
        gold("q2", false, vec![chain(&["c", "d"], &["E"])]),
    ];
    let p = vec![pred("q1", &["b", "a"], Some(&["E"])), pred("q2", &["c", "d"], Some(&["E"]))];
    assert_eq!(chain_accuracy(&p, &g, EvalMode::FullChain, true).unwrap(), Rate::new(1, 1));
    assert_eq!(chain_accuracy(&p, &g, EvalMode::FullChain, false).unwrap(), Rate::new(1, 2));
    assert_eq!(chain_accuracy(&p, &g, EvalMode::PassageEm, true).unwrap(), Rate::new(2, 2));
}

#[test]
fn head_tail_recall_examples() {
    let g: Vec<GoldAnnotation> = (0..4).map(|i| gold(&format!("q{i}"), false, vec![chain(&["h", "t"], &["E"])])).collect();
    let all: Vec<PredictedChain> = (0..4).map(|i| pred(&format!("q{i}"), &["h", "t"], None)).collect();
    let (h, t) = head_tail_recall(&all, &g).unwrap();
    assert_eq!((h.value(), t.value()), (1.0, 1.0));
    let bad_heads: Vec<PredictedChain> = (0..4).map(|i| pred(&format!("q{i}"), &["x", "t"], None)).collect();
    let (h, t) = head_tail_recall(&bad_heads, &g).unwrap();
    assert_eq!((h.value(), t.value()), (0.0, 1.0));
    let only_ambiguous = vec![gold("q0", true, vec![chain(&["h", "t"], &["E"])])];
    let (h, t) = head_tail_recall(&all[..1], &only_ambiguous).unwrap();
    assert_eq!((h.rate, t.rate, h.total), (None, None, 0));
}

#[test]
fn head_tail_recall_recount() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let ids = ["a", "b", "c", "d"];
    let mut g = Vec::new();
    let mut p = Vec::new();
    for i in 0..300 {
        let h = ids[rng.gen_range(0..4)];
        let t = ids[rng.gen_range(0..4)];
        g.push(gold(&format!("q{i}"), rng.gen_bool(0.3), vec![chain(&[h, t], &["E"])]));
        if rng.gen_bool(0.9) {
            p.push(pred(&format!("q{i}"), &[ids[rng.gen_range(0..4)], ids[rng.gen_range(0..4)]], None));
        }
    }
    let (h, t) = head_tail_recall(&p, &g).unwrap();
    // Recount by walking predictions instead of gold.
    let clear: BTreeMap<&str, &GoldAnnotation> = g.iter().filter(|g| !g.ambiguous).map(|g| (g.id.as_str(), g)).collect();
    let mut hits = (0, 0);
    for x in &p {
        if let Some(gg) = clear.get(x.id.as_str()) {
            hits.0 += usize::from(gg.gold_chains[0].passages[0] == x.chain.passages[0]);
            hits.1 += usize::from(gg.gold_chains[0].passages[1] == x.chain.passages[1]);
        }
    }
    assert_eq!(h.total, clear.len());
    assert_eq!((h.correct, t.correct), hits);
}

fn sets(entries: Vec<(&str, Vec<CandidateChain>)>) -> BTreeMap<String, Vec<CandidateChain>> {
    entries.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

#[test]
fn random_baseline_singleton_sets_are_exact() {
    let g: Vec<GoldAnnotation> = (0..10).map(|i| gold(&format!("q{i}"), false, vec![chain(&["a", "b"], &["E"])])).collect();
    let c = sets((0..10).map(|i| (["q0", "q1", "q2", "q3", "q4", "q5", "q6", "q7", "q8", "q9"][i], vec![chain(&["a", "b"], &["E"])])).collect());
    let r = random_baseline(&c, &g, EvalMode::FullChain, 100, 1);
    assert_eq!(r.exact, 1.0);
    assert_eq!(r.estimate, 1.0);
    assert_eq!(r.stderr, 0.0);
}

#[test]
fn random_baseline_four_way_choice() {
    let n = 2000;
    let ids: Vec<String> = (0..n).map(|i| format!("q{i}")).collect();
    let g: Vec<GoldAnnotation> = ids.iter().map(|id| gold(id, false, vec![chain(&["a", "b"], &["E"])])).collect();
    let four = vec![
        chain(&["a", "b"], &["E"]),
        chain(&["c", "b"], &["E"]),
        chain(&["a", "d"], &["E"]),
        chain(&["c", "d"], &["F"]),
    ];
    let c: BTreeMap<String, Vec<CandidateChain>> = ids.iter().map(|id| (id.clone(), four.clone())).collect();
    let r = random_baseline(&c, &g, EvalMode::FullChain, 50, 2);
    assert!((r.exact - 0.25).abs() < 1e-15);
    assert!((r.estimate - r.exact).abs() <= 3.0 * r.stderr);
}

#[test]
fn random_baseline_counts_empty_sets_as_misses() {
    let g = vec![
        gold("q1", false, vec![chain(&["a", "b"], &["E"])]),
        gold("q2", false, vec![chain(&["a", "b"], &["E"])]),
    ];
    let c = sets(vec![("q1", vec![chain(&["a", "b"], &["E"])]), ("q2", vec![])]);
    let r = random_baseline(&c, &g, EvalMode::PassageEm, 10, 0);
    assert_eq!(r.exact, 0.5);
    assert_eq!(r.estimate, 0.5);
}

#[test]
fn random_baseline_matches_expectation_on_generated_data() {
    for (variant, seed) in [(SynthVariant::Standard, 1u64), (SynthVariant::EntityAmbiguous, 2)] {
        let cfg = SynthConfig {
            questions: 300,
            variant,
            ..SynthConfig::default()
        };
        let (corpus, g) = generate_synthetic(&cfg, seed).unwrap();
        let c = candidate_sets(&corpus, 2);
        // Independent recount of the expectation.
        let mut total = 0.0;
        for gg in &g {
            let cs = &c[&gg.id];
            let ok = cs
                .iter()
                .filter(|x| {
                    let a: BTreeSet<&String> = x.passages.iter().collect();
                    let b: BTreeSet<&String> = gg.gold_chains[0].passages.iter().collect();
                    a == b
                })
                .count();
            total += ok as f64 / cs.len() as f64;
        }
        let r = random_baseline(&c, &g, EvalMode::PassageEm, 1000, seed);
        assert!((r.exact - total / g.len() as f64).abs() < 1e-12);
        assert!((r.estimate - r.exact).abs() <= 3.0 * r.stderr, "{r:?}");
    }
}

fn arb_case() -> impl Strategy<Value = (Vec<GoldAnnotation>, Vec<PredictedChain>)> {
    let ids = ["a", "b", "c", "d"];
    prop::collection::vec((0usize..4, 0usize..4, 0usize..2, any::<bool>(), 0usize..4, 0usize..4, 0usize..2, 0u8..3), 1..40).prop_map(
        move |rows| {
            let mut g = Vec::new();
            let mut p = Vec::new();
            for (i, (h, t, l, amb, ph, pt, pl, kind)) in rows.into_iter().enumerate() {
                let id = format!("q{i}");
                let links = ["E", "F"];
                g.push(gold(&id, amb, vec![chain(&[ids[h], ids[t]], &[links[l]])]));
                match kind {
                    0 => {}
                    1 => p.push(pred(&id, &[ids[h], ids[t]], Some(&[links[l]]))),
                    _ => p.push(pred(&id, &[ids[ph], ids[pt]], Some(&[links[pl]]))),
                }
            }
            (g, p)
        },
    )
}

fn as_predictions(g: &[GoldAnnotation]) -> Vec<PredictedChain> {
    g.iter().map(|g| PredictedChain::from_candidate(&g.id, &g.gold_chains[0], 0.0)).collect()
}

proptest! {
    #[test]
    fn gold_predictions_score_one((g, _) in arb_case()) {
        let p = as_predictions(&g);
        for mode in [EvalMode::PassageEm, EvalMode::FullChain] {
            prop_assert_eq!(chain_accuracy(&p, &g, mode, false).unwrap().value(), 1.0);
        }
    }

    #[test]
    fn metrics_ignore_question_order((g, p) in arb_case(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut g2, mut p2) = (g.clone(), p.clone());
        g2.shuffle(&mut rng);
        p2.shuffle(&mut rng);
        for mode in [EvalMode::PassageEm, EvalMode::FullChain] {
            prop_assert_eq!(chain_accuracy(&p, &g, mode, true).unwrap(), chain_accuracy(&p2, &g2, mode, true).unwrap());
        }
        prop_assert_eq!(head_tail_recall(&p, &g).unwrap(), head_tail_recall(&p2, &g2).unwrap());
    }

    #[test]
    fn passage_em_dominates_full_chain((g, p) in arb_case()) {
        let em = chain_accuracy(&p, &g, EvalMode::PassageEm, false).unwrap();
        let full = chain_accuracy(&p, &g, EvalMode::FullChain, false).unwrap();
        prop_assert!(em.value() >= full.value());
        let full_excl = chain_accuracy(&p, &g, EvalMode::FullChain, true).unwrap();
        prop_assert!(em.correct >= full_excl.correct);
    }
}

fn tiny_suite(seed: u64) -> BenchmarkSuite {
    let mut train = benchmark_train_config();
    train.epochs = 1;
    train.cooperative_epochs = 2;
    train.batch_size = 8;
    train.model.embed_dim = 4;
    train.model.match_hidden = 3;
    train.model.reasoner_dim = 4;
    let mut ablation = tail_rare_dataset();
    ablation.synth.questions = 0;
    BenchmarkSuite {
        seed,
        seeds: 1,
        train_questions: 12,
        dev_questions: 6,
        ablation: Some(AblationSpec {
            dataset: ablation,
            cooperative_rows: true,
        }),
        train,
        random_trials: 20,
        ..BenchmarkSuite::default()
    }
}

#[test]
fn benchmark_layout_and_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let suite = tiny_suite(5);
    let ra = run_benchmark(&suite, Some(&a)).unwrap();
    let rb = run_benchmark(&suite, Some(&b)).unwrap();
    assert_eq!(ra, rb);
    assert_eq!(ra.methods.len(), 4);
    for row in &ra.methods {
        assert_eq!(row.cells.len(), suite.datasets.len());
    }
    assert_eq!(ra.ablation.len(), 4);
    assert_eq!(ra.ablation[0].direction, Direction::HeadFirst);
    let text = std::fs::read_to_string(a.join("tables.txt")).unwrap();
    for m in Method::ALL {
        assert!(text.contains(m.label()));
    }
    assert!(text.contains("Head/Tail"));
    // Every written file matches byte for byte.
    let files = |root: &Path| -> Vec<(PathBuf, Vec<u8>)> {
        let mut out = Vec::new();
        let mut stack = vec![root.to_path_buf()];
        while let Some(d) = stack.pop() {
            for e in std::fs::read_dir(&d).unwrap() {
                let p = e.unwrap().path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    out.push((p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
                }
            }
        }
        out.sort();
        out
    };
    let (fa, fb) = (files(&a), files(&b));
    assert!(fa.iter().any(|(p, _)| p.extension().is_some_and(|e| e == "ckpt")));
    assert_eq!(fa, fb);
}

#[test]
fn independent_report_has_the_main_schema() {
    let cfg = SynthConfig {
        questions: 8,
        ..SynthConfig::default()
    };
    let (corpus, g) = generate_synthetic(&cfg, 3).unwrap();
    let mut train = tiny_suite(0).train;
    train.epochs = 1;
    let dev = DevSet {
        corpus: &corpus,
        gold: &g,
        hops: 2,
        direction: Direction::TailFirst,
        mode: EvalMode::PassageEm,
    };
    let (trainer, report) = independent_baseline(&corpus, &dev, &train).unwrap();
    assert!(!trainer.ranker.config().conditional);
    let cond = train_ranker(&corpus, &train, true, &TrainOptions::default()).unwrap();
    let main = dev.report(&cond.ranker, &cond.params, serde_json::to_value(&train).unwrap()).unwrap();
    let keys = |r: &EvalReport| -> Vec<String> {
        match serde_json::to_value(r).unwrap() {
            serde_json::Value::Object(m) => m.keys().cloned().collect(),
            _ => unreachable!(),
        }
    };
    assert_eq!(keys(&report), keys(&main));
    assert_eq!(report.records.len(), 8);
}

#[test]
fn suite_validation() {
    assert!(BenchmarkSuite::default().validate().is_ok());
    let mut s = BenchmarkSuite::default();
    s.datasets.push(s.datasets[0].clone());
    assert!(s.validate().is_err());
    let s = BenchmarkSuite {
        seeds: 0,
        ..BenchmarkSuite::default()
    };
    assert!(s.validate().is_err());
}

#[test]
fn slugs() {
    assert_eq!(label_slug("+ Cooperative Reasoner on Head"), "cooperative-reasoner-on-head");
    assert_eq!(label_slug("Conditional Selection (Tail to Head)"), "conditional-selection-tail-to-head");
}
