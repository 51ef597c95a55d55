use super::*;

fn passage(id: &str, tokens: Vec<usize>, entities: &[&str]) -> Passage {
    let mentions = entities
        .iter()
        .enumerate()
        .map(|(i, e)| Mention {
            entity: e.to_string(),
            start: i % tokens.len(),
            end: i % tokens.len() + 1,
        })
        .collect();
    Passage {
        id: id.into(),
        tokens,
        mentions,
    }
}

fn instance(answer: Answer, query: &[&str], passages: Vec<Passage>) -> QuestionInstance {
    QuestionInstance {
        id: "x".into(),
        question: vec![1, 2],
        answer,
        query_entities: query.iter().map(|s| s.to_string()).collect(),
        passages,
        degenerate: false,
    }
}

fn chain(ps: &[&str], links: &[&str]) -> CandidateChain {
    CandidateChain {
        passages: ps.iter().map(|s| s.to_string()).collect(),
        links: links.iter().map(|s| s.to_string()).collect(),
    }
}

fn write_lines(lines: &[&str]) -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    for l in lines {
        writeln!(f, "{l}").unwrap();
    }
    f
}

const GOOD: &str = r#"{"id":"a","question":[1,2],"answer_entity":null,"answer_tokens":[7,8],"query_entities":["E1"],"passages":[{"id":"p0","tokens":[1,7,8,2],"mentions":[{"entity":"E1","start":0,"end":1}]}]}"#;

#[test]
fn contains_answer_modes() {
    let p = passage("p", vec![1, 7, 8, 2], &["A"]);
    let tokens = instance(Answer::Tokens(vec![7, 8]), &[], vec![p.clone()]);
    assert!(contains_answer(&p, &tokens));
    let reversed = instance(Answer::Tokens(vec![8, 7]), &[], vec![p.clone()]);
    assert!(!contains_answer(&p, &reversed));
    let entity = instance(Answer::Entity("A".into()), &[], vec![p.clone()]);
    assert!(contains_answer(&p, &entity));
    let empty = Passage {
        id: "e".into(),
        tokens: vec![],
        mentions: vec![],
    };
    assert!(!contains_answer(&empty, &entity));
    assert!(!contains_answer(&empty, &tokens));
}

#[test]
fn two_hop_example() {
    let inst = instance(
        Answer::Entity("ANS".into()),
        &[],
        vec![
            passage("P1", vec![1, 2], &["A", "B"]),
            passage("P2", vec![1, 2], &["B", "ANS"]),
            passage("P3", vec![1], &["C"]),
        ],
    );
    assert_eq!(extract_chains_2hop(&inst), vec![chain(&["P1", "P2"], &["B"])]);
}

#[test]
fn two_hop_without_answer_is_empty() {
    let inst = instance(
        Answer::Entity("Z".into()),
        &[],
        vec![
            passage("P1", vec![1, 2], &["A", "B"]),
            passage("P2", vec![1, 2], &["B"]),
        ],
    );
    assert!(extract_chains_2hop(&inst).is_empty());
}

#[test]
fn two_hop_orders_by_head_entity_tail() {
    // Both passages hold the answer, so each can be head or tail.
    let inst = instance(
        Answer::Entity("ANS".into()),
        &[],
        vec![
            passage("b", vec![1, 2, 3], &["Y", "X", "ANS"]),
            passage("a", vec![1, 2, 3], &["X", "Y", "ANS"]),
        ],
    );
    let got = extract_chains_2hop(&inst);
    let want = vec![
        chain(&["a", "b"], &["ANS"]),
        chain(&["a", "b"], &["X"]),
        chain(&["a", "b"], &["Y"]),
        chain(&["b", "a"], &["ANS"]),
        chain(&["b", "a"], &["X"]),
        chain(&["b", "a"], &["Y"]),
    ];
    assert_eq!(got, want);
    for c in &got {
        c.validate(&inst).unwrap();
    }
}

#[test]
fn three_hop_linear_toy() {
    let inst = instance(
        Answer::Entity("ANS".into()),
        &["Q"],
        vec![
            passage("P1", vec![1, 2], &["Q", "E1"]),
            passage("P2", vec![1, 2], &["E1", "E2"]),
            passage("P3", vec![1, 2], &["E2", "ANS"]),
        ],
    );
    assert_eq!(
        extract_chains_3hop(&inst),
        vec![chain(&["P1", "P2", "P3"], &["E1", "E2"])]
    );
}

#[test]
fn three_hop_needs_a_query_mention() {
    let inst = instance(
        Answer::Entity("ANS".into()),
        &["Q"],
        vec![
            passage("P1", vec![1, 2], &["R", "E1"]),
            passage("P2", vec![1, 2], &["E1", "E2"]),
            passage("P3", vec![1, 2], &["E2", "ANS"]),
        ],
    );
    assert!(extract_chains_3hop(&inst).is_empty());
}

#[test]
fn head_tail_projection() {
    let (h, t) = head_tail_sets(&[]);
    assert!(h.is_empty() && t.is_empty());
    let c = [
        chain(&["P1", "P2"], &["B"]),
        chain(&["P3", "P2"], &["C"]),
        chain(&["P1", "P2"], &["D"]),
    ];
    let (h, t) = head_tail_sets(&c);
    assert_eq!(h.into_iter().collect::<Vec<_>>(), vec!["P1", "P3"]);
    assert_eq!(t.into_iter().collect::<Vec<_>>(), vec!["P2"]);
}

#[test]
fn chain_validation_catches_broken_links() {
    let inst = instance(
        Answer::Entity("ANS".into()),
        &[],
        vec![
            passage("P1", vec![1, 2], &["A", "B"]),
            passage("P2", vec![1, 2], &["B", "ANS"]),
        ],
    );
    assert!(chain(&["P1", "P2"], &["B"]).validate(&inst).is_ok());
    assert!(chain(&["P1", "P2"], &["A"]).validate(&inst).is_err());
    assert!(chain(&["P2", "P1"], &["B"]).validate(&inst).is_err());
    assert!(chain(&["P1", "P1"], &["A"]).validate(&inst).is_err());
    assert!(chain(&["P1", "P9"], &["B"]).validate(&inst).is_err());
}

#[test]
fn load_empty_and_single_line() {
    let f = write_lines(&[]);
    assert!(load_corpus(f.path()).unwrap().is_empty());
    let f = write_lines(&[GOOD]);
    let got = load_corpus(f.path()).unwrap();
    assert_eq!(got.len(), 1);
    assert_eq!(got[0].answer, Answer::Tokens(vec![7, 8]));
    assert!(!got[0].degenerate);
}

#[test]
fn load_reports_mention_range_with_line_and_passage() {
    let bad = GOOD.replace(r#""end":1"#, r#""end":9"#);
    let f = write_lines(&[GOOD.replace(r#""id":"a""#, r#""id":"b""#).as_str(), &bad]);
    match load_corpus(f.path()).unwrap_err() {
        CorpusError::MentionRange { line, passage, .. } => {
            assert_eq!(line, 2);
            assert_eq!(passage, "p0");
        }
        e => panic!("unexpected {e}"),
    }
}

#[test]
fn load_error_kinds_are_distinct() {
    let f = write_lines(&["{not json"]);
    assert!(matches!(load_corpus(f.path()), Err(CorpusError::Json { line: 1, .. })));

    let both = GOOD.replace(r#""answer_entity":null"#, r#""answer_entity":"E1""#);
    let f = write_lines(&[&both]);
    assert!(matches!(load_corpus(f.path()), Err(CorpusError::Schema { line: 1, .. })));

    let missing = GOOD.replace(r#""question":[1,2],"#, "");
    let f = write_lines(&[&missing]);
    assert!(matches!(load_corpus(f.path()), Err(CorpusError::Schema { .. })));

    let dup = GOOD.replace(
        r#"]}]}"#,
        r#"]},{"id":"p0","tokens":[3],"mentions":[]}]}"#,
    );
    let f = write_lines(&[&dup]);
    assert!(matches!(
        load_corpus(f.path()),
        Err(CorpusError::DuplicatePassage { line: 1, .. })
    ));

    let f = write_lines(&[GOOD, GOOD]);
    assert!(matches!(
        load_corpus(f.path()),
        Err(CorpusError::DuplicateInstance { line: 2, .. })
    ));

    let empty_tokens = GOOD.replace("[1,7,8,2]", "[]");
    let f = write_lines(&[&empty_tokens]);
    assert!(load_corpus(f.path()).is_err());

    assert!(matches!(
        load_corpus(Path::new("/nonexistent/corpus.jsonl")),
        Err(CorpusError::Io { .. })
    ));
}

#[test]
fn unmentioned_query_entity_flags_degenerate() {
    let line = GOOD.replace(r#""query_entities":["E1"]"#, r#""query_entities":["E9"]"#);
    let f = write_lines(&[&line]);
    assert!(load_corpus(f.path()).unwrap()[0].degenerate);
}

#[test]
fn corpus_round_trips_through_jsonl() {
    let cfg = SynthConfig {
        questions: 20,
        ..SynthConfig::default()
    };
    let (corpus, gold) = generate_synthetic(&cfg, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_corpus(&dir.path().join("c.jsonl"), &corpus).unwrap();
    save_gold(&dir.path().join("g.jsonl"), &gold).unwrap();
    assert_eq!(load_corpus(&dir.path().join("c.jsonl")).unwrap(), corpus);
    assert_eq!(load_gold(&dir.path().join("g.jsonl")).unwrap(), gold);
}

#[test]
fn zero_questions_give_empty_corpus() {
    let cfg = SynthConfig {
        questions: 0,
        ..SynthConfig::default()
    };
    let (c, g) = generate_synthetic(&cfg, 1).unwrap();
    assert!(c.is_empty() && g.is_empty());
}

#[test]
fn generation_is_deterministic() {
    let cfg = SynthConfig {
        questions: 100,
        pool_size: 6,
        ..SynthConfig::default()
    };
    assert_eq!(generate_synthetic(&cfg, 9).unwrap(), generate_synthetic(&cfg, 9).unwrap());
    assert_ne!(generate_synthetic(&cfg, 9).unwrap().0, generate_synthetic(&cfg, 10).unwrap().0);
}

#[test]
fn infeasible_configs_are_rejected() {
    for cfg in [
        SynthConfig {
            pool_size: 1,
            ..SynthConfig::default()
        },
        SynthConfig {
            pool_size: 3,
            ..SynthConfig::default()
        },
        SynthConfig {
            hops: 4,
            ..SynthConfig::default()
        },
        SynthConfig {
            distractor_rate: 1.5,
            ..SynthConfig::default()
        },
        SynthConfig {
            hops: 3,
            pool_size: 12,
            variant: SynthVariant::TailRare,
            ..SynthConfig::default()
        },
    ] {
        assert!(matches!(generate_synthetic(&cfg, 0), Err(CorpusError::Config(_))));
    }
}

#[test]
fn planted_gold_is_always_extracted() {
    for (hops, variant, pool) in [
        (2, SynthVariant::Standard, 6),
        (2, SynthVariant::EntityAmbiguous, 7),
        (2, SynthVariant::TailRare, 8),
        (3, SynthVariant::Standard, 9),
    ] {
        let cfg = SynthConfig {
            hops,
            variant,
            pool_size: pool,
            questions: 300,
            cross_link_rate: 0.3,
            ..SynthConfig::default()
        };
        let (corpus, gold) = generate_synthetic(&cfg, 17).unwrap();
        for (inst, g) in corpus.iter().zip(&gold) {
            assert_eq!(inst.passages.len(), pool);
            let c = extract_chains(inst, hops);
            for chain in &c {
                chain.validate(inst).unwrap();
            }
            for gc in &g.gold_chains {
                assert!(c.contains(gc), "{}: gold {gc:?} missing from {c:?}", inst.id);
            }
        }
    }
}

#[test]
fn distractor_rate_controls_candidate_count() {
    for rate in [0.0, 0.3, 0.8] {
        let cfg = SynthConfig {
            questions: 1000,
            distractor_rate: rate,
            ..SynthConfig::default()
        };
        let (corpus, _) = generate_synthetic(&cfg, 5).unwrap();
        let multi = corpus
            .iter()
            .filter(|inst| extract_chains_2hop(inst).len() >= 2)
            .count() as f64
            / corpus.len() as f64;
        assert!((multi - rate).abs() <= 0.05, "rate {rate}: observed {multi}");
    }
}

#[test]
fn tail_rare_has_two_tails_and_five_heads() {
    let cfg = SynthConfig {
        pool_size: 8,
        distractor_rate: 1.0,
        variant: SynthVariant::TailRare,
        questions: 200,
        ..SynthConfig::default()
    };
    let (corpus, gold) = generate_synthetic(&cfg, 3).unwrap();
    for (inst, g) in corpus.iter().zip(&gold) {
        let c = extract_chains_2hop(inst);
        let (heads, tails) = head_tail_sets(&c);
        assert_eq!((heads.len(), tails.len()), (5, 2), "{}", inst.id);
        // Only the gold head reaches the gold tail.
        let gold_tail = &g.gold_chains[0].passages[1];
        let into_gold: Vec<_> = c.iter().filter(|ch| &ch.passages[1] == gold_tail).collect();
        assert_eq!(into_gold.len(), 1);
        assert_eq!(into_gold[0], &g.gold_chains[0]);
    }
}

#[test]
fn order_ambiguity_needs_exactly_one_answer_passage() {
    let inst = instance(
        Answer::Entity("ANS".into()),
        &["Q"],
        vec![
            passage("h", vec![1, 2], &["Q", "B"]),
            passage("t", vec![3, 4], &["B", "ANS"]),
            passage("u", vec![5, 6], &["B", "ANS"]),
            passage("v", vec![7, 8], &["C", "B"]),
        ],
    );
    assert!(!order_ambiguous(&inst, &chain(&["h", "t"], &["B"])));
    assert!(!order_ambiguous(&inst, &chain(&["t", "h"], &["B"])));
    assert!(order_ambiguous(&inst, &chain(&["t", "u"], &["B"])));
    assert!(order_ambiguous(&inst, &chain(&["h", "v"], &["B"])));
    assert!(!order_ambiguous(&inst, &chain(&["t", "u", "v"], &["B", "B"])));
}

#[test]
fn generated_gold_is_flagged_by_rule() {
    let (corpus, gold) = generate_synthetic(&SynthConfig { questions: 200, ..SynthConfig::default() }, 8).unwrap();
    for (inst, g) in corpus.iter().zip(&gold) {
        assert_eq!(g.ambiguous, order_ambiguous(inst, &g.gold_chains[0]));
        assert!(!g.ambiguous, "the gold head never holds the answer");
    }
}
