use super::*;
use crate::corpus::{generate_synthetic, Answer, Mention, SynthConfig, SynthVariant};
use crate::nn::check_parameter_gradients;

fn set(ids: &[&str]) -> BTreeSet<String> {
    ids.iter().map(|s| s.to_string()).collect()
}

fn passage(id: &str, entities: &[&str]) -> Passage {
    Passage {
        id: id.into(),
        tokens: vec![1; entities.len().max(1)],
        mentions: entities
            .iter()
            .enumerate()
            .map(|(i, e)| Mention {
                entity: e.to_string(),
                start: i,
                end: i + 1,
            })
            .collect(),
    }
}

fn chain(ps: &[&str], links: &[&str]) -> CandidateChain {
    CandidateChain {
        passages: ps.iter().map(|s| s.to_string()).collect(),
        links: links.iter().map(|s| s.to_string()).collect(),
    }
}

fn small_cfg(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 2,
        batch_size: 4,
        seed,
        model: ModelConfig {
            embed_dim: 4,
            hidden_dim: 3,
            match_hidden: 3,
            reasoner_dim: 4,
            ..ModelConfig::default()
        },
        ..TrainConfig::default()
    }
}

fn corpus(n: usize, seed: u64) -> Vec<QuestionInstance> {
    let cfg = SynthConfig {
        questions: n,
        ..SynthConfig::default()
    };
    generate_synthetic(&cfg, seed).unwrap().0
}

#[test]
fn two_hop_truth_table() {
    let heads = set(&["h"]);
    let tails = set(&["t"]);
    assert_eq!(reward_2hop("h", "t", &heads, &tails), (1.0, 1.0));
    assert_eq!(reward_2hop("h", "x", &heads, &tails), (1.0, 0.0));
    assert_eq!(reward_2hop("x", "t", &heads, &tails), (0.0, 1.0));
    assert_eq!(reward_2hop("x", "y", &heads, &tails), (0.0, 0.0));
}

#[test]
fn three_hop_truth_table() {
    // Membership is toggled by choosing ids in or out of each structure.
    let chains = vec![chain(&["h", "m", "t"], &["a", "b"]), chain(&["h2", "m2", "t2"], &["c", "d"])];
    let heads = set(&["h", "h2"]);
    let tails = set(&["t", "t2"]);
    for in_h in [false, true] {
        for on_path in [false, true] {
            for in_t in [false, true] {
                // A triple on the path needs its own head and tail; use a
                // chain-shaped stand-in whose ends are the queried ids.
                let (h, t) = (if in_h { "h" } else { "x" }, if in_t { "t" } else { "y" });
                let extra;
                let cs: &[CandidateChain] = if on_path {
                    extra = [chains.clone(), vec![chain(&[h, "m", t], &["e", "f"])]].concat();
                    &extra
                } else {
                    &chains[1..]
                };
                let m = "m";
                let got = reward_3hop(h, m, t, cs, &heads, &tails);
                let want = (f64::from(u8::from(in_h)), f64::from(u8::from(on_path)), f64::from(u8::from(in_t)));
                assert_eq!(got, want, "h {in_h} path {on_path} t {in_t}");
            }
        }
    }
}

#[test]
fn three_hop_middle_needs_the_ordered_triple() {
    // P1 -a- P2 -b- P3, answer in P3 and in P1; reversed triple is not a path.
    let inst = QuestionInstance {
        id: "x".into(),
        question: vec![1],
        answer: Answer::Entity("ANS".into()),
        query_entities: vec!["Q".into()],
        passages: vec![
            passage("P1", &["Q", "A", "ANS"]),
            passage("P2", &["A", "B"]),
            passage("P3", &["B", "ANS", "Q"]),
        ],
        degenerate: false,
    };
    let c = extract_chains(&inst, 3);
    let (heads, tails) = head_tail_sets(&c);
    assert!(c.iter().any(|x| x.passages == ["P1", "P2", "P3"]));
    assert!(c.iter().any(|x| x.passages == ["P3", "P2", "P1"]));
    assert_eq!(reward_3hop("P1", "P2", "P3", &c, &heads, &tails), (1.0, 1.0, 1.0));
    // Correct ends but a middle that joins nothing.
    let lone = [chain(&["P1", "P2", "P3"], &["A", "B"])];
    let (h1, t1) = head_tail_sets(&lone);
    assert_eq!(reward_3hop("P1", "P3", "P3", &lone, &h1, &t1), (1.0, 0.0, 1.0));
    assert_eq!(reward_3hop("P3", "P2", "P1", &lone, &h1, &t1), (0.0, 0.0, 0.0));
}

#[test]
fn cooperative_branches() {
    let members = set(&["ph"]);
    let ph = passage("ph", &["E", "F"]);
    let other = passage("px", &["E"]);
    assert_eq!(reward_cooperative(&ph, Some("E"), &members, 1.0), 2.0);
    assert_eq!(reward_cooperative(&ph, Some("E"), &members, 0.5), 1.5);
    assert_eq!(reward_cooperative(&ph, Some("Z"), &members, 1.0), 1.0);
    assert_eq!(reward_cooperative(&ph, None, &members, 1.0), 1.0);
    assert_eq!(reward_cooperative(&other, Some("E"), &members, 1.0), 0.0);
    assert_eq!(reward_cooperative(&ph, Some("E"), &members, 0.0), 1.0);
}

#[test]
fn config_validation() {
    assert!(TrainConfig::default().validate().is_ok());
    for bad in [
        TrainConfig { bonus: -1.0, ..TrainConfig::default() },
        TrainConfig { baseline_decay: 1.0, ..TrainConfig::default() },
        TrainConfig { hops: 4, ..TrainConfig::default() },
        TrainConfig { batch_size: 0, ..TrainConfig::default() },
    ] {
        assert!(bad.validate().is_err());
    }
    let parsed: TrainConfig = serde_json::from_str(r#"{"epochs": 3, "direction": "head_first"}"#).unwrap();
    assert_eq!(parsed.epochs, 3);
    assert_eq!(parsed.direction, Direction::HeadFirst);
    assert!(serde_json::from_str::<TrainConfig>(r#"{"episodes": 3}"#).is_err());
}

fn sampled(trainer: &RankerTrainer, inst: &QuestionInstance, seed: u64, rewards: &[f64]) -> Rollout {
    let cfg = &trainer.cfg;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = rollout(&trainer.ranker, &trainer.params, inst, cfg.hops, cfg.direction, Chooser::Sample(&mut rng)).unwrap();
    for (s, v) in r.trace.steps.iter_mut().zip(rewards) {
        s.reward = *v;
    }
    r
}

#[test]
fn empty_batch_is_rejected() {
    let data = corpus(1, 1);
    let mut t = RankerTrainer::new(small_cfg(1), SynthConfig::default().vocab_size(), true).unwrap();
    let mut b = t.baseline.clone();
    assert!(matches!(policy_gradient_step(&mut [], &mut t.params, &mut b, 0.1, 5.0), Err(Error::EmptyBatch)));
    let _ = data;
}

#[test]
fn rewards_at_baseline_give_no_gradient() {
    let data = corpus(4, 2);
    let mut t = RankerTrainer::new(small_cfg(2), SynthConfig::default().vocab_size(), true).unwrap();
    t.baseline.values = vec![0.7, 0.3];
    let before = t.params.clone();
    let mut batch: Vec<Rollout> = data.iter().enumerate().map(|(i, inst)| sampled(&t, inst, i as u64, &[0.7, 0.3])).collect();
    let mut b = t.baseline.clone();
    let stats = policy_gradient_step(&mut batch, &mut t.params, &mut b, 0.5, 5.0).unwrap();
    assert_eq!(stats.grad_norm, 0.0);
    assert_eq!(t.params, before);
}

#[test]
fn unit_reward_without_baseline_is_negative_logprob() {
    let data = corpus(1, 3);
    let mut t = RankerTrainer::new(small_cfg(3), SynthConfig::default().vocab_size(), true).unwrap();
    let mut batch = vec![sampled(&t, &data[0], 9, &[1.0, 1.0])];
    let lp: f64 = batch[0].trace.steps.iter().map(|s| s.logprob).sum();
    let mut b = Baseline::new(2, 0.9, false);
    let stats = policy_gradient_step(&mut batch, &mut t.params, &mut b, 0.1, 5.0).unwrap();
    assert!((stats.loss + lp).abs() < 1e-12);
    assert_eq!(stats.mean_reward, 2.0);
    assert!(stats.grad_norm > 0.0);
}

#[test]
fn baseline_tracks_batch_means() {
    let mut b = Baseline::new(2, 0.9, true);
    b.update(&[1.0, 0.0]);
    assert!((b.values[0] - 0.1).abs() < 1e-15);
    b.update(&[1.0, 0.0]);
    assert!((b.values[0] - 0.19).abs() < 1e-15);
    assert_eq!(b.get(1), 0.0);
    let off = Baseline { enabled: false, ..b.clone() };
    assert_eq!(off.get(0), 0.0);
}

#[test]
fn constant_rewards_stop_moving_parameters() {
    let data = corpus(2, 4);
    let mut t = RankerTrainer::new(small_cfg(4), SynthConfig::default().vocab_size(), true).unwrap();
    let mut b = Baseline::new(2, 0.9, true);
    let mut last = f64::INFINITY;
    for step in 0..400u64 {
        let mut batch = vec![sampled(&t, &data[(step % 2) as usize], step, &[1.0, 1.0])];
        last = policy_gradient_step(&mut batch, &mut t.params, &mut b, 1e-3, 5.0).unwrap().grad_norm;
    }
    assert!(last < 1e-8, "grad norm {last}");
}

#[test]
fn frozen_trace_surrogate_gradients() {
    for trial in 0..10u64 {
        let hops = if trial % 2 == 0 { 2 } else { 3 };
        let synth = SynthConfig {
            hops,
            questions: 1,
            pool_size: 8,
            ..SynthConfig::default()
        };
        let inst = generate_synthetic(&synth, trial).unwrap().0.remove(0);
        let mut cfg = small_cfg(trial);
        cfg.hops = hops;
        cfg.direction = if trial % 4 < 2 { Direction::TailFirst } else { Direction::HeadFirst };
        let t = RankerTrainer::new(cfg.clone(), synth.vocab_size(), trial % 3 != 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(trial);
        let mut r = rollout(&t.ranker, &t.params, &inst, hops, cfg.direction, Chooser::Sample(&mut rng)).unwrap();
        for (k, s) in r.trace.steps.iter_mut().enumerate() {
            s.reward = (k % 2) as f64 + 0.5;
        }
        let trace = r.trace.clone();
        let baseline: Vec<f64> = (0..hops).map(|k| 0.1 * k as f64).collect();
        let report = check_parameter_gradients(
            &t.params,
            |g, p| -> Result<NodeId> {
                let (graph, loss) = trace_surrogate(&t.ranker, p, &inst, &trace, &baseline, hops, cfg.direction)?;
                *g = graph;
                Ok(loss)
            },
            1e-6,
            1e-5,
            Some(4),
            &mut rng,
        )
        .unwrap();
        assert!(report.passed, "trial {trial}: {}", report.max_rel_error);
    }
}

#[test]
fn zero_epochs_return_initial_parameters() {
    let data = corpus(5, 5);
    let cfg = TrainConfig { epochs: 0, ..small_cfg(5) };
    let vocab = SynthConfig::default().vocab_size();
    let cfg = TrainConfig {
        model: ModelConfig { vocab_size: Some(vocab), ..cfg.model.clone() },
        ..cfg
    };
    let trained = train_ranker(&data, &cfg, true, &TrainOptions::default()).unwrap();
    let fresh = RankerTrainer::new(cfg, vocab, true).unwrap();
    assert_eq!(trained.params, fresh.params);
    assert!(trained.log.is_empty());
}

#[test]
fn training_is_deterministic_and_resumable() {
    let data = corpus(12, 6);
    let cfg = small_cfg(6);
    let a = train_ranker(&data, &cfg, true, &TrainOptions::default()).unwrap();
    let b = train_ranker(&data, &cfg, true, &TrainOptions::default()).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.log, b.log);

    let dir = tempfile::tempdir().unwrap();
    let opts = TrainOptions {
        evaluator: None,
        checkpoint_dir: Some(dir.path().to_path_buf()),
    };
    let one = TrainConfig { epochs: 1, checkpoint_every: 1, ..cfg.clone() };
    train_ranker(&data, &one, true, &opts).unwrap();
    let mut resumed = RankerTrainer::load(&dir.path().join("ranker-epoch1.ckpt")).unwrap();
    assert_eq!(resumed.epoch, 1);
    resumed.cfg.epochs = 2;
    resumed.cfg.checkpoint_every = 0;
    let prepared = prepare(&data, 2);
    resumed.train(&prepared, &TrainOptions::default()).unwrap();
    assert_eq!(resumed.params, a.params);
    assert_eq!(resumed.baseline, a.baseline);
    assert_eq!(resumed.log, a.log);
}

#[test]
fn dev_accuracy_is_logged_per_epoch() {
    let data = corpus(6, 7);
    let eval = |_: &Ranker, _: &ParameterSet| -> Result<f64> { Ok(0.25) };
    let opts = TrainOptions {
        evaluator: Some(&eval),
        checkpoint_dir: None,
    };
    let t = train_ranker(&data, &small_cfg(7), true, &opts).unwrap();
    assert_eq!(t.log.len(), 2);
    assert!(t.log.iter().all(|r| r.dev_accuracy == Some(0.25) && r.phase == Phase::Ranker));
}

#[test]
fn zero_bonus_reduces_to_base_rewards() {
    let synth = SynthConfig {
        questions: 16,
        pool_size: 7,
        variant: SynthVariant::EntityAmbiguous,
        ..SynthConfig::default()
    };
    let data = generate_synthetic(&synth, 8).unwrap().0;
    let cfg = TrainConfig { bonus: 0.0, ..small_cfg(8) };
    let prepared = prepare(&data, 2);
    let vocab = synth.vocab_size();
    let (reasoner, rp) = Reasoner::new(cfg.model.reasoner(vocab), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let coop = Cooperation {
        reasoner: &reasoner,
        params: &rp,
    };
    let mut plain = RankerTrainer::new(cfg.clone(), vocab, true).unwrap();
    let mut with = RankerTrainer::new(cfg, vocab, true).unwrap();
    let a = plain.run_epoch(&prepared, None).unwrap();
    let b = with.run_epoch(&prepared, Some(&coop)).unwrap();
    assert_eq!(a, b);
    assert_eq!(plain.params, with.params);
}

#[test]
fn positive_bonus_changes_rewards() {
    let synth = SynthConfig {
        questions: 16,
        pool_size: 7,
        variant: SynthVariant::EntityAmbiguous,
        ..SynthConfig::default()
    };
    let data = generate_synthetic(&synth, 8).unwrap().0;
    let cfg = TrainConfig { bonus: 1.0, ..small_cfg(8) };
    let prepared = prepare(&data, 2);
    let vocab = synth.vocab_size();
    let (reasoner, rp) = Reasoner::new(cfg.model.reasoner(vocab), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let coop = Cooperation {
        reasoner: &reasoner,
        params: &rp,
    };
    let mut plain = RankerTrainer::new(cfg.clone(), vocab, true).unwrap();
    let mut with = RankerTrainer::new(cfg, vocab, true).unwrap();
    let a = plain.run_epoch(&prepared, None).unwrap();
    let b = with.run_epoch(&prepared, Some(&coop)).unwrap();
    assert!(b.mean_reward >= a.mean_reward);
}

#[test]
fn alternation_schedule() {
    let cfg = small_cfg(9);
    let phases: Vec<Phase> = (0..4).map(|e| cooperative_phase(&cfg, e)).collect();
    assert_eq!(phases, vec![Phase::Reasoner, Phase::Ranker, Phase::Reasoner, Phase::Ranker]);
    let cfg = TrainConfig { reasoner_epochs_per_cycle: 1, ranker_epochs_per_cycle: 2, ..cfg };
    let phases: Vec<Phase> = (0..6).map(|e| cooperative_phase(&cfg, e)).collect();
    use Phase::*;
    assert_eq!(phases, vec![Reasoner, Ranker, Ranker, Reasoner, Ranker, Ranker]);
}

#[test]
fn cooperative_log_has_both_phases() {
    let data = corpus(8, 10);
    let cfg = TrainConfig { epochs: 1, cooperative_epochs: 4, ..small_cfg(10) };
    let warm = train_ranker(&data, &cfg, true, &TrainOptions::default()).unwrap();
    let out = train_cooperative(&data, warm, &TrainOptions::default()).unwrap();
    let phases: Vec<(usize, Phase)> = out.trainer.log.iter().map(|r| (r.epoch, r.phase)).collect();
    assert_eq!(
        phases,
        vec![(0, Phase::Ranker), (1, Phase::Reasoner), (2, Phase::Ranker), (3, Phase::Reasoner), (4, Phase::Ranker)]
    );
}

#[test]
fn reasoner_labels_come_from_linked_rewarded_pairs() {
    let inst = QuestionInstance {
        id: "x".into(),
        question: vec![1],
        answer: Answer::Entity("ANS".into()),
        query_entities: vec![],
        passages: vec![passage("H", &["A", "B"]), passage("T", &["B", "ANS"]), passage("X", &["C"])],
        degenerate: false,
    };
    let data = prepare(std::slice::from_ref(&inst), 2);
    let roles = step_roles(2, Direction::TailFirst).unwrap();
    let plan = read_plans(2, roles, BonusPlacement::SecondStep)[0];
    // Tail first: selections are [tail, head].
    let rewards = base_rewards(&data[0], roles, &[1, 0]);
    assert_eq!(rewards, vec![1.0, 1.0]);
    assert_eq!(reasoner_positives(&data[0], &[1, 0], &rewards, plan, 2), Some(set(&["B"])));
    let rewards = base_rewards(&data[0], roles, &[1, 2]);
    assert_eq!(rewards, vec![1.0, 0.0]);
    assert_eq!(reasoner_positives(&data[0], &[1, 2], &rewards, plan, 2), None);
}

#[test]
fn log_round_trips_as_jsonl() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.jsonl");
    let log = vec![LogRecord {
        epoch: 0,
        phase: Phase::Reasoner,
        mean_reward: 1.5,
        loss: 0.25,
        dev_accuracy: None,
    }];
    save_log(&path, &log).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(
        text.trim(),
        r#"{"epoch":0,"phase":"reasoner","mean_reward":1.5,"loss":0.25,"dev_accuracy":null}"#
    );
}
