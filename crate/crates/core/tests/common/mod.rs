//! Helpers shared by the integration test targets.

#![allow(dead_code)]

use chainrec::corpus::{generate_synthetic, Answer, CandidateChain, Mention, Passage, QuestionInstance, SynthConfig, SynthVariant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Written straight from the definition, sharing nothing with the library:
/// every ordered tuple of distinct passage positions, every entity name
/// seen anywhere in the pool at each link slot.
pub fn brute_force_chains(inst: &QuestionInstance, hops: usize) -> Vec<CandidateChain> {
    let n = inst.passages.len();
    let mut names: Vec<&str> = Vec::new();
    for p in &inst.passages {
        for m in &p.mentions {
            if !names.contains(&m.entity.as_str()) {
                names.push(&m.entity);
            }
        }
    }
    let mentions = |i: usize, e: &str| inst.passages[i].mentions.iter().any(|m| m.entity == e);
    let holds_answer = |i: usize| match &inst.answer {
        Answer::Entity(a) => mentions(i, a),
        Answer::Tokens(t) => {
            let toks = &inst.passages[i].tokens;
            !t.is_empty() && toks.len() >= t.len() && (0..=toks.len() - t.len()).any(|s| toks[s..s + t.len()] == t[..])
        }
    };
    let mut out = Vec::new();
    if hops == 2 {
        for h in 0..n {
            for t in 0..n {
                if h == t || !holds_answer(t) {
                    continue;
                }
                for e in &names {
                    if mentions(h, e) && mentions(t, e) {
                        out.push(CandidateChain {
                            passages: vec![inst.passages[h].id.clone(), inst.passages[t].id.clone()],
                            links: vec![e.to_string()],
                        });
                    }
                }
            }
        }
    } else {
        for h in 0..n {
            if !inst.query_entities.iter().any(|q| mentions(h, q)) {
                continue;
            }
            for m in 0..n {
                for t in 0..n {
                    if h == m || m == t || h == t || !holds_answer(t) {
                        continue;
                    }
                    for e1 in &names {
                        for e2 in &names {
                            if mentions(h, e1) && mentions(m, e1) && mentions(m, e2) && mentions(t, e2) {
                                out.push(CandidateChain {
                                    passages: vec![inst.passages[h].id.clone(), inst.passages[m].id.clone(), inst.passages[t].id.clone()],
                                    links: vec![e1.to_string(), e2.to_string()],
                                });
                            }
                        }
                    }
                }
            }
        }
    }
    out.sort();
    out
}

/// A pool of random passages over a small entity alphabet, so links are
/// dense; alternates entity and token answers.
pub fn random_pool(rng: &mut ChaCha8Rng, id: usize) -> QuestionInstance {
    let n = rng.gen_range(1..8);
    let passages = (0..n)
        .map(|i| {
            let len = rng.gen_range(2..9);
            let tokens: Vec<usize> = (0..len).map(|_| rng.gen_range(0..6)).collect();
            let mentions = (0..rng.gen_range(0..4))
                .map(|_| {
                    let start = rng.gen_range(0..len);
                    Mention {
                        entity: format!("E{}", rng.gen_range(0..5)),
                        start,
                        end: rng.gen_range(start + 1..=len),
                    }
                })
                .collect();
            Passage {
                id: format!("p{i}"),
                tokens,
                mentions,
            }
        })
        .collect();
    let answer = if id % 2 == 0 {
        Answer::Entity(format!("E{}", rng.gen_range(0..5)))
    } else {
        Answer::Tokens((0..rng.gen_range(1..3)).map(|_| rng.gen_range(0..6)).collect())
    };
    QuestionInstance {
        id: format!("r{id}"),
        question: vec![0, 1],
        answer,
        query_entities: vec![format!("E{}", rng.gen_range(0..5))],
        passages,
        degenerate: false,
    }
}

/// `count` instances: generated suites of several shapes plus random pools.
pub fn oracle_instances(hops: usize, count: usize, seed: u64) -> Vec<QuestionInstance> {
    let generated = count * 3 / 5;
    let pool = if hops == 2 { 6 } else { 9 };
    let shapes = [
        SynthConfig { hops, pool_size: pool, ..SynthConfig::default() },
        SynthConfig { hops, pool_size: pool + 3, cross_link_rate: 0.5, ..SynthConfig::default() },
        SynthConfig { hops, pool_size: pool, distractor_rate: 0.3, tail_like_filler_rate: 0.8, ..SynthConfig::default() },
        SynthConfig {
            hops,
            variant: if hops == 2 { SynthVariant::EntityAmbiguous } else { SynthVariant::Standard },
            pool_size: pool + 2,
            cross_link_rate: 0.3,
            ..SynthConfig::default()
        },
        SynthConfig {
            hops,
            variant: if hops == 2 { SynthVariant::TailRare } else { SynthVariant::Standard },
            pool_size: pool + 2,
            tail_like_filler_rate: 0.6,
            cross_link_rate: 0.2,
            ..SynthConfig::default()
        },
    ];
    let mut out = Vec::new();
    for (k, shape) in shapes.iter().enumerate() {
        let take = generated / shapes.len() + usize::from(k < generated % shapes.len());
        let cfg = SynthConfig {
            questions: take,
            id_prefix: format!("s{k}-"),
            ..shape.clone()
        };
        out.extend(generate_synthetic(&cfg, seed + k as u64).unwrap().0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while out.len() < count {
        let id = out.len();
        out.push(random_pool(&mut rng, id));
    }
    out
}
