//! Synthetic multi-hop corpora with planted gold chains.
//!
//! Every passage is a subject entity followed by `relation object` clauses,
//! e.g. `T r_h e1 , r_a v`. A 2-hop question reads `what r_t of r_h of T`:
//! the gold head is `T r_h e1 ...` and the gold tail `e1 r_t ANSWER ...`.
//! Decoys add further structurally valid chains whose surface form differs
//! from the gold pattern in ways that only some models can exploit.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{order_ambiguous, Answer, CandidateChain, CorpusError, GoldAnnotation, Mention, Passage, QuestionInstance};

const WHAT: usize = 0;
const OF: usize = 1;
const SEP: usize = 2;
const FIRST_FILLER: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthVariant {
    Standard,
    /// Distractor instances add a head that links into the gold tail through
    /// a non-bridge entity, so two heads are equally rewarded.
    EntityAmbiguous,
    /// Distractor instances get exactly one decoy tail, reached from three
    /// heads shaped like the gold head and one unrelated head: two tail
    /// candidates against five head candidates. 2-hop only; `decoys` is
    /// ignored.
    TailRare,
}

/// Per-distractor-instance probabilities of each decoy kind. A distractor
/// instance always receives at least one decoy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoyMix {
    /// An unrelated chain that reaches the answer through other relations.
    pub random_chain: f64,
    /// A passage written like one gold role but playing the other: a head
    /// that holds the answer, or a tail that links into the gold tail.
    pub role_swap: f64,
    /// Extra heads linking into some tail through its secondary entity.
    pub linked_heads: usize,
}

impl Default for DecoyMix {
    fn default() -> Self {
        DecoyMix {
            random_chain: 1.0,
            role_swap: 0.6,
            linked_heads: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub hops: usize,
    pub questions: usize,
    pub pool_size: usize,
    /// Fraction of instances that receive decoys (and so have |C| >= 2).
    pub distractor_rate: f64,
    pub variant: SynthVariant,
    pub decoys: DecoyMix,
    /// Probability that a filler passage is written like a tail.
    pub tail_like_filler_rate: f64,
    /// Probability that a filler passage also mentions some entity already
    /// in the pool, creating incidental links.
    pub cross_link_rate: f64,
    pub num_fillers: usize,
    pub num_relations: usize,
    pub num_entities: usize,
    pub num_values: usize,
    pub id_prefix: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            hops: 2,
            questions: 1000,
            pool_size: 6,
            distractor_rate: 0.8,
            variant: SynthVariant::Standard,
            decoys: DecoyMix::default(),
            tail_like_filler_rate: 0.3,
            cross_link_rate: 0.0,
            num_fillers: 8,
            num_relations: 16,
            num_entities: 400,
            num_values: 200,
            id_prefix: "q".into(),
        }
    }
}

impl SynthConfig {
    pub fn vocab_size(&self) -> usize {
        FIRST_FILLER + self.num_fillers + self.num_relations + self.num_entities + self.num_values
    }

    fn relation(&self, k: usize) -> usize {
        FIRST_FILLER + self.num_fillers + k
    }

    fn entity_token(&self, k: usize) -> usize {
        FIRST_FILLER + self.num_fillers + self.num_relations + k
    }

    fn value_token(&self, k: usize) -> usize {
        FIRST_FILLER + self.num_fillers + self.num_relations + self.num_entities + k
    }

    fn entity_of(&self, token: usize) -> Option<usize> {
        let lo = self.entity_token(0);
        (lo..lo + self.num_entities).contains(&token).then(|| token - lo)
    }

    /// Passages a single instance may need in the worst case.
    fn max_required(&self) -> usize {
        let ambiguous = usize::from(self.variant == SynthVariant::EntityAmbiguous);
        if self.variant == SynthVariant::TailRare {
            return 2 + 1 + TAIL_RARE_HEADS.len() + 1;
        }
        match self.hops {
            2 => 2 + 2 + 1 + ambiguous + self.decoys.linked_heads,
            _ => 3 + 3 + 1 + self.decoys.linked_heads,
        }
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let fail = |m: String| Err(CorpusError::Config(m));
        if !(2..=3).contains(&self.hops) {
            return fail(format!("hops must be 2 or 3, got {}", self.hops));
        }
        if self.variant == SynthVariant::TailRare && self.hops != 2 {
            return fail("the tail_rare variant is 2-hop only".into());
        }
        if self.pool_size < self.hops {
            return fail(format!(
                "pool of {} passages cannot hold a {}-hop chain",
                self.pool_size, self.hops
            ));
        }
        if self.distractor_rate > 0.0 && self.pool_size < self.max_required() {
            return fail(format!(
                "pool of {} passages cannot hold the configured decoys ({} needed)",
                self.pool_size,
                self.max_required()
            ));
        }
        for (name, p) in [
            ("distractor_rate", self.distractor_rate),
            ("decoys.random_chain", self.decoys.random_chain),
            ("decoys.role_swap", self.decoys.role_swap),
            ("tail_like_filler_rate", self.tail_like_filler_rate),
            ("cross_link_rate", self.cross_link_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return fail(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        if self.distractor_rate > 0.0
            && self.decoys.random_chain == 0.0
            && self.decoys.role_swap == 0.0
            && self.decoys.linked_heads == 0
            && self.variant == SynthVariant::Standard
        {
            return fail("distractors requested but every decoy kind is disabled".into());
        }
        if self.num_relations < 8 {
            return fail("need at least 8 relations".into());
        }
        if self.num_fillers == 0 {
            return fail("need at least one filler word".into());
        }
        let entities_needed = 6 * self.pool_size + 8;
        if self.num_entities < entities_needed {
            return fail(format!("need at least {entities_needed} entities"));
        }
        if self.num_values < 2 * self.pool_size + 2 {
            return fail(format!("need at least {} values", 2 * self.pool_size + 2));
        }
        Ok(())
    }
}

/// Draws distinct entities and values for one instance.
struct Draw<'a> {
    cfg: &'a SynthConfig,
    rng: &'a mut ChaCha8Rng,
    used_entities: HashSet<usize>,
    used_values: HashSet<usize>,
}

impl<'a> Draw<'a> {
    fn entity(&mut self) -> usize {
        loop {
            let k = self.rng.gen_range(0..self.cfg.num_entities);
            if self.used_entities.insert(k) {
                return self.cfg.entity_token(k);
            }
        }
    }

    fn value(&mut self) -> usize {
        loop {
            let k = self.rng.gen_range(0..self.cfg.num_values);
            if self.used_values.insert(k) {
                return self.cfg.value_token(k);
            }
        }
    }

    /// A relation outside `avoid`.
    fn relation(&mut self, avoid: &[usize]) -> usize {
        loop {
            let r = self.cfg.relation(self.rng.gen_range(0..self.cfg.num_relations));
            if !avoid.contains(&r) {
                return r;
            }
        }
    }

    fn filler_word(&mut self) -> usize {
        FIRST_FILLER + self.rng.gen_range(0..self.cfg.num_fillers)
    }
}

/// Passage text before filler words and ids are added.
struct Sketch {
    subject: usize,
    clauses: Vec<(usize, usize)>,
}

impl Sketch {
    fn new(subject: usize, clauses: &[(usize, usize)]) -> Self {
        Sketch {
            subject,
            clauses: clauses.to_vec(),
        }
    }

    fn render(&self, draw: &mut Draw<'_>) -> Vec<usize> {
        let mut tokens = Vec::with_capacity(3 * self.clauses.len() + 3);
        if draw.rng.gen_bool(0.3) {
            tokens.push(draw.filler_word());
        }
        tokens.push(self.subject);
        for (i, &(rel, obj)) in self.clauses.iter().enumerate() {
            if i > 0 {
                tokens.push(SEP);
            }
            tokens.push(rel);
            tokens.push(obj);
        }
        if draw.rng.gen_bool(0.3) {
            tokens.push(draw.filler_word());
        }
        tokens
    }
}

/// Link targets of the gold-head look-alikes in a tail_rare instance:
/// 0 is the decoy tail's subject, 1 its secondary entity.
const TAIL_RARE_HEADS: [usize; 3] = [0, 1, 0];

/// Which sketch slot holds each gold passage, in chain order.
struct Planted {
    sketches: Vec<Sketch>,
    gold: Vec<usize>,
    links: Vec<usize>,
    question: Vec<usize>,
    answer: Answer,
    query_entity: usize,
}

/// Draws which optional decoys to plant, redrawing until at least one is
/// present unless `always` says some other decoy is guaranteed.
fn sample_decoys(cfg: &SynthConfig, draw: &mut Draw<'_>, always: bool) -> (bool, bool) {
    loop {
        let chain = draw.rng.gen_bool(cfg.decoys.random_chain);
        let swap = draw.rng.gen_bool(cfg.decoys.role_swap);
        if chain || swap || always {
            return (chain, swap);
        }
    }
}

fn plant_2hop(cfg: &SynthConfig, draw: &mut Draw<'_>, distract: bool) -> Planted {
    let r_t = draw.relation(&[]);
    let r_h = draw.relation(&[r_t]);
    let core = [r_t, r_h];
    let topic = draw.entity();
    let bridge = draw.entity();
    let side = draw.entity();
    let answer = draw.value();

    let mut sketches = vec![
        Sketch::new(topic, &[(r_h, bridge), (draw.relation(&core), draw.value())]),
        Sketch::new(bridge, &[(r_t, answer), (draw.relation(&core), side)]),
    ];
    // Entities a linked head may attach to: (secondary entity of some tail).
    let mut tail_sides = vec![side];

    if distract && cfg.variant == SynthVariant::TailRare {
        let (u, y) = (draw.entity(), draw.entity());
        sketches.push(Sketch::new(
            u,
            &[(draw.relation(&core), answer), (draw.relation(&core), y)],
        ));
        for pick in TAIL_RARE_HEADS {
            let target = if pick == 0 { u } else { y };
            sketches.push(Sketch::new(
                topic,
                &[(r_h, target), (draw.relation(&core), draw.value())],
            ));
        }
        let (f, w) = (draw.entity(), draw.entity());
        sketches.push(Sketch::new(
            f,
            &[(draw.relation(&core), w), (draw.relation(&core), y)],
        ));
    } else if distract {
        let ambiguous = cfg.variant == SynthVariant::EntityAmbiguous;
        let always = ambiguous || cfg.decoys.linked_heads > 0;
        let (chain, swap) = sample_decoys(cfg, draw, always);
        if chain {
            let (d, u, y) = (draw.entity(), draw.entity(), draw.entity());
            sketches.push(Sketch::new(
                d,
                &[(draw.relation(&core), u), (draw.relation(&core), draw.value())],
            ));
            sketches.push(Sketch::new(
                u,
                &[(draw.relation(&core), answer), (draw.relation(&core), y)],
            ));
            tail_sides.push(y);
        }
        if swap {
            if draw.rng.gen_bool(0.5) {
                // Head-shaped, but holds the answer: a tail for (gold head, topic, this).
                let w = draw.entity();
                sketches.push(Sketch::new(
                    topic,
                    &[(r_h, w), (draw.relation(&core), answer)],
                ));
            } else {
                // Tail-shaped, but links into the gold tail: a head for (this, side, gold tail).
                let v = draw.entity();
                sketches.push(Sketch::new(
                    v,
                    &[(r_t, draw.value()), (draw.relation(&core), side)],
                ));
            }
        }
        if ambiguous {
            // Head-shaped and linked to the gold tail through its secondary
            // entity; its second clause names an entity, where the gold
            // head's names a value.
            let w = draw.entity();
            sketches.push(Sketch::new(
                topic,
                &[(r_h, w), (draw.relation(&core), side)],
            ));
        }
        for _ in 0..cfg.decoys.linked_heads {
            let target = tail_sides[draw.rng.gen_range(0..tail_sides.len())];
            let (f, w) = (draw.entity(), draw.entity());
            sketches.push(Sketch::new(
                f,
                &[(draw.relation(&core), w), (draw.relation(&core), target)],
            ));
        }
    }

    Planted {
        sketches,
        gold: vec![0, 1],
        links: vec![bridge],
        question: vec![WHAT, r_t, OF, r_h, OF, topic],
        answer: Answer::Tokens(vec![answer]),
        query_entity: topic,
    }
}

fn plant_3hop(cfg: &SynthConfig, draw: &mut Draw<'_>, distract: bool) -> Planted {
    let r_t = draw.relation(&[]);
    let r_m = draw.relation(&[r_t]);
    let r_h = draw.relation(&[r_t, r_m]);
    let core = [r_t, r_m, r_h];
    let topic = draw.entity();
    let (e1, e2, answer) = (draw.entity(), draw.entity(), draw.entity());

    let mut sketches = vec![
        Sketch::new(topic, &[(r_h, e1), (draw.relation(&core), draw.value())]),
        Sketch::new(e1, &[(r_m, e2), (draw.relation(&core), draw.value())]),
        Sketch::new(e2, &[(r_t, answer), (draw.relation(&core), draw.value())]),
    ];
    let mut tails = vec![e2];

    if distract {
        let (chain, swap) = sample_decoys(cfg, draw, cfg.decoys.linked_heads > 0);
        if chain {
            let (d1, d2) = (draw.entity(), draw.entity());
            sketches.push(Sketch::new(
                topic,
                &[(draw.relation(&core), d1), (draw.relation(&core), draw.value())],
            ));
            sketches.push(Sketch::new(
                d1,
                &[(draw.relation(&core), d2), (draw.relation(&core), draw.value())],
            ));
            sketches.push(Sketch::new(
                d2,
                &[(draw.relation(&core), answer), (draw.relation(&core), draw.value())],
            ));
            tails.push(d2);
        }
        if swap {
            // A second middle joining the gold head and tail.
            let f = draw.entity();
            sketches.push(Sketch::new(
                f,
                &[(draw.relation(&core), e1), (draw.relation(&core), e2)],
            ));
        }
        for _ in 0..cfg.decoys.linked_heads {
            let target = tails[draw.rng.gen_range(0..tails.len())];
            let f = draw.entity();
            sketches.push(Sketch::new(
                f,
                &[(draw.relation(&core), target), (draw.relation(&core), draw.value())],
            ));
        }
    }

    Planted {
        sketches,
        gold: vec![0, 1, 2],
        links: vec![e1, e2],
        question: vec![WHAT, r_t, OF, r_m, OF, r_h, OF, topic],
        answer: Answer::Entity(entity_name(cfg, answer)),
        query_entity: topic,
    }
}

fn entity_name(cfg: &SynthConfig, token: usize) -> String {
    format!("E{}", cfg.entity_of(token).expect("entity token"))
}

fn filler(cfg: &SynthConfig, draw: &mut Draw<'_>, pool: &[Sketch], core: &[usize]) -> Sketch {
    let subject = draw.entity();
    let first_rel = if draw.rng.gen_bool(cfg.tail_like_filler_rate) {
        core[0]
    } else {
        draw.relation(core)
    };
    let first_obj = draw.value();
    let second_obj = if draw.rng.gen_bool(cfg.cross_link_rate) && !pool.is_empty() {
        let s = &pool[draw.rng.gen_range(0..pool.len())];
        let mut ents = vec![s.subject];
        ents.extend(s.clauses.iter().map(|c| c.1).filter(|&t| cfg.entity_of(t).is_some()));
        ents[draw.rng.gen_range(0..ents.len())]
    } else if draw.rng.gen_bool(0.5) {
        draw.entity()
    } else {
        draw.value()
    };
    Sketch::new(
        subject,
        &[(first_rel, first_obj), (draw.relation(core), second_obj)],
    )
}

/// Generates `cfg.questions` instances and their gold annotations. The same
/// configuration and seed always produce identical output.
pub fn generate_synthetic(
    cfg: &SynthConfig,
    seed: u64,
) -> Result<(Vec<QuestionInstance>, Vec<GoldAnnotation>), CorpusError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut instances = Vec::with_capacity(cfg.questions);
    let mut gold = Vec::with_capacity(cfg.questions);
    for q in 0..cfg.questions {
        let mut draw = Draw {
            cfg,
            rng: &mut rng,
            used_entities: HashSet::new(),
            used_values: HashSet::new(),
        };
        let distract = draw.rng.gen_bool(cfg.distractor_rate);
        let planted = if cfg.hops == 2 {
            plant_2hop(cfg, &mut draw, distract)
        } else {
            plant_3hop(cfg, &mut draw, distract)
        };
        let Planted {
            mut sketches,
            gold: gold_slots,
            links,
            question,
            answer,
            query_entity,
        } = planted;
        let core: Vec<usize> = question
            .iter()
            .copied()
            .filter(|&t| t != WHAT && t != OF && t != query_entity)
            .collect();
        while sketches.len() < cfg.pool_size {
            let f = filler(cfg, &mut draw, &sketches, &core);
            sketches.push(f);
        }

        let mut order: Vec<usize> = (0..sketches.len()).collect();
        order.shuffle(draw.rng);
        let mut slot_to_id = vec![String::new(); sketches.len()];
        let mut passages = Vec::with_capacity(sketches.len());
        for (pos, &slot) in order.iter().enumerate() {
            let id = format!("p{pos}");
            slot_to_id[slot] = id.clone();
            let tokens = sketches[slot].render(&mut draw);
            let mentions = tokens
                .iter()
                .enumerate()
                .filter(|(_, &t)| cfg.entity_of(t).is_some())
                .map(|(i, &t)| Mention {
                    entity: entity_name(cfg, t),
                    start: i,
                    end: i + 1,
                })
                .collect();
            passages.push(Passage {
                id,
                tokens,
                mentions,
            });
        }
        let id = format!("{}{q}", cfg.id_prefix);
        let chain = CandidateChain {
            passages: gold_slots.iter().map(|&s| slot_to_id[s].clone()).collect(),
            links: links.iter().map(|&e| entity_name(cfg, e)).collect(),
        };
        let inst = QuestionInstance {
            id: id.clone(),
            question,
            answer,
            query_entities: vec![entity_name(cfg, query_entity)],
            passages,
            degenerate: false,
        };
        gold.push(GoldAnnotation {
            id,
            ambiguous: order_ambiguous(&inst, &chain),
            gold_chains: vec![chain],
        });
        instances.push(inst);
    }
    Ok((instances, gold))
}
