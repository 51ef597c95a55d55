//! Passage ranker.
//!
//! Every passage is matched against the current query state with a
//! MatchLSTM. Selection is sequential. After each pick the query state is
//! re-projected from its rows concatenated with the chosen passage's
//! matching vector, so later steps see earlier choices.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{read_jsonl, write_jsonl, CandidateChain, QuestionInstance};
use crate::nn::{Embedding, EncoderConfig, FeedForward, GruCell, GruEncoder, Linear, ParameterSet};
use crate::tensor::{softmax_raw, Graph, NodeId, Tensor};
use crate::{Error, Result};


#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankerConfig {
    pub vocab_size: usize,
    #[serde(default = "defaults::embed_dim")]
    pub embed_dim: usize,
    #[serde(default = "defaults::hidden_dim")]
    pub hidden_dim: usize,
    #[serde(default = "defaults::encoder_layers")]
    pub encoder_layers: usize,
    #[serde(default = "defaults::yes")]
    pub bidirectional: bool,
    #[serde(default = "defaults::match_hidden")]
    pub match_hidden: usize,
    /// When false the query state never moves, giving the independent
    /// per-passage scorer.
    #[serde(default = "defaults::yes")]
    pub conditional: bool,
}

mod defaults {
    pub fn embed_dim() -> usize {
        16
    }
    pub fn hidden_dim() -> usize {
        8
    }
    pub fn encoder_layers() -> usize {
        1
    }
    pub fn match_hidden() -> usize {
        8
    }
    pub fn yes() -> bool {
        true
    }
}

impl RankerConfig {
    pub fn new(vocab_size: usize) -> Self {
        RankerConfig {
            vocab_size,
            embed_dim: defaults::embed_dim(),
            hidden_dim: defaults::hidden_dim(),
            encoder_layers: defaults::encoder_layers(),
            bidirectional: true,
            match_hidden: defaults::match_hidden(),
            conditional: true,
        }
    }

    fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            vocab_size: self.vocab_size,
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            num_layers: self.encoder_layers,
            bidirectional: self.bidirectional,
        }
    }
}

/// Which end of a 2-hop chain is picked first.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    #[default]
    TailFirst,
    HeadFirst,
}

/// Position in the chain filled by a selection step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainRole {
    Head,
    Middle,
    Tail,
}

/// Roles of the selection steps, in the order they are taken.
///
/// 3-hop picks head and tail first, both from the original question, then
/// the middle. `direction` only matters for 2-hop.
pub fn step_roles(hops: usize, direction: Direction) -> Result<&'static [ChainRole]> {
    use ChainRole::*;
    match (hops, direction) {
        (2, Direction::TailFirst) => Ok(&[Tail, Head]),
        (2, Direction::HeadFirst) => Ok(&[Head, Tail]),
        (3, _) => Ok(&[Head, Tail, Middle]),
        _ => Err(Error::Config(format!("hops must be 2 or 3, got {hops}"))),
    }
}

/// Reorders per-step selections into chain order (head first).
pub fn chain_order<T: Clone>(roles: &[ChainRole], selections: &[T]) -> Vec<T> {
    let mut out = Vec::with_capacity(selections.len());
    for want in [ChainRole::Head, ChainRole::Middle, ChainRole::Tail] {
        for (r, s) in roles.iter().zip(selections) {
            if *r == want {
                out.push(s.clone());
            }
        }
    }
    out
}

/// Inverse of [`chain_order`]: chain positions to per-step selections.
pub fn selection_order<T: Clone>(roles: &[ChainRole], chain: &[T]) -> Vec<T> {
    let position = |r: ChainRole| match r {
        ChainRole::Head => 0,
        ChainRole::Middle => 1,
        ChainRole::Tail => chain.len() - 1,
    };
    roles.iter().map(|&r| chain[position(r)].clone()).collect()
}

/// Score head used at a step. 3-hop head and tail picks both read the
/// original question, so they need their own heads to tell the roles apart.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScoreHead {
    Shared,
    Head3,
    Tail3,
}

fn score_head(hops: usize, step: usize) -> ScoreHead {
    match (hops, step) {
        (3, 0) => ScoreHead::Head3,
        (3, 1) => ScoreHead::Tail3,
        _ => ScoreHead::Shared,
    }
}

/// Output of one MatchLSTM comparison.
#[derive(Clone, Copy, Debug)]
pub struct MatchResult {
    /// Max-pooled GRU state over the question positions.
    pub state: NodeId,
    /// Scalar ranking score.
    pub score: NodeId,
}

/// Query state and history of a partially built chain.
#[derive(Clone, Debug)]
pub struct RankerState {
    pub step: usize,
    pub query: NodeId,
    pub selected: Vec<usize>,
    pub step_logprobs: Vec<NodeId>,
}

/// Selection distribution at one step.
#[derive(Clone, Debug)]
pub struct StepDistribution {
    pub mask: Vec<bool>,
    /// Raw scores `[K]`; masked entries are a constant 0.
    pub scores: NodeId,
    pub log_probs: NodeId,
    pub probs: Vec<f64>,
    /// Matching state per unmasked passage.
    pub states: Vec<Option<NodeId>>,
}

#[derive(Clone, Debug)]
pub struct Ranker {
    cfg: RankerConfig,
    embed: Embedding,
    /// `None` when `encoder_layers` is 0: matching reads the embeddings.
    encoder: Option<GruEncoder>,
    matcher: GruCell,
    score: Linear,
    score_head3: Linear,
    score_tail3: Linear,
    update: FeedForward,
}

impl Ranker {
    pub fn new(cfg: RankerConfig, rng: &mut ChaCha8Rng) -> Result<(Ranker, ParameterSet)> {
        let mut params = ParameterSet::new();
        let ranker = Ranker::build(cfg, &mut params, rng)?;
        Ok((ranker, params))
    }

    /// Adds the ranker's parameters to `params` under the `ranker.` prefix.
    pub fn build(cfg: RankerConfig, params: &mut ParameterSet, rng: &mut ChaCha8Rng) -> Result<Ranker> {
        if cfg.match_hidden == 0 {
            return Err(Error::Config("match_hidden must be at least 1".into()));
        }
        let embed = Embedding::new(params, "ranker.embed", cfg.vocab_size, cfg.embed_dim, rng)?;
        let encoder = match cfg.encoder_layers {
            0 => None,
            _ => Some(GruEncoder::new(params, "ranker.encoder", cfg.embed_dim, &cfg.encoder(), rng)?),
        };
        let d = encoder.as_ref().map_or(cfg.embed_dim, GruEncoder::output_dim);
        let h = cfg.match_hidden;
        let matcher = GruCell::new(params, "ranker.match", 4 * d, h, rng)?;
        let score = Linear::new(params, "ranker.score", h, 1, rng)?;
        let score_head3 = Linear::new(params, "ranker.score_head3", h, 1, rng)?;
        let score_tail3 = Linear::new(params, "ranker.score_tail3", h, 1, rng)?;
        let update = FeedForward::new(params, "ranker.update", d + h, d, rng)?;
        Ok(Ranker {
            cfg,
            embed,
            encoder,
            matcher,
            score,
            score_head3,
            score_tail3,
            update,
        })
    }

    pub fn config(&self) -> &RankerConfig {
        &self.cfg
    }

    /// Width of the encoded question and passage rows.
    pub fn dim(&self) -> usize {
        self.encoder.as_ref().map_or(self.cfg.embed_dim, GruEncoder::output_dim)
    }

    pub fn update_layer(&self) -> &FeedForward {
        &self.update
    }

    pub fn head(&self, which: ScoreHead) -> &Linear {
        match which {
            ScoreHead::Shared => &self.score,
            ScoreHead::Head3 => &self.score_head3,
            ScoreHead::Tail3 => &self.score_tail3,
        }
    }

    /// Token ids to `[T x dim]` contextual rows.
    pub fn encode(&self, g: &mut Graph, params: &ParameterSet, tokens: &[usize]) -> Result<NodeId> {
        if tokens.is_empty() {
            return Err(Error::Config("cannot encode an empty token sequence".into()));
        }
        let x = self.embed.forward(g, params, tokens)?;
        match &self.encoder {
            Some(enc) => Ok(enc.forward(g, params, x)?),
            None => Ok(x),
        }
    }

    /// Matching vector between question rows `q` `[N x d]` and passage rows
    /// `h` `[M x d]`. Each question position attends over the passage.
    pub fn match_state(&self, g: &mut Graph, params: &ParameterSet, q: NodeId, h: NodeId) -> Result<NodeId> {
        let d = self.dim();
        for x in [q, h] {
            match g.shape(x) {
                [n, w] if *n >= 1 && *w == d => {}
                s => return Err(Error::Config(format!("match input must be [n x {d}] with n >= 1, got {s:?}"))),
            }
        }
        let ht = g.transpose(h)?;
        let affinity = g.matmul(q, ht)?;
        let weights = g.softmax_rows(affinity)?;
        let attended = g.matmul(weights, h)?;
        let diff = g.sub(q, attended)?;
        let prod = g.mul(q, attended)?;
        let features = g.concat(&[q, attended, diff, prod])?;
        let states = self.matcher.run(g, params, features)?;
        Ok(g.max_pool_over_time(states)?)
    }

    pub fn match_score(
        &self,
        g: &mut Graph,
        params: &ParameterSet,
        q: NodeId,
        h: NodeId,
        head: ScoreHead,
    ) -> Result<MatchResult> {
        let state = self.match_state(g, params, q, h)?;
        let score = self.head(head).forward(g, params, state)?;
        Ok(MatchResult { state, score })
    }

    /// New state after choosing passage `chosen` whose matching vector
    /// against the previous query was `m`. Each query row is concatenated
    /// with `m` and projected back to the query width.
    pub fn advance(
        &self,
        g: &mut Graph,
        params: &ParameterSet,
        state: &RankerState,
        chosen: usize,
        m: NodeId,
        logprob: NodeId,
    ) -> Result<RankerState> {
        let query = if self.cfg.conditional {
            let rows = g.shape(state.query)[0];
            let wide = g.broadcast_rows(m, rows)?;
            let joined = g.concat(&[state.query, wide])?;
            self.update.forward(g, params, joined)?
        } else {
            state.query
        };
        let mut selected = state.selected.clone();
        selected.push(chosen);
        let mut step_logprobs = state.step_logprobs.clone();
        step_logprobs.push(logprob);
        Ok(RankerState {
            step: state.step + 1,
            query,
            selected,
            step_logprobs,
        })
    }
}

/// Shared graph for one question: encodes the question and pool once and
/// memoizes matching vectors per (query, passage).
pub struct Episode<'a> {
    ranker: &'a Ranker,
    params: &'a ParameterSet,
    hops: usize,
    pub graph: Graph,
    q0: NodeId,
    passages: Vec<NodeId>,
    matches: HashMap<(NodeId, usize), NodeId>,
    zero: NodeId,
}

impl<'a> Episode<'a> {
    pub fn new(ranker: &'a Ranker, params: &'a ParameterSet, inst: &QuestionInstance, hops: usize) -> Result<Self> {
        step_roles(hops, Direction::TailFirst)?;
        if inst.passages.is_empty() {
            return Err(Error::NoCandidate { step: 0 });
        }
        let mut graph = Graph::new();
        let q0 = ranker.encode(&mut graph, params, &inst.question)?;
        let passages = inst
            .passages
            .iter()
            .map(|p| ranker.encode(&mut graph, params, &p.tokens))
            .collect::<Result<Vec<_>>>()?;
        let zero = graph.constant(Tensor::scalar(0.0));
        Ok(Episode {
            ranker,
            params,
            hops,
            graph,
            q0,
            passages,
            matches: HashMap::new(),
            zero,
        })
    }

    pub fn pool_size(&self) -> usize {
        self.passages.len()
    }

    pub fn initial_state(&self) -> RankerState {
        RankerState {
            step: 0,
            query: self.q0,
            selected: Vec::new(),
            step_logprobs: Vec::new(),
        }
    }

    fn matched(&mut self, query: NodeId, passage: usize) -> Result<NodeId> {
        if let Some(&m) = self.matches.get(&(query, passage)) {
            return Ok(m);
        }
        let m = self
            .ranker
            .match_state(&mut self.graph, self.params, query, self.passages[passage])?;
        self.matches.insert((query, passage), m);
        Ok(m)
    }

    /// Softmax over the unmasked passages' scores at `state`'s step. Already
    /// selected passages are masked.
    pub fn select_distribution(&mut self, state: &RankerState) -> Result<StepDistribution> {
        let k = self.passages.len();
        let mask: Vec<bool> = (0..k).map(|i| !state.selected.contains(&i)).collect();
        if !mask.iter().any(|&m| m) {
            return Err(Error::NoCandidate { step: state.step });
        }
        // 3-hop head and tail are both chosen against the original question.
        let query = if self.hops == 3 && state.step < 2 {
            self.q0
        } else {
            state.query
        };
        let head = self.ranker.head(score_head(self.hops, state.step)).clone();
        let mut states = vec![None; k];
        let mut parts = Vec::with_capacity(k);
        for (i, &open) in mask.iter().enumerate() {
            if open {
                let m = self.matched(query, i)?;
                states[i] = Some(m);
                parts.push(head.forward(&mut self.graph, self.params, m)?);
            } else {
                parts.push(self.zero);
            }
        }
        let g = &mut self.graph;
        let stacked = g.stack_rows(&parts)?;
        let scores = g.reshape(stacked, &[k])?;
        let log_probs = g.log_softmax(scores, Some(&mask))?;
        let probs = softmax_raw(g.value(scores).data(), Some(&mask))?;
        Ok(StepDistribution {
            mask,
            scores,
            log_probs,
            probs,
            states,
        })
    }

    /// Records `choice` and moves the query state.
    pub fn commit(&mut self, state: &RankerState, dist: &StepDistribution, choice: usize) -> Result<RankerState> {
        let m = dist
            .states
            .get(choice)
            .copied()
            .flatten()
            .ok_or_else(|| Error::Format(format!("passage {choice} is not selectable at step {}", state.step)))?;
        let lp = self.graph.pick(dist.log_probs, choice)?;
        self.ranker
            .advance(&mut self.graph, self.params, state, choice, m, lp)
    }
}

/// How a rollout picks among the step distribution.
pub enum Chooser<'r> {
    Sample(&'r mut ChaCha8Rng),
    Greedy,
    /// Teacher forcing: the given selection per step.
    Forced(&'r [usize]),
}

impl Chooser<'_> {
    fn choose(&mut self, step: usize, dist: &StepDistribution) -> Result<usize> {
        match self {
            Chooser::Sample(rng) => Ok(sample_index(&dist.probs, &dist.mask, rng.gen::<f64>())),
            Chooser::Greedy => Ok(argmax(&dist.probs, &dist.mask)),
            Chooser::Forced(choices) => choices
                .get(step)
                .copied()
                .ok_or_else(|| Error::Format(format!("no forced choice for step {step}"))),
        }
    }
}

/// Inverse-CDF draw; `u` in `[0, 1)`.
fn sample_index(probs: &[f64], mask: &[bool], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, (&p, &open)) in probs.iter().zip(mask).enumerate() {
        if !open {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Highest probability among open entries; ties go to the lowest index.
fn argmax(probs: &[f64], mask: &[bool]) -> usize {
    let mut best: Option<usize> = None;
    for (i, &p) in probs.iter().enumerate() {
        if mask[i] && best.map_or(true, |b| p > probs[b]) {
            best = Some(i);
        }
    }
    best.expect("distribution has an open entry")
}

/// One recorded selection step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub role: ChainRole,
    pub distribution: Vec<f64>,
    pub choice: usize,
    pub logprob: f64,
    pub reward: f64,
}

/// Record of one decoded episode. Rewards are filled in by the trainer.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub question_id: String,
    pub steps: Vec<TraceStep>,
    /// Reasoner predictions consulted for bonus rewards, if any.
    pub reasoner_entities: Vec<String>,
}

/// A finished rollout with its graph kept for the policy gradient.
pub struct Rollout {
    pub graph: Graph,
    pub logprobs: Vec<NodeId>,
    pub trace: EpisodeTrace,
}

impl Rollout {
    pub fn selections(&self) -> Vec<usize> {
        self.trace.steps.iter().map(|s| s.choice).collect()
    }

    /// Passage indices in chain order (head first).
    pub fn chain_indices(&self) -> Vec<usize> {
        let roles: Vec<ChainRole> = self.trace.steps.iter().map(|s| s.role).collect();
        chain_order(&roles, &self.selections())
    }
}

/// Runs all selection steps for `inst`.
pub fn rollout(
    ranker: &Ranker,
    params: &ParameterSet,
    inst: &QuestionInstance,
    hops: usize,
    direction: Direction,
    mut chooser: Chooser<'_>,
) -> Result<Rollout> {
    let roles = step_roles(hops, direction)?;
    let mut ep = Episode::new(ranker, params, inst, hops)?;
    let mut state = ep.initial_state();
    let mut steps = Vec::with_capacity(roles.len());
    for &role in roles {
        let dist = ep.select_distribution(&state)?;
        let choice = chooser.choose(state.step, &dist)?;
        state = ep.commit(&state, &dist, choice)?;
        let lp = *state.step_logprobs.last().expect("step recorded");
        steps.push(TraceStep {
            role,
            distribution: dist.probs,
            choice,
            logprob: ep.graph.value(lp).item(),
            reward: 0.0,
        });
    }
    Ok(Rollout {
        graph: ep.graph,
        logprobs: state.step_logprobs,
        trace: EpisodeTrace {
            question_id: inst.id.clone(),
            steps,
            reasoner_entities: Vec::new(),
        },
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    Sample,
    Greedy,
}

/// Decodes a chain over the full pool. Returns passage ids head first.
pub fn decode_chain(
    ranker: &Ranker,
    params: &ParameterSet,
    inst: &QuestionInstance,
    direction: Direction,
    hops: usize,
    mode: DecodeMode,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<String>, EpisodeTrace)> {
    let chooser = match mode {
        DecodeMode::Sample => Chooser::Sample(rng),
        DecodeMode::Greedy => Chooser::Greedy,
    };
    let r = rollout(ranker, params, inst, hops, direction, chooser)?;
    let ids = r
        .chain_indices()
        .into_iter()
        .map(|i| inst.passages[i].id.clone())
        .collect();
    Ok((ids, r.trace))
}

/// Masked log-softmax in plain floats.
pub fn masked_log_softmax(scores: &[f64], mask: &[bool]) -> Vec<f64> {
    let max = scores
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&s, _)| s)
        .fold(f64::NEG_INFINITY, f64::max);
    let lse = max
        + scores
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(&s, _)| (s - max).exp())
            .sum::<f64>()
            .ln();
    scores
        .iter()
        .zip(mask)
        .map(|(&s, &m)| if m { s - lse } else { f64::NEG_INFINITY })
        .collect()
}

/// Picks the candidate with the highest teacher-forced log-likelihood.
///
/// `step_scores(prefix)` returns the raw scores of every passage at the step
/// after the selections in `prefix`; entries for passages in `prefix` are
/// ignored. Ties go to the lexicographically smallest chain.
pub fn best_by_step_scores<F>(
    inst: &QuestionInstance,
    candidates: &[CandidateChain],
    hops: usize,
    direction: Direction,
    mut step_scores: F,
) -> Result<(CandidateChain, f64)>
where
    F: FnMut(&[usize]) -> Result<Vec<f64>>,
{
    let roles = step_roles(hops, direction)?;
    let mut chains: Vec<&CandidateChain> = candidates.iter().collect();
    chains.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    chains.dedup();
    let mut memo: HashMap<Vec<usize>, Vec<f64>> = HashMap::new();
    let mut best: Option<(&CandidateChain, f64)> = None;
    for chain in chains {
        if chain.hops() != hops {
            return Err(Error::Format(format!("{}-passage candidate in a {hops}-hop decode", chain.hops())));
        }
        let indices = chain
            .passages
            .iter()
            .map(|p| {
                inst.passage_index(p)
                    .ok_or_else(|| Error::Format(format!("candidate passage {p:?} not in pool")))
            })
            .collect::<Result<Vec<_>>>()?;
        let sel = selection_order(roles, &indices);
        let mut total = 0.0;
        for t in 0..sel.len() {
            let prefix = &sel[..t];
            if !memo.contains_key(prefix) {
                let scores = step_scores(prefix)?;
                let mask: Vec<bool> = (0..scores.len()).map(|i| !prefix.contains(&i)).collect();
                memo.insert(prefix.to_vec(), masked_log_softmax(&scores, &mask));
            }
            total += memo[prefix][sel[t]];
        }
        if best.map_or(true, |(_, b)| total > b) {
            best = Some((chain, total));
        }
    }
    best.map(|(c, s)| (c.clone(), s))
        .ok_or_else(|| Error::EmptyCandidates(inst.id.clone()))
}

/// Inference over the candidate set: the member with the highest
/// log-likelihood under the ranker, teacher-forcing each chain in the
/// configured direction.
pub fn decode_from_candidates(
    ranker: &Ranker,
    params: &ParameterSet,
    inst: &QuestionInstance,
    candidates: &[CandidateChain],
    hops: usize,
    direction: Direction,
) -> Result<(CandidateChain, f64)> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates(inst.id.clone()));
    }
    let mut ep = Episode::new(ranker, params, inst, hops)?;
    let mut states: HashMap<Vec<usize>, RankerState> = HashMap::new();
    let mut dists: HashMap<Vec<usize>, StepDistribution> = HashMap::new();
    states.insert(Vec::new(), ep.initial_state());
    best_by_step_scores(inst, candidates, hops, direction, |prefix| {
        // Prefixes arrive in order, so the parent's state is always known.
        if !states.contains_key(prefix) {
            let (parent, last) = prefix.split_at(prefix.len() - 1);
            let pd = dists.get(parent).expect("parent distribution computed");
            let next = ep.commit(&states[parent], pd, last[0])?;
            states.insert(prefix.to_vec(), next);
        }
        let dist = ep.select_distribution(&states[prefix])?;
        let scores = ep.graph.value(dist.scores).data().to_vec();
        dists.insert(prefix.to_vec(), dist);
        Ok(scores)
    })
}

/// A predicted chain as written to JSONL.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictedChain {
    pub id: String,
    pub chain: PredictedPath,
    pub logprob: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictedPath {
    pub passages: Vec<String>,
    pub links: Option<Vec<String>>,
}

impl PredictedChain {
    pub fn from_candidate(id: &str, chain: &CandidateChain, logprob: f64) -> Self {
        PredictedChain {
            id: id.to_string(),
            chain: PredictedPath {
                passages: chain.passages.clone(),
                links: Some(chain.links.clone()),
            },
            logprob,
        }
    }
}

pub fn save_predictions(path: &Path, preds: &[PredictedChain]) -> Result<()> {
    Ok(write_jsonl(path, preds)?)
}

pub fn load_predictions(path: &Path) -> Result<Vec<PredictedChain>> {
    Ok(read_jsonl(path)?.into_iter().map(|(_, p)| p).collect())
}
