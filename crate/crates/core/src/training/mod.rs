//! REINFORCE training of the ranker from distant-supervision rewards, and
//! the alternating game in which the reasoner grants bonus reward.
//!
//! Only candidate chains extracted from the corpus are consulted here; gold
//! annotations never reach the trainer.

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{extract_chains, head_tail_sets, write_jsonl, CandidateChain, Passage, QuestionInstance};
use crate::nn::{Gradients, ParameterSet};
use crate::ranker::{rollout, step_roles, ChainRole, Chooser, Direction, EpisodeTrace, Ranker, RankerConfig, Rollout};
use crate::reasoner::{reasoner_loss, top1_entity, Reasoner, ReasonerConfig};
use crate::tensor::{Graph, NodeId};
use crate::{Error, Result};

#[cfg(test)]
mod tests;

/// Which step's reward the reasoner may raise in 2-hop training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BonusPlacement {
    /// The reasoner reads the first pick; the second pick earns the bonus.
    #[default]
    SecondStep,
    /// The reasoner reads the second pick; the first pick earns the bonus.
    FirstStep,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Conditional ranker.
    Ranker,
    /// Per-passage scorer whose query state never moves.
    Independent,
    /// Conditional ranker warm start followed by the cooperative game.
    Cooperative,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Vocabulary size; derived from the largest token id in the training
    /// corpus when absent.
    pub vocab_size: Option<usize>,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub encoder_layers: usize,
    pub match_hidden: usize,
    pub reasoner_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: None,
            embed_dim: 16,
            hidden_dim: 8,
            encoder_layers: 1,
            match_hidden: 8,
            reasoner_dim: 16,
        }
    }
}

impl ModelConfig {
    pub fn resolve_vocab(&self, corpus: &[QuestionInstance]) -> usize {
        self.vocab_size
            .unwrap_or_else(|| corpus.iter().map(QuestionInstance::max_token).max().map_or(1, |m| m + 1))
    }

    pub fn ranker(&self, vocab_size: usize, conditional: bool) -> RankerConfig {
        RankerConfig {
            vocab_size,
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            encoder_layers: self.encoder_layers,
            bidirectional: true,
            match_hidden: self.match_hidden,
            conditional,
        }
    }

    pub fn reasoner(&self, vocab_size: usize) -> ReasonerConfig {
        ReasonerConfig {
            vocab_size,
            dim: self.reasoner_dim,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub hops: usize,
    pub direction: Direction,
    pub learning_rate: f64,
    /// Passes over the training corpus; one episode per instance per pass.
    pub epochs: usize,
    pub batch_size: usize,
    /// EMA decay of the per-step reward baseline.
    pub baseline_decay: f64,
    pub use_baseline: bool,
    pub clip_norm: f64,
    /// Cooperative bonus magnitude `r`.
    pub bonus: f64,
    pub bonus_placement: BonusPlacement,
    /// Epochs of the cooperative game after the warm start.
    pub cooperative_epochs: usize,
    /// Alternation schedule: reasoner epochs, then ranker epochs, repeated.
    pub reasoner_epochs_per_cycle: usize,
    pub ranker_epochs_per_cycle: usize,
    pub reasoner_learning_rate: f64,
    /// Write a checkpoint every this many epochs (0 disables).
    pub checkpoint_every: usize,
    pub seed: u64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hops: 2,
            direction: Direction::TailFirst,
            learning_rate: 1e-2,
            epochs: 10,
            batch_size: 16,
            baseline_decay: 0.9,
            use_baseline: true,
            clip_norm: 5.0,
            bonus: 1.0,
            bonus_placement: BonusPlacement::SecondStep,
            cooperative_epochs: 4,
            reasoner_epochs_per_cycle: 1,
            ranker_epochs_per_cycle: 1,
            reasoner_learning_rate: 5e-2,
            checkpoint_every: 0,
            seed: 0,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if !(2..=3).contains(&self.hops) {
            return fail("hops must be 2 or 3");
        }
        if !(self.bonus >= 0.0) {
            return fail("bonus must be non-negative");
        }
        if !(0.0..1.0).contains(&self.baseline_decay) {
            return fail("baseline_decay must lie in [0, 1)");
        }
        if !(self.learning_rate > 0.0) || !(self.reasoner_learning_rate > 0.0) {
            return fail("learning rates must be positive");
        }
        if !(self.clip_norm > 0.0) {
            return fail("clip_norm must be positive");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        if self.reasoner_epochs_per_cycle + self.ranker_epochs_per_cycle == 0 {
            return fail("alternation schedule is empty");
        }
        Ok(())
    }
}

/// Step-2 reward of the 2-hop game: `(r_h, r_t)` by set membership.
pub fn reward_2hop(head: &str, tail: &str, heads: &BTreeSet<String>, tails: &BTreeSet<String>) -> (f64, f64) {
    (indicator(heads.contains(head)), indicator(tails.contains(tail)))
}

/// `(r_h, r_m, r_t)`. The middle is rewarded only when the exact ordered
/// triple is a candidate chain.
pub fn reward_3hop(
    head: &str,
    middle: &str,
    tail: &str,
    chains: &[CandidateChain],
    heads: &BTreeSet<String>,
    tails: &BTreeSet<String>,
) -> (f64, f64, f64) {
    let on_path = chains
        .iter()
        .any(|c| c.passages.len() == 3 && c.passages[0] == head && c.passages[1] == middle && c.passages[2] == tail);
    (
        indicator(heads.contains(head)),
        indicator(on_path),
        indicator(tails.contains(tail)),
    )
}

/// `0` off the candidate set, `1` on it, `1 + bonus` on it when the
/// reasoner's predicted entity is mentioned in `passage`.
pub fn reward_cooperative(passage: &Passage, predicted: Option<&str>, members: &BTreeSet<String>, bonus: f64) -> f64 {
    let linked = predicted.is_some_and(|e| passage.mentions_entity(e));
    bonus_reward(members.contains(&passage.id), linked, bonus)
}

fn bonus_reward(member: bool, linked: bool, bonus: f64) -> f64 {
    match (member, linked) {
        (false, _) => 0.0,
        (true, false) => 1.0,
        (true, true) => 1.0 + bonus,
    }
}

fn indicator(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// A training instance with its candidate structure.
pub struct Prepared<'a> {
    pub inst: &'a QuestionInstance,
    pub chains: Vec<CandidateChain>,
    pub heads: BTreeSet<String>,
    pub tails: BTreeSet<String>,
}

/// Instances with at least one candidate chain; the rest carry no reward
/// signal and are skipped.
pub fn prepare(corpus: &[QuestionInstance], hops: usize) -> Vec<Prepared<'_>> {
    corpus
        .iter()
        .filter_map(|inst| {
            let chains = extract_chains(inst, hops);
            if chains.is_empty() {
                return None;
            }
            let (heads, tails) = head_tail_sets(&chains);
            Some(Prepared {
                inst,
                chains,
                heads,
                tails,
            })
        })
        .collect()
}

/// Distant-supervision reward per step, in step order.
pub fn base_rewards(prep: &Prepared<'_>, roles: &[ChainRole], selections: &[usize]) -> Vec<f64> {
    let id = |role: ChainRole| {
        let i = roles.iter().position(|&r| r == role).expect("role present");
        prep.inst.passages[selections[i]].id.as_str()
    };
    let by_role = |r: ChainRole, h: f64, m: f64, t: f64| match r {
        ChainRole::Head => h,
        ChainRole::Middle => m,
        ChainRole::Tail => t,
    };
    if roles.len() == 2 {
        let (h, t) = reward_2hop(id(ChainRole::Head), id(ChainRole::Tail), &prep.heads, &prep.tails);
        roles.iter().map(|&r| by_role(r, h, 0.0, t)).collect()
    } else {
        let (h, m, t) = reward_3hop(
            id(ChainRole::Head),
            id(ChainRole::Middle),
            id(ChainRole::Tail),
            &prep.chains,
            &prep.heads,
            &prep.tails,
        );
        roles.iter().map(|&r| by_role(r, h, m, t)).collect()
    }
}

/// A reasoner reading: which passage it reads and which neighbour supplies
/// the labels (and, for rewards, must mention the predicted entity).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct ReadPlan {
    read_step: usize,
    partner_step: usize,
    /// Step whose reward the prediction can raise.
    bonus_step: usize,
}

fn read_plans(hops: usize, roles: &[ChainRole], placement: BonusPlacement) -> Vec<ReadPlan> {
    if hops == 2 {
        return match placement {
            BonusPlacement::SecondStep => vec![ReadPlan {
                read_step: 0,
                partner_step: 1,
                bonus_step: 1,
            }],
            BonusPlacement::FirstStep => vec![ReadPlan {
                read_step: 1,
                partner_step: 0,
                bonus_step: 0,
            }],
        };
    }
    // 3-hop: head and tail are each read; their predicted link must appear in
    // the middle, and the bonus goes to the passage that was read.
    let step = |want: ChainRole| roles.iter().position(|&r| r == want).expect("role present");
    let middle = step(ChainRole::Middle);
    [ChainRole::Head, ChainRole::Tail]
        .into_iter()
        .map(|r| ReadPlan {
            read_step: step(r),
            partner_step: middle,
            bonus_step: step(r),
        })
        .collect()
}

/// Whether a sampled episode may train the reasoner under `plan`: the
/// pair must be jointly rewarded and share at least one entity.
fn reasoner_positives(prep: &Prepared<'_>, selections: &[usize], rewards: &[f64], plan: ReadPlan, hops: usize) -> Option<BTreeSet<String>> {
    let rewarded = if hops == 2 {
        rewards.iter().all(|&r| r >= 1.0)
    } else {
        rewards[plan.partner_step] >= 1.0
    };
    if !rewarded {
        return None;
    }
    let read = &prep.inst.passages[selections[plan.read_step]];
    let partner = &prep.inst.passages[selections[plan.partner_step]];
    let shared: BTreeSet<String> = read
        .entities()
        .into_iter()
        .filter(|e| partner.mentions_entity(e))
        .map(str::to_string)
        .collect();
    (!shared.is_empty()).then_some(shared)
}

/// Per-step EMA of rewards.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub decay: f64,
    pub enabled: bool,
    pub values: Vec<f64>,
}

impl Baseline {
    pub fn new(steps: usize, decay: f64, enabled: bool) -> Self {
        Baseline {
            decay,
            enabled,
            values: vec![0.0; steps],
        }
    }

    pub fn get(&self, step: usize) -> f64 {
        if self.enabled {
            self.values[step]
        } else {
            0.0
        }
    }

    /// Folds in one batch's mean reward per step.
    pub fn update(&mut self, batch_means: &[f64]) {
        for (b, &m) in self.values.iter_mut().zip(batch_means) {
            *b = self.decay * *b + (1.0 - self.decay) * m;
        }
    }
}

/// `-sum_t (r_t - b_t) log p_t * weight` over one episode's step log-probs.
pub fn surrogate(g: &mut Graph, logprobs: &[NodeId], rewards: &[f64], baseline: &[f64], weight: f64) -> Result<NodeId> {
    let mut terms = Vec::with_capacity(logprobs.len());
    for (t, &lp) in logprobs.iter().enumerate() {
        let advantage = rewards[t] - baseline[t];
        terms.push(g.scale(lp, -advantage * weight)?);
    }
    let stacked = g.stack_rows(&terms)?;
    Ok(g.sum(stacked)?)
}

/// The policy loss for a frozen trace, rebuilt from scratch with the trace's
/// choices forced.
#[allow(clippy::too_many_arguments)]
pub fn trace_surrogate(
    ranker: &Ranker,
    params: &ParameterSet,
    inst: &QuestionInstance,
    trace: &EpisodeTrace,
    baseline: &[f64],
    hops: usize,
    direction: Direction,
) -> Result<(Graph, NodeId)> {
    let choices: Vec<usize> = trace.steps.iter().map(|s| s.choice).collect();
    let rewards: Vec<f64> = trace.steps.iter().map(|s| s.reward).collect();
    let mut r = rollout(ranker, params, inst, hops, direction, Chooser::Forced(&choices))?;
    let loss = surrogate(&mut r.graph, &r.logprobs, &rewards, baseline, 1.0)?;
    Ok((r.graph, loss))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub mean_reward: f64,
    pub loss: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
}

/// One REINFORCE update from rollouts whose traces carry rewards. Uses the
/// baseline as it stood before this batch, then folds the batch in.
pub fn policy_gradient_step(
    rollouts: &mut [Rollout],
    params: &mut ParameterSet,
    baseline: &mut Baseline,
    learning_rate: f64,
    clip_norm: f64,
) -> Result<StepStats> {
    if rollouts.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let steps = baseline.values.len();
    let b: Vec<f64> = (0..steps).map(|t| baseline.get(t)).collect();
    let weight = 1.0 / rollouts.len() as f64;
    let mut grads = Gradients::zeros(params);
    let mut loss = 0.0;
    let mut reward_sum = 0.0;
    let mut step_sums = vec![0.0; steps];
    for r in rollouts.iter_mut() {
        let rewards: Vec<f64> = r.trace.steps.iter().map(|s| s.reward).collect();
        if rewards.len() != steps {
            return Err(Error::Format(format!("trace has {} steps, baseline {steps}", rewards.len())));
        }
        let node = surrogate(&mut r.graph, &r.logprobs, &rewards, &b, weight)?;
        loss += r.graph.value(node).item();
        r.graph.backward(node)?;
        grads.accumulate(&r.graph, 1.0);
        reward_sum += rewards.iter().sum::<f64>();
        for (s, v) in step_sums.iter_mut().zip(&rewards) {
            *s += v;
        }
    }
    let grad_norm = grads.clip_global_norm(clip_norm);
    params.sgd_step(&grads, learning_rate);
    let means: Vec<f64> = step_sums.iter().map(|s| s * weight).collect();
    baseline.update(&means);
    Ok(StepStats {
        mean_reward: reward_sum * weight,
        loss,
        grad_norm,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Ranker,
    Reasoner,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub mean_reward: f64,
    pub loss: f64,
    pub dev_accuracy: Option<f64>,
}

/// Dev-set scorer called after each epoch.
pub type Evaluator<'e> = dyn Fn(&Ranker, &ParameterSet) -> Result<f64> + 'e;

#[derive(Default)]
pub struct TrainOptions<'e> {
    pub evaluator: Option<&'e Evaluator<'e>>,
    pub checkpoint_dir: Option<PathBuf>,
}

// Stream tags keep the per-purpose random streams apart.
const TAG_INIT: u64 = 1;
const TAG_SHUFFLE: u64 = 2;
const TAG_EPISODE: u64 = 3;
const TAG_REASONER_INIT: u64 = 4;

/// Independent stream for `(seed, tag, epoch, index)`.
pub fn stream_rng(seed: u64, tag: u64, epoch: u64, index: u64) -> ChaCha8Rng {
    let mut bytes = [0u8; 32];
    for (chunk, v) in bytes.chunks_exact_mut(8).zip([seed, tag, epoch, index]) {
        chunk.copy_from_slice(&v.to_le_bytes());
    }
    ChaCha8Rng::from_seed(bytes)
}

/// Frozen reasoner consulted for bonus rewards.
pub struct Cooperation<'r> {
    pub reasoner: &'r Reasoner,
    pub params: &'r ParameterSet,
}

/// Owns the ranker parameters and everything needed to resume training.
#[derive(Clone)]
pub struct RankerTrainer {
    pub cfg: TrainConfig,
    pub ranker: Ranker,
    pub params: ParameterSet,
    pub baseline: Baseline,
    /// Index of the next epoch to run.
    pub epoch: usize,
    pub log: Vec<LogRecord>,
}

#[derive(Serialize, Deserialize)]
struct TrainerState {
    kind: String,
    config: TrainConfig,
    ranker: RankerConfig,
    epoch: usize,
    baseline: Baseline,
    log: Vec<LogRecord>,
}

impl RankerTrainer {
    pub fn new(cfg: TrainConfig, vocab_size: usize, conditional: bool) -> Result<Self> {
        cfg.validate()?;
        let rc = cfg.model.ranker(vocab_size, conditional);
        let (ranker, params) = Ranker::new(rc, &mut stream_rng(cfg.seed, TAG_INIT, 0, 0))?;
        let steps = step_roles(cfg.hops, cfg.direction)?.len();
        let baseline = Baseline::new(steps, cfg.baseline_decay, cfg.use_baseline);
        Ok(RankerTrainer {
            cfg,
            ranker,
            params,
            baseline,
            epoch: 0,
            log: Vec::new(),
        })
    }

    /// Samples one episode per instance, assigns rewards, and updates in
    /// batches.
    pub fn run_epoch(&mut self, data: &[Prepared<'_>], coop: Option<&Cooperation<'_>>) -> Result<LogRecord> {
        let cfg = self.cfg.clone();
        let roles = step_roles(cfg.hops, cfg.direction)?;
        let plans = read_plans(cfg.hops, roles, cfg.bonus_placement);
        let epoch = self.epoch as u64;
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut stream_rng(cfg.seed, TAG_SHUFFLE, epoch, 0));
        let mut predictions: HashMap<(usize, usize), Option<String>> = HashMap::new();

        let (mut reward_sum, mut loss_sum, mut batches) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let mut batch = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let prep = &data[i];
                let mut rng = stream_rng(cfg.seed, TAG_EPISODE, epoch, i as u64);
                let mut r = rollout(&self.ranker, &self.params, prep.inst, cfg.hops, cfg.direction, Chooser::Sample(&mut rng))?;
                let selections = r.selections();
                let mut rewards = base_rewards(prep, roles, &selections);
                if let Some(c) = coop {
                    for plan in &plans {
                        let read = selections[plan.read_step];
                        let predicted = match predictions.get(&(i, read)) {
                            Some(p) => p.clone(),
                            None => {
                                let p = predict_link(c, prep.inst, read)?;
                                predictions.insert((i, read), p.clone());
                                p
                            }
                        };
                        let linked = predicted
                            .as_deref()
                            .is_some_and(|e| prep.inst.passages[selections[plan.partner_step]].mentions_entity(e));
                        rewards[plan.bonus_step] = bonus_reward(rewards[plan.bonus_step] >= 1.0, linked, cfg.bonus);
                        r.trace.reasoner_entities.push(predicted.unwrap_or_default());
                    }
                }
                for (s, v) in r.trace.steps.iter_mut().zip(&rewards) {
                    s.reward = *v;
                }
                batch.push(r);
            }
            let stats = policy_gradient_step(&mut batch, &mut self.params, &mut self.baseline, cfg.learning_rate, cfg.clip_norm)?;
            reward_sum += stats.mean_reward * chunk.len() as f64;
            loss_sum += stats.loss;
            batches += 1;
        }
        let n = data.len().max(1) as f64;
        let record = LogRecord {
            epoch: self.epoch,
            phase: Phase::Ranker,
            mean_reward: reward_sum / n,
            loss: loss_sum / batches.max(1) as f64,
            dev_accuracy: None,
        };
        self.epoch += 1;
        Ok(record)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let state = TrainerState {
            kind: "ranker".into(),
            config: self.cfg.clone(),
            ranker: self.ranker.config().clone(),
            epoch: self.epoch,
            baseline: self.baseline.clone(),
            log: self.log.clone(),
        };
        let extra = serde_json::to_value(&state).map_err(|e| Error::Format(e.to_string()))?;
        Ok(self.params.save(path, &extra)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (loaded, extra) = ParameterSet::load(path)?;
        let state: TrainerState = serde_json::from_value(extra).map_err(|e| Error::Format(format!("trainer state: {e}")))?;
        if state.kind != "ranker" {
            return Err(Error::Format(format!("expected a ranker checkpoint, found {:?}", state.kind)));
        }
        let (ranker, mut params) = Ranker::new(state.ranker, &mut stream_rng(state.config.seed, TAG_INIT, 0, 0))?;
        params.assign_from(&loaded)?;
        Ok(RankerTrainer {
            cfg: state.config,
            ranker,
            params,
            baseline: state.baseline,
            epoch: state.epoch,
            log: state.log,
        })
    }

    fn finish_epoch(&mut self, mut record: LogRecord, opts: &TrainOptions<'_>) -> Result<()> {
        // Reasoner epochs leave the ranker untouched.
        if let (Some(eval), Phase::Ranker) = (opts.evaluator, record.phase) {
            record.dev_accuracy = Some(eval(&self.ranker, &self.params)?);
        }
        self.log.push(record);
        if let Some(dir) = &opts.checkpoint_dir {
            if self.cfg.checkpoint_every > 0 && self.epoch % self.cfg.checkpoint_every == 0 {
                std::fs::create_dir_all(dir)?;
                self.save(&dir.join(format!("ranker-epoch{}.ckpt", self.epoch)))?;
            }
        }
        Ok(())
    }

    /// Runs epochs until `cfg.epochs` have been completed in total.
    pub fn train(&mut self, data: &[Prepared<'_>], opts: &TrainOptions<'_>) -> Result<()> {
        while self.epoch < self.cfg.epochs {
            let record = self.run_epoch(data, None)?;
            self.finish_epoch(record, opts)?;
        }
        Ok(())
    }
}

fn predict_link(c: &Cooperation<'_>, inst: &QuestionInstance, passage: usize) -> Result<Option<String>> {
    let p = &inst.passages[passage];
    if p.mentions.is_empty() {
        return Ok(None);
    }
    let dist = c.reasoner.entity_distribution(c.params, &inst.question, p)?;
    Ok(top1_entity(&dist).map(str::to_string))
}

/// Trains a ranker (`conditional = false` gives the independent scorer).
pub fn train_ranker(corpus: &[QuestionInstance], cfg: &TrainConfig, conditional: bool, opts: &TrainOptions<'_>) -> Result<RankerTrainer> {
    let vocab = cfg.model.resolve_vocab(corpus);
    let mut trainer = RankerTrainer::new(cfg.clone(), vocab, conditional)?;
    let data = prepare(corpus, cfg.hops);
    trainer.train(&data, opts)?;
    Ok(trainer)
}

pub struct CooperativeOutcome {
    pub trainer: RankerTrainer,
    pub reasoner: Reasoner,
    pub reasoner_params: ParameterSet,
}

/// Phase of cooperative epoch `e` under the configured alternation.
pub fn cooperative_phase(cfg: &TrainConfig, e: usize) -> Phase {
    let cycle = cfg.reasoner_epochs_per_cycle + cfg.ranker_epochs_per_cycle;
    if e % cycle < cfg.reasoner_epochs_per_cycle {
        Phase::Reasoner
    } else {
        Phase::Ranker
    }
}

/// Alternates reasoner and ranker epochs starting from a trained ranker.
pub fn train_cooperative(corpus: &[QuestionInstance], mut warm: RankerTrainer, opts: &TrainOptions<'_>) -> Result<CooperativeOutcome> {
    let cfg = warm.cfg.clone();
    let vocab = warm.ranker.config().vocab_size;
    let (reasoner, mut reasoner_params) = Reasoner::new(cfg.model.reasoner(vocab), &mut stream_rng(cfg.seed, TAG_REASONER_INIT, 0, 0))?;
    let data = prepare(corpus, cfg.hops);
    for e in 0..cfg.cooperative_epochs {
        let record = match cooperative_phase(&cfg, e) {
            Phase::Reasoner => {
                let r = reasoner_epoch(&warm, &data, &reasoner, &mut reasoner_params)?;
                warm.epoch += 1;
                r
            }
            Phase::Ranker => {
                let coop = Cooperation {
                    reasoner: &reasoner,
                    params: &reasoner_params,
                };
                warm.run_epoch(&data, Some(&coop))?
            }
        };
        warm.finish_epoch(record, opts)?;
    }
    if let Some(dir) = &opts.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
        let extra = serde_json::json!({ "kind": "reasoner", "reasoner": reasoner.config() });
        reasoner_params.save(&dir.join("reasoner.ckpt"), &extra)?;
    }
    Ok(CooperativeOutcome {
        trainer: warm,
        reasoner,
        reasoner_params,
    })
}

/// One reasoner epoch against the frozen ranker's sampled selections.
fn reasoner_epoch(trainer: &RankerTrainer, data: &[Prepared<'_>], reasoner: &Reasoner, params: &mut ParameterSet) -> Result<LogRecord> {
    let cfg = &trainer.cfg;
    let roles = step_roles(cfg.hops, cfg.direction)?;
    let plans = read_plans(cfg.hops, roles, cfg.bonus_placement);
    let epoch = trainer.epoch as u64;
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut stream_rng(cfg.seed, TAG_SHUFFLE, epoch, 0));

    let (mut reward_sum, mut loss_sum, mut examples) = (0.0, 0.0, 0usize);
    for chunk in order.chunks(cfg.batch_size) {
        let mut grads = Gradients::zeros(params);
        let mut batch = Vec::new();
        for &i in chunk {
            let prep = &data[i];
            let mut rng = stream_rng(cfg.seed, TAG_EPISODE, epoch, i as u64);
            let r = rollout(&trainer.ranker, &trainer.params, prep.inst, cfg.hops, cfg.direction, Chooser::Sample(&mut rng))?;
            let selections = r.selections();
            let rewards = base_rewards(prep, roles, &selections);
            reward_sum += rewards.iter().sum::<f64>();
            for plan in &plans {
                if let Some(pos) = reasoner_positives(prep, &selections, &rewards, *plan, cfg.hops) {
                    batch.push((prep.inst, selections[plan.read_step], pos));
                }
            }
        }
        if batch.is_empty() {
            continue;
        }
        let weight = 1.0 / batch.len() as f64;
        for (inst, read, positives) in &batch {
            let mut g = Graph::new();
            let reading = reasoner.read(&mut g, params, &inst.question, &inst.passages[*read])?;
            let loss = reasoner_loss(&mut g, &reading, positives)?;
            loss_sum += g.value(loss).item();
            g.backward(loss)?;
            grads.accumulate(&g, weight);
        }
        examples += batch.len();
        grads.clip_global_norm(cfg.clip_norm);
        params.sgd_step(&grads, cfg.reasoner_learning_rate);
    }
    Ok(LogRecord {
        epoch: trainer.epoch,
        phase: Phase::Reasoner,
        mean_reward: reward_sum / data.len().max(1) as f64,
        loss: loss_sum / examples.max(1) as f64,
        dev_accuracy: None,
    })
}

pub fn save_log(path: &Path, log: &[LogRecord]) -> Result<()> {
    Ok(write_jsonl(path, log)?)
}
