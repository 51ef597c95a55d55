//! Linking-entity reasoner: an attention reader over one passage that
//! scores each mentioned entity as the link to the neighbouring passage.

use std::collections::{BTreeMap, BTreeSet};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Passage;
use crate::nn::{cross_entropy, Embedding, EncoderConfig, FeedForward, GruEncoder, Linear, ParameterSet};
use crate::tensor::{Graph, NodeId, Tensor};
use crate::{Error, Result};


#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReasonerConfig {
    pub vocab_size: usize,
    /// Embedding width; each GRU direction gets half so the skip connection
    /// adds like-sized rows. Must be even.
    #[serde(default = "default_dim")]
    pub dim: usize,
}

fn default_dim() -> usize {
    16
}

impl ReasonerConfig {
    pub fn new(vocab_size: usize) -> Self {
        ReasonerConfig {
            vocab_size,
            dim: default_dim(),
        }
    }
}

/// Probability per mentioned entity, sorted by entity id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntityDistribution {
    pub passage: String,
    pub entries: Vec<(String, f64)>,
}

/// Graph handles for one reading of a passage.
#[derive(Clone, Debug)]
pub struct Reading {
    pub entities: Vec<String>,
    /// Entity probabilities `[E]`, aligned with `entities`.
    pub probs: NodeId,
    /// Per-token classifier scores `[M]`.
    pub token_scores: NodeId,
}

#[derive(Clone, Debug)]
pub struct Reasoner {
    cfg: ReasonerConfig,
    embed: Embedding,
    attend_question: FeedForward,
    first: GruEncoder,
    attend_self: FeedForward,
    second: GruEncoder,
    classify: Linear,
}

impl Reasoner {
    pub fn new(cfg: ReasonerConfig, rng: &mut ChaCha8Rng) -> Result<(Reasoner, ParameterSet)> {
        if cfg.dim == 0 || cfg.dim % 2 != 0 {
            return Err(Error::Config(format!("reasoner dim must be even and positive, got {}", cfg.dim)));
        }
        let d = cfg.dim;
        let mut params = ParameterSet::new();
        let gru = EncoderConfig {
            vocab_size: cfg.vocab_size,
            embed_dim: d,
            hidden_dim: d / 2,
            num_layers: 1,
            bidirectional: true,
        };
        let embed = Embedding::new(&mut params, "reasoner.embed", cfg.vocab_size, d, rng)?;
        let attend_question = FeedForward::new(&mut params, "reasoner.att1", 4 * d, d, rng)?;
        let first = GruEncoder::new(&mut params, "reasoner.gru1", d, &gru, rng)?;
        let attend_self = FeedForward::new(&mut params, "reasoner.att2", 4 * d, d, rng)?;
        let second = GruEncoder::new(&mut params, "reasoner.gru2", d, &gru, rng)?;
        let classify = Linear::new(&mut params, "reasoner.classify", d, 1, rng)?;
        let reasoner = Reasoner {
            cfg,
            embed,
            attend_question,
            first,
            attend_self,
            second,
            classify,
        };
        Ok((reasoner, params))
    }

    pub fn config(&self) -> &ReasonerConfig {
        &self.cfg
    }

    pub fn classifier(&self) -> &Linear {
        &self.classify
    }

    pub fn embed(&self, g: &mut Graph, params: &ParameterSet, tokens: &[usize]) -> Result<NodeId> {
        if tokens.is_empty() {
            return Err(Error::Config("cannot read an empty token sequence".into()));
        }
        Ok(self.embed.forward(g, params, tokens)?)
    }

    /// Question-to-passage, then self attention, each followed by a
    /// bidirectional GRU; the second GRU reads the sum of both attention
    /// outputs. `[N x d]`, `[M x d]` to `[M x d]`.
    pub fn reader_encode(&self, g: &mut Graph, params: &ParameterSet, qr: NodeId, hr: NodeId) -> Result<NodeId> {
        let m1 = attention(g, params, &self.attend_question, qr, hr)?;
        let h1 = self.first.forward(g, params, m1)?;
        let m2 = attention(g, params, &self.attend_self, h1, h1)?;
        let skip = g.add(m1, m2)?;
        Ok(self.second.forward(g, params, skip)?)
    }

    /// Reads `passage` against `question` and distributes probability over
    /// its mentioned entities.
    pub fn read(&self, g: &mut Graph, params: &ParameterSet, question: &[usize], passage: &Passage) -> Result<Reading> {
        let (entities, membership, overlap) = entity_membership(passage)?;
        let qr = self.embed(g, params, question)?;
        let hr = self.embed(g, params, &passage.tokens)?;
        let hp = self.reader_encode(g, params, qr, hr)?;
        let m = passage.tokens.len();
        let col = self.classify.forward(g, params, hp)?;
        let token_scores = g.reshape(col, &[m])?;
        let probs = entity_probs(g, token_scores, &membership, entities.len(), overlap)?;
        Ok(Reading {
            entities,
            probs,
            token_scores,
        })
    }

    pub fn entity_distribution(&self, params: &ParameterSet, question: &[usize], passage: &Passage) -> Result<EntityDistribution> {
        let mut g = Graph::new();
        let r = self.read(&mut g, params, question, passage)?;
        Ok(reading_distribution(&g, &r, &passage.id))
    }
}

pub fn reading_distribution(g: &Graph, r: &Reading, passage: &str) -> EntityDistribution {
    EntityDistribution {
        passage: passage.to_string(),
        entries: r
            .entities
            .iter()
            .cloned()
            .zip(g.value(r.probs).data().iter().copied())
            .collect(),
    }
}

/// Attention sub-module: every row of `b` attends over the rows of `a`
/// (weights normalized across `a`'s positions), then the four-way feature
/// `[b, b~, b - b~, b * b~]` is projected back to `b`'s width.
pub fn attention(g: &mut Graph, params: &ParameterSet, ffn: &FeedForward, a: NodeId, b: NodeId) -> Result<NodeId> {
    let bt = g.transpose(b)?;
    let affinity = g.matmul(a, bt)?; // [N x M]
    let per_b = g.transpose(affinity)?;
    let weights = g.softmax_rows(per_b)?; // [M x N], rows sum to 1
    let attended = g.matmul(weights, a)?;
    let diff = g.sub(b, attended)?;
    let prod = g.mul(b, attended)?;
    let features = g.concat(&[b, attended, diff, prod])?;
    Ok(ffn.forward(g, params, features)?)
}

/// Entities sorted by id, the token-by-entity 0/1 matrix, and whether any
/// token belongs to more than one entity.
fn entity_membership(passage: &Passage) -> Result<(Vec<String>, Tensor, bool)> {
    let mut spans: BTreeMap<&str, BTreeSet<usize>> = BTreeMap::new();
    for mention in &passage.mentions {
        spans
            .entry(mention.entity.as_str())
            .or_default()
            .extend(mention.start..mention.end);
    }
    spans.retain(|_, tokens| !tokens.is_empty());
    if spans.is_empty() {
        return Err(Error::NoEntity(passage.id.clone()));
    }
    let m = passage.tokens.len();
    let e = spans.len();
    let mut data = vec![0.0; m * e];
    let mut owners = vec![0usize; m];
    for (j, tokens) in spans.values().enumerate() {
        for &k in tokens {
            data[k * e + j] = 1.0;
            owners[k] += 1;
        }
    }
    let overlap = owners.iter().any(|&o| o > 1);
    let entities = spans.keys().map(|s| s.to_string()).collect();
    Ok((entities, Tensor::matrix(m, e, data)?, overlap))
}

/// Softmax over mention tokens, summed per entity.
fn entity_probs(g: &mut Graph, token_scores: NodeId, membership: &Tensor, entities: usize, overlap: bool) -> Result<NodeId> {
    let m = membership.shape()[0];
    let mask: Vec<bool> = (0..m).map(|k| membership.row(k).iter().any(|&v| v > 0.0)).collect();
    let tok = g.softmax(token_scores, Some(&mask))?;
    let row = g.reshape(tok, &[1, m])?;
    let member = g.constant(membership.clone());
    let summed = g.matmul(row, member)?;
    let probs = g.reshape(summed, &[entities])?;
    if overlap {
        Ok(g.normalize(probs)?)
    } else {
        Ok(probs)
    }
}

/// Mean binary cross-entropy of the reading against `positives`.
pub fn reasoner_loss(g: &mut Graph, reading: &Reading, positives: &BTreeSet<String>) -> Result<NodeId> {
    if let Some(p) = positives.iter().find(|p| !reading.entities.contains(p)) {
        return Err(Error::Config(format!("positive entity {p:?} is not mentioned")));
    }
    let targets: Vec<bool> = reading.entities.iter().map(|e| positives.contains(e)).collect();
    Ok(cross_entropy(g, reading.probs, &targets)?)
}

/// Most probable entity; ties go to the smallest id.
pub fn top1_entity(dist: &EntityDistribution) -> Option<&str> {
    let mut best: Option<&(String, f64)> = None;
    for entry in &dist.entries {
        let better = match best {
            None => true,
            Some(b) => entry.1 > b.1 || (entry.1 == b.1 && entry.0 < b.0),
        };
        if better {
            best = Some(entry);
        }
    }
    best.map(|(e, _)| e.as_str())
}
