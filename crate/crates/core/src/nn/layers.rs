use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{NnError, ParamId, ParameterSet, Result};
use crate::tensor::{Graph, NodeId, Tensor};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-12;

/// Slack allowed outside `[0, 1]` before a probability is rejected.
const PROB_SLACK: f64 = 1e-9;

fn fan_in_bound(fan_in: usize) -> f64 {
    1.0 / (fan_in.max(1) as f64).sqrt()
}

/// Token lookup table `[vocab x dim]`.
#[derive(Clone, Debug)]
pub struct Embedding {
    table: ParamId,
    vocab: usize,
    dim: usize,
}

impl Embedding {
    /// A lookup row has a single active input, so rows are drawn from
    /// uniform(-1, 1).
    pub fn new(
        params: &mut ParameterSet,
        name: &str,
        vocab: usize,
        dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let table = params.add_uniform(format!("{name}.table"), &[vocab, dim], 1.0, rng)?;
        Ok(Embedding { table, vocab, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `[ids.len() x dim]`; an empty sequence gives a `0 x dim` tensor.
    pub fn forward(&self, g: &mut Graph, params: &ParameterSet, ids: &[usize]) -> Result<NodeId> {
        if let Some(&id) = ids.iter().find(|&&id| id >= self.vocab) {
            return Err(NnError::Vocabulary {
                id,
                vocab: self.vocab,
            });
        }
        let table = params.node(g, self.table);
        Ok(g.gather_rows(table, ids)?)
    }
}

/// `x W + b`.
#[derive(Clone, Debug)]
pub struct Linear {
    weight: ParamId,
    bias: ParamId,
    d_in: usize,
    d_out: usize,
}

impl Linear {
    pub fn new(
        params: &mut ParameterSet,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let bound = fan_in_bound(d_in);
        let weight = params.add_uniform(format!("{name}.weight"), &[d_in, d_out], bound, rng)?;
        let bias = params.add_uniform(format!("{name}.bias"), &[d_out], bound, rng)?;
        Ok(Linear {
            weight,
            bias,
            d_in,
            d_out,
        })
    }

    pub fn weight(&self) -> ParamId {
        self.weight
    }

    pub fn bias(&self) -> ParamId {
        self.bias
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    /// Accepts `[d_in]` or `[T x d_in]`; the output keeps the input's rank.
    pub fn forward(&self, g: &mut Graph, params: &ParameterSet, x: NodeId) -> Result<NodeId> {
        let shape = g.shape(x).to_vec();
        let w = params.node(g, self.weight);
        let b = params.node(g, self.bias);
        match shape.as_slice() {
            [n] if *n == self.d_in => {
                let row = g.reshape(x, &[1, self.d_in])?;
                let y = g.matmul(row, w)?;
                let y = g.reshape(y, &[self.d_out])?;
                Ok(g.add(y, b)?)
            }
            _ => {
                let y = g.matmul(x, w)?;
                Ok(g.add_bias(y, b)?)
            }
        }
    }
}

/// Single affine layer followed by tanh.
#[derive(Clone, Debug)]
pub struct FeedForward {
    linear: Linear,
}

impl FeedForward {
    pub fn new(
        params: &mut ParameterSet,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(FeedForward {
            linear: Linear::new(params, name, d_in, d_out, rng)?,
        })
    }

    pub fn linear(&self) -> &Linear {
        &self.linear
    }

    pub fn forward(&self, g: &mut Graph, params: &ParameterSet, x: NodeId) -> Result<NodeId> {
        let y = self.linear.forward(g, params, x)?;
        Ok(g.tanh(y)?)
    }
}

/// One GRU direction.
///
/// Gate columns are ordered reset, update, candidate:
///
/// ```text
/// r  = sigmoid(x W_ir + b_ir + h W_hr + b_hr)
/// z  = sigmoid(x W_iz + b_iz + h W_hz + b_hz)
/// n  = tanh(x W_in + b_in + r * (h W_hn + b_hn))
/// h' = (1 - z) * n + z * h
/// ```
#[derive(Clone, Debug)]
pub struct GruCell {
    w_ih: ParamId,
    w_hh: ParamId,
    b_ih: ParamId,
    b_hh: ParamId,
    d_in: usize,
    hidden: usize,
}

impl GruCell {
    pub fn new(
        params: &mut ParameterSet,
        name: &str,
        d_in: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let bound = fan_in_bound(hidden);
        let w_ih = params.add_uniform(format!("{name}.w_ih"), &[d_in, 3 * hidden], bound, rng)?;
        let w_hh = params.add_uniform(format!("{name}.w_hh"), &[hidden, 3 * hidden], bound, rng)?;
        let b_ih = params.add_uniform(format!("{name}.b_ih"), &[3 * hidden], bound, rng)?;
        let b_hh = params.add_uniform(format!("{name}.b_hh"), &[3 * hidden], bound, rng)?;
        Ok(GruCell {
            w_ih,
            w_hh,
            b_ih,
            b_hh,
            d_in,
            hidden,
        })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn param_ids(&self) -> [ParamId; 4] {
        [self.w_ih, self.w_hh, self.b_ih, self.b_hh]
    }

    /// Runs over the rows of `x` (`[T x d_in]`, `T >= 1`) from a zero state
    /// and returns every hidden state, `[T x hidden]`.
    pub fn run(&self, g: &mut Graph, params: &ParameterSet, x: NodeId) -> Result<NodeId> {
        let steps = match g.shape(x) {
            [t, d] if *d == self.d_in && *t >= 1 => *t,
            s => {
                return Err(NnError::Config(format!(
                    "gru input must be [T x {}] with T >= 1, got {s:?}",
                    self.d_in
                )))
            }
        };
        let h = self.hidden;
        let w_ih = params.node(g, self.w_ih);
        let w_hh = params.node(g, self.w_hh);
        let b_ih = params.node(g, self.b_ih);
        let b_hh = params.node(g, self.b_hh);

        let xw = g.matmul(x, w_ih)?;
        let input_proj = g.add_bias(xw, b_ih)?;
        let mut state = g.constant(Tensor::zeros(&[1, h]));
        let mut outputs = Vec::with_capacity(steps);
        for t in 0..steps {
            let gi = g.row(input_proj, t)?;
            let hw = g.matmul(state, w_hh)?;
            let gh = g.add_bias(hw, b_hh)?;

            let gi_rz = g.slice_cols(gi, 0, 2 * h)?;
            let gh_rz = g.slice_cols(gh, 0, 2 * h)?;
            let rz_pre = g.add(gi_rz, gh_rz)?;
            let rz = g.sigmoid(rz_pre)?;
            let r = g.slice_cols(rz, 0, h)?;
            let z = g.slice_cols(rz, h, h)?;

            let gi_n = g.slice_cols(gi, 2 * h, h)?;
            let gh_n = g.slice_cols(gh, 2 * h, h)?;
            let gated = g.mul(r, gh_n)?;
            let n_pre = g.add(gi_n, gated)?;
            let n = g.tanh(n_pre)?;

            // (1 - z) * n + z * h  ==  n + z * (h - n)
            let diff = g.sub(state, n)?;
            let carry = g.mul(z, diff)?;
            state = g.add(n, carry)?;
            outputs.push(state);
        }
        Ok(g.stack_rows(&outputs)?)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    #[serde(default = "default_layers")]
    pub num_layers: usize,
    #[serde(default = "default_bidirectional")]
    pub bidirectional: bool,
}

fn default_layers() -> usize {
    2
}

fn default_bidirectional() -> bool {
    true
}

impl EncoderConfig {
    pub fn new(vocab_size: usize, embed_dim: usize, hidden_dim: usize) -> Self {
        EncoderConfig {
            vocab_size,
            embed_dim,
            hidden_dim,
            num_layers: default_layers(),
            bidirectional: default_bidirectional(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("num_layers", self.num_layers),
        ] {
            if v == 0 {
                return Err(NnError::Config(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }

    /// Width of each encoded position.
    pub fn output_dim(&self) -> usize {
        if self.bidirectional {
            2 * self.hidden_dim
        } else {
            self.hidden_dim
        }
    }
}

/// Stacked, optionally bidirectional GRU.
#[derive(Clone, Debug)]
pub struct GruEncoder {
    layers: Vec<(GruCell, Option<GruCell>)>,
    output_dim: usize,
}

impl GruEncoder {
    /// `d_in` is the width of the encoder's input rows; the configuration's
    /// vocabulary and embedding sizes are not consulted.
    pub fn new(
        params: &mut ParameterSet,
        name: &str,
        d_in: usize,
        cfg: &EncoderConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut layers = Vec::with_capacity(cfg.num_layers);
        let mut width = d_in;
        for l in 0..cfg.num_layers {
            let fwd = GruCell::new(params, &format!("{name}.l{l}.fwd"), width, cfg.hidden_dim, rng)?;
            let bwd = if cfg.bidirectional {
                Some(GruCell::new(
                    params,
                    &format!("{name}.l{l}.bwd"),
                    width,
                    cfg.hidden_dim,
                    rng,
                )?)
            } else {
                None
            };
            layers.push((fwd, bwd));
            width = cfg.output_dim();
        }
        Ok(GruEncoder {
            layers,
            output_dim: cfg.output_dim(),
        })
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn layers(&self) -> &[(GruCell, Option<GruCell>)] {
        &self.layers
    }

    /// `[T x d_in]` to `[T x output_dim]`. Backward states at position `t`
    /// summarize positions `t..T`.
    pub fn forward(&self, g: &mut Graph, params: &ParameterSet, x: NodeId) -> Result<NodeId> {
        let mut cur = x;
        for (fwd, bwd) in &self.layers {
            let f = fwd.run(g, params, cur)?;
            cur = match bwd {
                Some(bwd) => {
                    let rev = g.reverse_rows(cur)?;
                    let b = bwd.run(g, params, rev)?;
                    let b = g.reverse_rows(b)?;
                    g.concat(&[f, b])?
                }
                None => f,
            };
        }
        Ok(cur)
    }
}

/// Mean per-entry binary cross-entropy of `probs` against `targets`.
///
/// Each entry is an independent yes/no label, so several may be positive.
pub fn cross_entropy(g: &mut Graph, probs: NodeId, targets: &[bool]) -> Result<NodeId> {
    let n = g.value(probs).numel();
    if targets.is_empty() {
        return Err(NnError::EmptyTargets);
    }
    if n != targets.len() {
        return Err(NnError::Config(format!(
            "{} probabilities for {} targets",
            n,
            targets.len()
        )));
    }
    for (index, &value) in g.value(probs).data().iter().enumerate() {
        if !(-PROB_SLACK..=1.0 + PROB_SLACK).contains(&value) || value.is_nan() {
            return Err(NnError::InvalidDistribution { index, value });
        }
    }
    let hi = 1.0 - PROB_CLAMP;
    let log_p = g.ln_clamped(probs, PROB_CLAMP, hi)?;
    let complement = g.affine(probs, -1.0, 1.0)?;
    let log_q = g.ln_clamped(complement, PROB_CLAMP, hi)?;
    let pos: Vec<f64> = targets.iter().map(|&t| if t { 1.0 } else { 0.0 }).collect();
    let neg: Vec<f64> = pos.iter().map(|v| 1.0 - v).collect();
    let shape = g.shape(probs).to_vec();
    let pos = g.constant(Tensor::new(shape.clone(), pos)?);
    let neg = g.constant(Tensor::new(shape, neg)?);
    let a = g.mul(log_p, pos)?;
    let b = g.mul(log_q, neg)?;
    let total = g.add(a, b)?;
    let s = g.sum(total)?;
    Ok(g.scale(s, -1.0 / n as f64)?)
}
