//! Finite-difference checks over every differentiable piece of the model,
//! run from seeded random configurations. Used by the `gradcheck` command
//! and the acceptance suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::corpus::{generate_synthetic, SynthConfig};
use crate::nn::{check_parameter_gradients, cross_entropy, EncoderConfig, Embedding, FeedForward, GruEncoder, Linear, ParameterSet};
use crate::ranker::{rollout, Chooser, Direction, Ranker, RankerConfig, ScoreHead};
use crate::reasoner::{Reasoner, ReasonerConfig};
use crate::tensor::{grad_check, GradCheckReport, Graph, NodeId, Tensor, TensorError};
use crate::training::trace_surrogate;
use crate::Result;

pub const EPS: f64 = 1e-6;
pub const TOL: f64 = 1e-5;

/// Outcome of one named check over all its configurations.
#[derive(Clone, Debug, Serialize)]
pub struct SuiteEntry {
    pub name: String,
    pub configs: usize,
    pub failures: usize,
    pub max_rel_error: f64,
}

impl SuiteEntry {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

struct Suite {
    seed: u64,
    configs: usize,
    entries: Vec<SuiteEntry>,
}

impl Suite {
    /// Runs `check` once per configuration with its own RNG stream.
    fn run(&mut self, name: &str, check: impl Fn(&mut ChaCha8Rng, u64) -> Result<GradCheckReport>) -> Result<()> {
        let mut entry = SuiteEntry {
            name: name.to_string(),
            configs: self.configs,
            failures: 0,
            max_rel_error: 0.0,
        };
        let salt = name.bytes().fold(0xcbf29ce484222325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100000001b3));
        for c in 0..self.configs as u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ salt ^ c.wrapping_mul(0x9e3779b97f4a7c15));
            let report = check(&mut rng, c)?;
            entry.failures += usize::from(!report.passed);
            entry.max_rel_error = entry.max_rel_error.max(report.max_rel_error);
        }
        self.entries.push(entry);
        Ok(())
    }

    /// Elementwise or structural op applied to a random input, reduced
    /// through random weights.
    fn op(&mut self, name: &str, shape: &[usize], range: (f64, f64), f: impl Fn(&mut Graph, NodeId, &[f64]) -> std::result::Result<NodeId, TensorError>) -> Result<()> {
        self.run(name, |rng, _| {
            let x = random(rng, shape, range);
            let aux: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
            Ok(grad_check(
                |g: &mut Graph, x: NodeId| {
                    let y = f(g, x, &aux)?;
                    weighted_sum(g, y, &aux)
                },
                &x,
                EPS,
                TOL,
            )?)
        })
    }
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize], (lo, hi): (f64, f64)) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).expect("shape matches data")
}

/// Constant tensor of `shape` filled from `aux`, cycling.
fn aux_const(g: &mut Graph, shape: &[usize], aux: &[f64], offset: usize) -> NodeId {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|i| aux[(offset + i) % aux.len()]).collect();
    g.constant(Tensor::new(shape.to_vec(), data).expect("shape matches data"))
}

fn weighted_sum(g: &mut Graph, y: NodeId, aux: &[f64]) -> std::result::Result<NodeId, TensorError> {
    let shape = g.shape(y).to_vec();
    let w = aux_const(g, &shape, aux, 7);
    let prod = g.mul(y, w)?;
    g.sum(prod)
}

/// Checks every tensor op, layer, the ranker's matching score, the
/// reasoner's reader and the frozen-trace policy surrogate, each over
/// `configs` seeded configurations.
pub fn run_gradient_suite(seed: u64, configs: usize) -> Result<Vec<SuiteEntry>> {
    let mut s = Suite {
        seed,
        configs,
        entries: Vec::new(),
    };
    let unit = (-1.0, 1.0);
    s.op("matmul", &[2, 3], unit, |g, x, a| {
        let c = aux_const(g, &[3, 4], a, 0);
        let left = g.matmul(x, c)?;
        let xt = g.transpose(x)?;
        let right = g.matmul(x, xt)?;
        let l = g.sum(left)?;
        let r = g.sum(right)?;
        g.add(l, r)
    })?;
    s.op("transpose", &[2, 3], unit, |g, x, _| g.transpose(x))?;
    s.op("add", &[2, 3], unit, |g, x, a| {
        let c = aux_const(g, &[2, 3], a, 1);
        g.add(x, c)
    })?;
    s.op("sub", &[4], unit, |g, x, a| {
        let c = aux_const(g, &[4], a, 2);
        g.sub(c, x)
    })?;
    s.op("mul", &[5], unit, |g, x, _| g.mul(x, x))?;
    s.op("add_bias", &[2, 3], unit, |g, x, _| {
        let r = g.row(x, 0)?;
        let b = g.reshape(r, &[3])?;
        g.add_bias(x, b)
    })?;
    s.op("scale", &[3], unit, |g, x, _| g.scale(x, -1.7))?;
    s.op("affine", &[3], unit, |g, x, _| g.affine(x, 2.5, -0.25))?;
    s.op("tanh", &[2, 2], (-2.0, 2.0), |g, x, _| g.tanh(x))?;
    s.op("sigmoid", &[5], (-3.0, 3.0), |g, x, _| g.sigmoid(x))?;
    s.op("ln_clamped", &[4], (0.2, 2.0), |g, x, _| g.ln_clamped(x, 1e-12, 1e12))?;
    s.op("softmax", &[5], (-2.0, 2.0), |g, x, _| g.softmax(x, Some(&[true, false, true, true, true])))?;
    // Masked outputs are -inf, so only open entries enter the reduction.
    s.op("log_softmax", &[5], (-2.0, 2.0), |g, x, a| {
        let y = g.log_softmax(x, Some(&[true, true, false, true, true]))?;
        let mut acc = g.pick(y, 0)?;
        for i in [1, 3, 4] {
            let p = g.pick(y, i)?;
            let w = g.scale(p, a[i])?;
            acc = g.add(acc, w)?;
        }
        Ok(acc)
    })?;
    s.op("softmax_rows", &[3, 4], (-2.0, 2.0), |g, x, _| g.softmax_rows(x))?;
    s.op("concat", &[2, 3], unit, |g, x, a| {
        let c = aux_const(g, &[2, 2], a, 3);
        g.concat(&[x, c, x])
    })?;
    s.op("max_pool_over_time", &[4, 3], unit, |g, x, _| g.max_pool_over_time(x))?;
    s.op("gather_rows", &[4, 3], unit, |g, x, _| g.gather_rows(x, &[2, 0, 2, 3]))?;
    s.op("row", &[3, 2], unit, |g, x, _| g.row(x, 1))?;
    s.op("slice_cols", &[3, 5], unit, |g, x, _| g.slice_cols(x, 1, 3))?;
    s.op("stack_rows", &[3, 2], unit, |g, x, _| {
        let a = g.row(x, 2)?;
        let b = g.row(x, 0)?;
        g.stack_rows(&[a, b, a])
    })?;
    s.op("reverse_rows", &[4, 2], unit, |g, x, _| g.reverse_rows(x))?;
    s.op("broadcast_rows", &[3], unit, |g, x, _| g.broadcast_rows(x, 4))?;
    s.op("sum", &[2, 3], unit, |g, x, _| g.sum(x))?;
    s.op("mean", &[2, 3], unit, |g, x, _| g.mean(x))?;
    s.op("reshape", &[2, 3], unit, |g, x, _| g.reshape(x, &[3, 2]))?;
    s.op("pick", &[4], unit, |g, x, _| g.pick(x, 2))?;
    s.op("normalize", &[4], (0.1, 2.0), |g, x, _| g.normalize(x))?;
    s.op("map_custom", &[3], (-2.0, 2.0), |g, x, _| g.map_custom(x, f64::sin, f64::cos))?;

    s.run("embedding+linear", |rng, _| {
        let mut params = ParameterSet::new();
        let (vocab, d) = (5, rng.gen_range(1..4));
        let emb = Embedding::new(&mut params, "emb", vocab, d, rng)?;
        let lin = Linear::new(&mut params, "lin", d, rng.gen_range(1..4), rng)?;
        let ids: Vec<usize> = (0..rng.gen_range(1..5)).map(|_| rng.gen_range(0..vocab)).collect();
        let aux: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Ok(check_parameter_gradients(
            &params,
            |g, p| -> Result<NodeId> {
                let e = emb.forward(g, p, &ids)?;
                let y = lin.forward(g, p, e)?;
                Ok(weighted_sum(g, y, &aux)?)
            },
            EPS,
            TOL,
            None,
            rng,
        )?)
    })?;
    s.run("gru_encoder+feedforward", |rng, c| {
        let mut params = ParameterSet::new();
        let (d, h) = (rng.gen_range(1..4), rng.gen_range(1..3));
        let cfg = EncoderConfig {
            num_layers: 1 + c as usize % 2,
            bidirectional: c % 3 != 0,
            ..EncoderConfig::new(6, d, h)
        };
        let enc = GruEncoder::new(&mut params, "enc", d, &cfg, rng)?;
        let ffn = FeedForward::new(&mut params, "ffn", cfg.output_dim(), 2, rng)?;
        let steps = rng.gen_range(1..5);
        let x = random(rng, &[steps, d], unit);
        let aux: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let by_params = check_parameter_gradients(
            &params,
            |g, p| -> Result<NodeId> {
                let xn = g.constant(x.clone());
                let hs = enc.forward(g, p, xn)?;
                let y = ffn.forward(g, p, hs)?;
                Ok(weighted_sum(g, y, &aux)?)
            },
            EPS,
            TOL,
            None,
            rng,
        )?;
        let by_input = grad_check(
            |g: &mut Graph, xn: NodeId| -> Result<NodeId> {
                let hs = enc.forward(g, &params, xn)?;
                Ok(weighted_sum(g, hs, &aux)?)
            },
            &x,
            EPS,
            TOL,
        )?;
        Ok(worse(by_params, by_input))
    })?;
    s.run("cross_entropy", |rng, _| {
        let n = rng.gen_range(1..6);
        let probs = random(rng, &[n], (0.05, 0.95));
        let targets: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        Ok(grad_check(|g: &mut Graph, p: NodeId| -> Result<NodeId> { Ok(cross_entropy(g, p, &targets)?) }, &probs, EPS, TOL)?)
    })?;
    s.run("match_score", |rng, c| {
        let vocab = 12;
        let cfg = RankerConfig {
            embed_dim: 4,
            hidden_dim: 3,
            match_hidden: 3,
            encoder_layers: c as usize % 2,
            conditional: true,
            ..RankerConfig::new(vocab)
        };
        let (ranker, params) = Ranker::new(cfg, rng)?;
        let q: Vec<usize> = (0..rng.gen_range(1..4)).map(|_| rng.gen_range(0..vocab)).collect();
        let h: Vec<usize> = (0..rng.gen_range(1..5)).map(|_| rng.gen_range(0..vocab)).collect();
        let head = [ScoreHead::Shared, ScoreHead::Head3, ScoreHead::Tail3][c as usize % 3];
        Ok(check_parameter_gradients(
            &params,
            |g, p| -> Result<NodeId> {
                let qn = ranker.encode(g, p, &q)?;
                let hn = ranker.encode(g, p, &h)?;
                Ok(ranker.match_score(g, p, qn, hn, head)?.score)
            },
            EPS,
            TOL,
            Some(6),
            rng,
        )?)
    })?;
    s.run("reader_encode", |rng, _| {
        let (reasoner, params) = Reasoner::new(ReasonerConfig { vocab_size: 10, dim: 4 }, rng)?;
        let (n, m) = (rng.gen_range(1..4), rng.gen_range(1..5));
        let q = random(rng, &[n, 4], unit);
        let h = random(rng, &[m, 4], unit);
        let aux: Vec<f64> = (0..32).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let by_params = check_parameter_gradients(
            &params,
            |g, p| -> Result<NodeId> {
                let qn = g.constant(q.clone());
                let hn = g.constant(h.clone());
                let y = reasoner.reader_encode(g, p, qn, hn)?;
                Ok(weighted_sum(g, y, &aux)?)
            },
            EPS,
            TOL,
            Some(4),
            rng,
        )?;
        let by_input = grad_check(
            |g: &mut Graph, hn: NodeId| -> Result<NodeId> {
                let qn = g.constant(q.clone());
                let y = reasoner.reader_encode(g, &params, qn, hn)?;
                Ok(weighted_sum(g, y, &aux)?)
            },
            &h,
            EPS,
            TOL,
        )?;
        Ok(worse(by_params, by_input))
    })?;
    s.run("policy_surrogate", |rng, c| {
        let hops = 2 + c as usize % 2;
        let synth = SynthConfig {
            hops,
            questions: 1,
            pool_size: 4 + hops,
            ..SynthConfig::default()
        };
        let inst = generate_synthetic(&synth, rng.gen())?.0.remove(0);
        let direction = if c % 4 < 2 { Direction::TailFirst } else { Direction::HeadFirst };
        let cfg = RankerConfig {
            embed_dim: 4,
            hidden_dim: 3,
            match_hidden: 3,
            encoder_layers: 1,
            conditional: c % 3 != 0,
            ..RankerConfig::new(synth.vocab_size())
        };
        let (ranker, params) = Ranker::new(cfg, rng)?;
        let mut r = rollout(&ranker, &params, &inst, hops, direction, Chooser::Sample(rng))?;
        for s in r.trace.steps.iter_mut() {
            s.reward = rng.gen_range(0.0..2.0);
        }
        let baseline: Vec<f64> = (0..hops).map(|_| rng.gen_range(0.0..1.0)).collect();
        let trace = r.trace;
        Ok(check_parameter_gradients(
            &params,
            |g, p| -> Result<NodeId> {
                let (graph, loss) = trace_surrogate(&ranker, p, &inst, &trace, &baseline, hops, direction)?;
                *g = graph;
                Ok(loss)
            },
            EPS,
            TOL,
            Some(4),
            rng,
        )?)
    })?;
    Ok(s.entries)
}

fn worse(a: GradCheckReport, b: GradCheckReport) -> GradCheckReport {
    if !a.passed || a.max_rel_error >= b.max_rel_error && b.passed {
        a
    } else {
        b
    }
}
