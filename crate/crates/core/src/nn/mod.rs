//! Trainable parameters and the layers built from them.

mod checkpoint;
mod layers;

pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use layers::{
    cross_entropy, Embedding, EncoderConfig, FeedForward, GruCell, GruEncoder, Linear,
    PROB_CLAMP,
};

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{GradCheckReport, Graph, NodeId, Tensor, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("token id {id} outside vocabulary of size {vocab}")]
    Vocabulary { id: usize, vocab: usize },
    #[error("parameter {0:?} defined twice")]
    DuplicateParameter(String),
    #[error("parameter sets differ: {0}")]
    ParameterMismatch(String),
    #[error("probability {value} at index {index} is outside [0, 1]")]
    InvalidDistribution { index: usize, value: f64 },
    #[error("cross entropy needs at least one label")]
    EmptyTargets,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

type Result<T> = std::result::Result<T, NnError>;

/// Handle to one tensor in a [`ParameterSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered collection of named trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(NnError::DuplicateParameter(name));
        }
        let id = self.tensors.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(value);
        Ok(ParamId(id))
    }

    /// Adds a tensor filled from uniform(-bound, bound).
    pub fn add_uniform(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        bound: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<ParamId> {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
        self.add(name, Tensor::new(shape.to_vec(), data)?)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    /// The graph node for `id`, created on first use.
    pub fn node(&self, g: &mut Graph, id: ParamId) -> NodeId {
        g.parameter(id.0, &self.tensors[id.0])
    }

    /// Overwrites every value with the one of the same name in `other`.
    /// Names, order and shapes must match exactly.
    pub fn assign_from(&mut self, other: &ParameterSet) -> Result<()> {
        if self.names != other.names {
            return Err(NnError::ParameterMismatch(format!(
                "expected {} tensors {:?}, found {} {:?}",
                self.names.len(),
                self.names.first(),
                other.names.len(),
                other.names.first()
            )));
        }
        for (i, (mine, theirs)) in self.tensors.iter().zip(&other.tensors).enumerate() {
            if mine.shape() != theirs.shape() {
                return Err(NnError::ParameterMismatch(format!(
                    "{}: shape {:?} vs {:?}",
                    self.names[i],
                    mine.shape(),
                    theirs.shape()
                )));
            }
        }
        self.tensors.clone_from(&other.tensors);
        Ok(())
    }

    /// `value -= lr * grad` for every parameter.
    pub fn sgd_step(&mut self, grads: &Gradients, lr: f64) {
        for (t, g) in self.tensors.iter_mut().zip(&grads.values) {
            for (v, d) in t.data_mut().iter_mut().zip(g) {
                *v -= lr * d;
            }
        }
    }
}

/// Dense gradient buffer aligned with a [`ParameterSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    values: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros(params: &ParameterSet) -> Self {
        Gradients {
            values: params.tensors.iter().map(|t| vec![0.0; t.numel()]).collect(),
        }
    }

    /// Adds `weight * grad` for every parameter the swept graph touched.
    pub fn accumulate(&mut self, g: &Graph, weight: f64) {
        for (key, grad) in g.parameter_grads() {
            for (acc, v) in self.values[key].iter_mut().zip(grad) {
                *acc += weight * v;
            }
        }
    }

    pub fn add(&mut self, other: &Gradients) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.values.iter_mut().flatten() {
            *v *= factor;
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.values.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Rescales so the global L2 norm is at most `max_norm`; returns the
    /// norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
        norm
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.values[id.0]
    }
}

/// Finite-difference check of `f` with respect to the parameters.
///
/// With `coords_per_tensor = Some(k)`, at most `k` coordinates per tensor are
/// probed, chosen by `rng`; otherwise every coordinate is.
pub fn check_parameter_gradients<F, E>(
    params: &ParameterSet,
    f: F,
    eps: f64,
    tol: f64,
    coords_per_tensor: Option<usize>,
    rng: &mut ChaCha8Rng,
) -> std::result::Result<GradCheckReport, E>
where
    F: Fn(&mut Graph, &ParameterSet) -> std::result::Result<NodeId, E>,
    E: From<TensorError>,
{
    let eval = |p: &ParameterSet| -> std::result::Result<f64, E> {
        let mut g = Graph::new();
        let out = f(&mut g, p)?;
        if g.value(out).numel() != 1 {
            return Err(TensorError::NonScalarLoss(g.shape(out).to_vec()).into());
        }
        Ok(g.value(out).item())
    };
    if eval(params)?.to_bits() != eval(params)?.to_bits() {
        return Err(TensorError::OracleInvalid.into());
    }

    let mut g = Graph::new();
    let out = f(&mut g, params)?;
    g.backward(out)?;
    let mut grads = Gradients::zeros(params);
    grads.accumulate(&g, 1.0);

    let mut probe = params.clone();
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for id in params.ids() {
        let n = params.get(id).numel();
        let coords: Vec<usize> = match coords_per_tensor {
            Some(k) if k < n => (0..k).map(|_| rng.gen_range(0..n)).collect(),
            _ => (0..n).collect(),
        };
        for c in coords {
            let orig = params.get(id).data()[c];
            probe.get_mut(id).data_mut()[c] = orig + eps;
            let plus = eval(&probe)?;
            probe.get_mut(id).data_mut()[c] = orig - eps;
            let minus = eval(&probe)?;
            probe.get_mut(id).data_mut()[c] = orig;
            analytic.push(grads.get(id)[c]);
            numeric.push((plus - minus) / (2.0 * eps));
        }
    }
    Ok(GradCheckReport::from_pairs(analytic, numeric, tol))
}
