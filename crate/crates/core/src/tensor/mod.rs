//! Define-by-run reverse-mode differentiation over small dense `f64` tensors.
//!
//! A [`Graph`] records every operation applied to the values it owns. Inputs
//! enter the graph as leaves, constants, or parameters (leaves keyed by an
//! external id so their gradients can be collected after [`Graph::backward`]).
//! Graphs are rebuilt for every forward pass; nothing is shared between them.
//!
//! Scalars are tensors of shape `[1]`. Most sequence operations work on
//! row-major matrices `[T x d]` where row `t` is time step `t`.

mod gradcheck;

pub use gradcheck::{grad_check, relative_error, GradCheckReport, RELATIVE_ERROR_FLOOR};

use std::collections::HashMap;
use std::fmt;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: index {index} out of range for extent {extent}")]
    Index {
        op: &'static str,
        index: usize,
        extent: usize,
    },
    #[error("degenerate distribution: every position is masked")]
    AllMasked,
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("backward already ran on this graph")]
    BackwardTwice,
    #[error("gradient oracle invalid: function output changed between identical evaluations")]
    OracleInvalid,
}

type Result<T> = std::result::Result<T, TensorError>;

/// Dense row-major array of `f64`.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::DataLength {
                shape,
                len: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(TensorError::Shape {
                    op: "from_rows",
                    lhs: vec![cols],
                    rhs: vec![row.len()],
                });
            }
            data.extend_from_slice(row);
        }
        Tensor::matrix(rows.len(), cols, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let cols = *self.shape.last().unwrap_or(&1);
        &self.data[r * cols..(r + 1) * cols]
    }

    fn rows_cols(&self) -> Option<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Some((*r, *c)),
            _ => None,
        }
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}{:?}", self.shape, self.data)
    }
}

/// Index of a node inside one [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Affine(NodeId, f64),
    Tanh(NodeId),
    Sigmoid(NodeId),
    LnClamped { x: NodeId, lo: f64, hi: f64 },
    Softmax(NodeId),
    LogSoftmax { x: NodeId, mask: Option<Vec<bool>> },
    SoftmaxRows(NodeId),
    Concat(Vec<NodeId>),
    MaxPool { x: NodeId, argmax: Vec<usize> },
    GatherRows { table: NodeId, ids: Vec<usize> },
    Row(NodeId, usize),
    SliceCols { x: NodeId, start: usize },
    StackRows(Vec<NodeId>),
    ReverseRows(NodeId),
    BroadcastRows(NodeId),
    Sum(NodeId),
    Reshape(NodeId),
    Pick(NodeId, usize),
    Normalize(NodeId),
    Custom { x: NodeId, derivative: fn(f64) -> f64 },
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// One forward computation and, after [`Graph::backward`], its gradients.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    params: HashMap<usize, NodeId>,
    backward_done: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Gradient of the loss w.r.t. `id`; `None` before backward or when the
    /// node does not influence the loss.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// A non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// A trainable leaf identified by `key`. Repeated calls with the same key
    /// return the same node.
    pub fn parameter(&mut self, key: usize, value: &Tensor) -> NodeId {
        if let Some(&id) = self.params.get(&key) {
            return id;
        }
        let id = self.leaf(value.clone());
        self.params.insert(key, id);
        id
    }

    /// Gradients of every parameter touched by this graph, ordered by key.
    pub fn parameter_grads(&self) -> Vec<(usize, &[f64])> {
        let mut out: Vec<(usize, &[f64])> = self
            .params
            .iter()
            .filter_map(|(&key, &id)| self.grad(id).map(|g| (key, g)))
            .collect();
        out.sort_by_key(|(key, _)| *key);
        out
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn derived(&mut self, value: Tensor, op: Op, inputs: &[NodeId]) -> NodeId {
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.push(value, op, requires_grad)
    }

    fn matrix_dims(&self, id: NodeId, op: &'static str) -> Result<(usize, usize)> {
        self.value(id).rows_cols().ok_or_else(|| TensorError::Shape {
            op,
            lhs: self.shape(id).to_vec(),
            rhs: vec![],
        })
    }

    fn same_shape(&self, a: NodeId, b: NodeId, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::Shape {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.matrix_dims(a, "matmul")?;
        let (k2, n) = self.matrix_dims(b, "matmul")?;
        if k != k2 {
            return Err(TensorError::Shape {
                op: "matmul",
                lhs: vec![m, k],
                rhs: vec![k2, n],
            });
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.derived(value, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let (m, n) = self.matrix_dims(a, "transpose")?;
        let out = transpose_raw(self.value(a).data(), m, n);
        let value = Tensor::new(vec![n, m], out)?;
        Ok(self.derived(value, Op::Transpose(a), &[a]))
    }

    fn zip_with(
        &mut self,
        a: NodeId,
        b: NodeId,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
        record: Op,
    ) -> Result<NodeId> {
        self.same_shape(a, b, op)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.derived(value, record, &[a, b]))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_with(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_with(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_with(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds vector `bias` (length = trailing extent of `a`) to every row of `a`.
    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let cols = *self.shape(a).last().unwrap_or(&0);
        if self.shape(bias) != [cols] {
            return Err(TensorError::Shape {
                op: "add_bias",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(bias).to_vec(),
            });
        }
        let b = self.value(bias).data().to_vec();
        let data = self
            .value(a)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + b[i % cols.max(1)])
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.derived(value, Op::AddBias(a, bias), &[a, bias]))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId> {
        self.affine(a, factor, 0.0)
    }

    /// `factor * a + offset`, elementwise.
    pub fn affine(&mut self, a: NodeId, factor: f64, offset: f64) -> Result<NodeId> {
        let data = self
            .value(a)
            .data()
            .iter()
            .map(|&x| factor * x + offset)
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.derived(value, Op::Affine(a, factor), &[a]))
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        let data = self.value(a).data().iter().map(|x| x.tanh()).collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.derived(value, Op::Tanh(a), &[a]))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        let data = self.value(a).data().iter().map(|&x| sigmoid(x)).collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.derived(value, Op::Sigmoid(a), &[a]))
    }

    /// `ln(clamp(a, lo, hi))`; the gradient is zero where the clamp is active.
    pub fn ln_clamped(&mut self, a: NodeId, lo: f64, hi: f64) -> Result<NodeId> {
        let data = self
            .value(a)
            .data()
            .iter()
            .map(|&x| x.clamp(lo, hi).ln())
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.derived(value, Op::LnClamped { x: a, lo, hi }, &[a]))
    }

    /// Softmax over a vector. Masked (`false`) positions come out exactly 0.
    pub fn softmax(&mut self, x: NodeId, mask: Option<&[bool]>) -> Result<NodeId> {
        let n = self.vector_len(x, "softmax")?;
        check_mask(mask, n)?;
        let out = softmax_raw(self.value(x).data(), mask)?;
        let value = Tensor::new(vec![n], out)?;
        Ok(self.derived(value, Op::Softmax(x), &[x]))
    }

    /// Log-softmax over a vector. Masked positions are `-inf` and receive no
    /// gradient.
    pub fn log_softmax(&mut self, x: NodeId, mask: Option<&[bool]>) -> Result<NodeId> {
        let n = self.vector_len(x, "log_softmax")?;
        check_mask(mask, n)?;
        let xs = self.value(x).data();
        let open = |i: usize| mask.map_or(true, |m| m[i]);
        let max = (0..n)
            .filter(|&i| open(i))
            .map(|i| xs[i])
            .fold(f64::NEG_INFINITY, f64::max);
        let lse = max
            + (0..n)
                .filter(|&i| open(i))
                .map(|i| (xs[i] - max).exp())
                .sum::<f64>()
                .ln();
        let out = (0..n)
            .map(|i| if open(i) { xs[i] - lse } else { f64::NEG_INFINITY })
            .collect();
        let value = Tensor::new(vec![n], out)?;
        let op = Op::LogSoftmax {
            x,
            mask: mask.map(<[bool]>::to_vec),
        };
        Ok(self.derived(value, op, &[x]))
    }

    /// Softmax applied independently to every row of a matrix.
    pub fn softmax_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let (r, c) = self.matrix_dims(x, "softmax_rows")?;
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(r * c);
        for row in 0..r {
            out.extend(softmax_raw(&src[row * c..(row + 1) * c], None)?);
        }
        let value = Tensor::new(vec![r, c], out)?;
        Ok(self.derived(value, Op::SoftmaxRows(x), &[x]))
    }

    /// Concatenation along the last axis. Parts must agree on every other axis.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = *parts.first().ok_or(TensorError::Shape {
            op: "concat",
            lhs: vec![],
            rhs: vec![],
        })?;
        let lead: Vec<usize> = {
            let s = self.shape(first);
            s[..s.len() - 1].to_vec()
        };
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != lead.len() + 1 || s[..s.len() - 1] != lead[..] {
                return Err(TensorError::Shape {
                    op: "concat",
                    lhs: self.shape(first).to_vec(),
                    rhs: s.to_vec(),
                });
            }
            widths.push(s[s.len() - 1]);
        }
        let rows: usize = lead.iter().product();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let value = Tensor::new(shape, out)?;
        Ok(self.derived(value, Op::Concat(parts.to_vec()), parts))
    }

    /// Column-wise max over time of `[T x d]`, giving `[d]`. Ties go to the
    /// lowest time index, which is also where the gradient is routed.
    pub fn max_pool_over_time(&mut self, x: NodeId) -> Result<NodeId> {
        let (t, d) = self.matrix_dims(x, "max_pool_over_time")?;
        if t == 0 {
            return Err(TensorError::Shape {
                op: "max_pool_over_time",
                lhs: vec![t, d],
                rhs: vec![],
            });
        }
        let src = self.value(x).data();
        let mut out = src[..d].to_vec();
        let mut argmax = vec![0usize; d];
        for step in 1..t {
            for c in 0..d {
                let v = src[step * d + c];
                if v > out[c] {
                    out[c] = v;
                    argmax[c] = step;
                }
            }
        }
        let value = Tensor::new(vec![d], out)?;
        Ok(self.derived(value, Op::MaxPool { x, argmax }, &[x]))
    }

    /// Rows `ids` of a `[V x d]` table, giving `[ids.len() x d]`.
    pub fn gather_rows(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let (v, d) = self.matrix_dims(table, "gather_rows")?;
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(TensorError::Index {
                    op: "gather_rows",
                    index: id,
                    extent: v,
                });
            }
            out.extend_from_slice(&src[id * d..(id + 1) * d]);
        }
        let value = Tensor::new(vec![ids.len(), d], out)?;
        let op = Op::GatherRows {
            table,
            ids: ids.to_vec(),
        };
        Ok(self.derived(value, op, &[table]))
    }

    /// Row `r` of a matrix as a `[1 x d]` matrix.
    pub fn row(&mut self, x: NodeId, r: usize) -> Result<NodeId> {
        let (t, d) = self.matrix_dims(x, "row")?;
        if r >= t {
            return Err(TensorError::Index {
                op: "row",
                index: r,
                extent: t,
            });
        }
        let data = self.value(x).data()[r * d..(r + 1) * d].to_vec();
        let value = Tensor::new(vec![1, d], data)?;
        Ok(self.derived(value, Op::Row(x, r), &[x]))
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (r, c) = self.matrix_dims(x, "slice_cols")?;
        if start + len > c {
            return Err(TensorError::Index {
                op: "slice_cols",
                index: start + len,
                extent: c,
            });
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(r * len);
        for row in 0..r {
            out.extend_from_slice(&src[row * c + start..row * c + start + len]);
        }
        let value = Tensor::new(vec![r, len], out)?;
        Ok(self.derived(value, Op::SliceCols { x, start }, &[x]))
    }

    /// Stacks `[1 x d]` (or `[d]`) parts into a `[parts.len() x d]` matrix.
    pub fn stack_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let Some(&first) = parts.first() else {
            return Err(TensorError::Shape {
                op: "stack_rows",
                lhs: vec![],
                rhs: vec![],
            });
        };
        let d = self.value(first).numel();
        let mut out = Vec::with_capacity(parts.len() * d);
        for &p in parts {
            let s = self.shape(p);
            let ok = s == [d] || s == [1, d];
            if !ok {
                return Err(TensorError::Shape {
                    op: "stack_rows",
                    lhs: vec![1, d],
                    rhs: s.to_vec(),
                });
            }
            out.extend_from_slice(self.value(p).data());
        }
        let value = Tensor::new(vec![parts.len(), d], out)?;
        Ok(self.derived(value, Op::StackRows(parts.to_vec()), parts))
    }

    /// Reverses the time (row) order of a matrix.
    pub fn reverse_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let (t, d) = self.matrix_dims(x, "reverse_rows")?;
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(t * d);
        for r in (0..t).rev() {
            out.extend_from_slice(&src[r * d..(r + 1) * d]);
        }
        let value = Tensor::new(vec![t, d], out)?;
        Ok(self.derived(value, Op::ReverseRows(x), &[x]))
    }

    /// Repeats a `[d]` or `[1 x d]` vector as `rows` identical rows.
    pub fn broadcast_rows(&mut self, x: NodeId, rows: usize) -> Result<NodeId> {
        let s = self.shape(x).to_vec();
        let d = match s.as_slice() {
            [d] | [1, d] => *d,
            _ => {
                return Err(TensorError::Shape {
                    op: "broadcast_rows",
                    lhs: s,
                    rhs: vec![rows],
                })
            }
        };
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(rows * d);
        for _ in 0..rows {
            out.extend_from_slice(src);
        }
        let value = Tensor::new(vec![rows, d], out)?;
        Ok(self.derived(value, Op::BroadcastRows(x), &[x]))
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let s: f64 = self.value(x).data().iter().sum();
        Ok(self.derived(Tensor::scalar(s), Op::Sum(x), &[x]))
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        let n = self.value(x).numel();
        if n == 0 {
            return Err(TensorError::Shape {
                op: "mean",
                lhs: self.shape(x).to_vec(),
                rhs: vec![],
            });
        }
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n as f64)
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let value = Tensor::new(shape.to_vec(), self.value(x).data().to_vec()).map_err(|_| {
            TensorError::Shape {
                op: "reshape",
                lhs: self.shape(x).to_vec(),
                rhs: shape.to_vec(),
            }
        })?;
        Ok(self.derived(value, Op::Reshape(x), &[x]))
    }

    /// Element `i` of the flattened tensor, as a scalar.
    pub fn pick(&mut self, x: NodeId, i: usize) -> Result<NodeId> {
        let n = self.value(x).numel();
        if i >= n {
            return Err(TensorError::Index {
                op: "pick",
                index: i,
                extent: n,
            });
        }
        let v = self.value(x).data()[i];
        Ok(self.derived(Tensor::scalar(v), Op::Pick(x, i), &[x]))
    }

    /// `x / sum(x)` for a non-negative vector with positive sum.
    pub fn normalize(&mut self, x: NodeId) -> Result<NodeId> {
        let s: f64 = self.value(x).data().iter().sum();
        if s <= 0.0 {
            return Err(TensorError::AllMasked);
        }
        let data = self.value(x).data().iter().map(|v| v / s).collect();
        let value = Tensor::new(self.shape(x).to_vec(), data)?;
        Ok(self.derived(value, Op::Normalize(x), &[x]))
    }

    /// Elementwise `forward(x)` whose gradient is `derivative(x)`. Nothing
    /// checks that the two agree; `grad_check` will.
    pub fn map_custom(
        &mut self,
        x: NodeId,
        forward: fn(f64) -> f64,
        derivative: fn(f64) -> f64,
    ) -> Result<NodeId> {
        let data = self.value(x).data().iter().map(|&v| forward(v)).collect();
        let value = Tensor::new(self.shape(x).to_vec(), data)?;
        Ok(self.derived(value, Op::Custom { x, derivative }, &[x]))
    }

    fn vector_len(&self, x: NodeId, op: &'static str) -> Result<usize> {
        match self.shape(x) {
            [n] => Ok(*n),
            s => Err(TensorError::Shape {
                op,
                lhs: s.to_vec(),
                rhs: vec![],
            }),
        }
    }

    /// Reverse sweep from a scalar `loss`. Fills gradients for every node
    /// that requires one and feeds into `loss`. A graph can be swept once.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.backward_done {
            return Err(TensorError::BackwardTwice);
        }
        if self.value(loss).numel() != 1 {
            return Err(TensorError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].requires_grad {
                self.propagate(i, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        for (i, g) in grads.iter_mut().enumerate() {
            if !self.nodes[i].requires_grad {
                *g = None;
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).rows_cols().unwrap();
                let n = self.value(*b).rows_cols().unwrap().1;
                if self.requires_grad(*a) {
                    let bt = transpose_raw(self.value(*b).data(), k, n);
                    let ga = matmul_raw(g, &bt, m, n, k);
                    accumulate(grads, *a, &ga);
                }
                if self.requires_grad(*b) {
                    let at = transpose_raw(self.value(*a).data(), m, k);
                    let gb = matmul_raw(&at, g, k, m, n);
                    accumulate(grads, *b, &gb);
                }
            }
            Op::Transpose(a) => {
                let (m, n) = self.value(*a).rows_cols().unwrap();
                accumulate(grads, *a, &transpose_raw(g, n, m));
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g);
                accumulate(grads, *b, g);
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g);
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                accumulate(grads, *b, &neg);
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                if self.requires_grad(*a) {
                    let ga: Vec<f64> = g.iter().zip(bv).map(|(x, y)| x * y).collect();
                    accumulate(grads, *a, &ga);
                }
                if self.requires_grad(*b) {
                    let gb: Vec<f64> = g.iter().zip(av).map(|(x, y)| x * y).collect();
                    accumulate(grads, *b, &gb);
                }
            }
            Op::AddBias(a, bias) => {
                accumulate(grads, *a, g);
                if self.requires_grad(*bias) {
                    let cols = self.value(*bias).numel();
                    let mut gb = vec![0.0; cols];
                    for (j, v) in g.iter().enumerate() {
                        gb[j % cols] += v;
                    }
                    accumulate(grads, *bias, &gb);
                }
            }
            Op::Affine(a, factor) => {
                let ga: Vec<f64> = g.iter().map(|v| v * factor).collect();
                accumulate(grads, *a, &ga);
            }
            Op::Tanh(a) => {
                let ga: Vec<f64> = g.iter().zip(out).map(|(v, y)| v * (1.0 - y * y)).collect();
                accumulate(grads, *a, &ga);
            }
            Op::Sigmoid(a) => {
                let ga: Vec<f64> = g.iter().zip(out).map(|(v, y)| v * y * (1.0 - y)).collect();
                accumulate(grads, *a, &ga);
            }
            Op::LnClamped { x, lo, hi } => {
                let xv = self.value(*x).data();
                let ga: Vec<f64> = g
                    .iter()
                    .zip(xv)
                    .map(|(v, &x)| if x < *lo || x > *hi { 0.0 } else { v / x })
                    .collect();
                accumulate(grads, *x, &ga);
            }
            Op::Softmax(x) => {
                accumulate(grads, *x, &softmax_backward(out, g));
            }
            Op::LogSoftmax { x, mask } => {
                let open = |j: usize| mask.as_ref().map_or(true, |m| m[j]);
                let total: f64 = (0..g.len()).filter(|&j| open(j)).map(|j| g[j]).sum();
                let ga: Vec<f64> = (0..g.len())
                    .map(|j| {
                        if open(j) {
                            g[j] - out[j].exp() * total
                        } else {
                            0.0
                        }
                    })
                    .collect();
                accumulate(grads, *x, &ga);
            }
            Op::SoftmaxRows(x) => {
                let (r, c) = self.value(*x).rows_cols().unwrap();
                let mut ga = Vec::with_capacity(r * c);
                for row in 0..r {
                    let span = row * c..(row + 1) * c;
                    ga.extend(softmax_backward(&out[span.clone()], &g[span]));
                }
                accumulate(grads, *x, &ga);
            }
            Op::Concat(parts) => {
                let total = *node.value.shape().last().unwrap();
                let rows = out.len() / total.max(1);
                let mut offset = 0;
                for &p in parts {
                    let w = *self.shape(p).last().unwrap();
                    if self.requires_grad(p) {
                        let mut gp = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            gp.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                        }
                        accumulate(grads, p, &gp);
                    }
                    offset += w;
                }
            }
            Op::MaxPool { x, argmax } => {
                let d = argmax.len();
                let mut ga = vec![0.0; self.value(*x).numel()];
                for (c, &t) in argmax.iter().enumerate() {
                    ga[t * d + c] += g[c];
                }
                accumulate(grads, *x, &ga);
            }
            Op::GatherRows { table, ids } => {
                let d = self.value(*table).rows_cols().unwrap().1;
                let mut ga = vec![0.0; self.value(*table).numel()];
                for (t, &id) in ids.iter().enumerate() {
                    for c in 0..d {
                        ga[id * d + c] += g[t * d + c];
                    }
                }
                accumulate(grads, *table, &ga);
            }
            Op::Row(x, r) => {
                let d = g.len();
                let mut ga = vec![0.0; self.value(*x).numel()];
                ga[r * d..(r + 1) * d].copy_from_slice(g);
                accumulate(grads, *x, &ga);
            }
            Op::SliceCols { x, start } => {
                let (r, c) = self.value(*x).rows_cols().unwrap();
                let len = node.value.shape()[1];
                let mut ga = vec![0.0; r * c];
                for row in 0..r {
                    ga[row * c + start..row * c + start + len]
                        .copy_from_slice(&g[row * len..(row + 1) * len]);
                }
                accumulate(grads, *x, &ga);
            }
            Op::StackRows(parts) => {
                let d = node.value.shape()[1];
                for (t, &p) in parts.iter().enumerate() {
                    if self.requires_grad(p) {
                        accumulate(grads, p, &g[t * d..(t + 1) * d]);
                    }
                }
            }
            Op::ReverseRows(x) => {
                let (t, d) = self.value(*x).rows_cols().unwrap();
                let mut ga = Vec::with_capacity(t * d);
                for r in (0..t).rev() {
                    ga.extend_from_slice(&g[r * d..(r + 1) * d]);
                }
                accumulate(grads, *x, &ga);
            }
            Op::BroadcastRows(x) => {
                let d = self.value(*x).numel();
                let mut ga = vec![0.0; d];
                for (j, v) in g.iter().enumerate() {
                    ga[j % d] += v;
                }
                accumulate(grads, *x, &ga);
            }
            Op::Sum(x) => {
                let ga = vec![g[0]; self.value(*x).numel()];
                accumulate(grads, *x, &ga);
            }
            Op::Reshape(x) => accumulate(grads, *x, g),
            Op::Pick(x, i) => {
                let mut ga = vec![0.0; self.value(*x).numel()];
                ga[*i] = g[0];
                accumulate(grads, *x, &ga);
            }
            Op::Normalize(x) => {
                let s: f64 = self.value(*x).data().iter().sum();
                let dot: f64 = g.iter().zip(out).map(|(a, b)| a * b).sum();
                let ga: Vec<f64> = g.iter().map(|v| (v - dot) / s).collect();
                accumulate(grads, *x, &ga);
            }
            Op::Custom { x, derivative } => {
                let xv = self.value(*x).data();
                let ga: Vec<f64> = g.iter().zip(xv).map(|(v, &x)| v * derivative(x)).collect();
                accumulate(grads, *x, &ga);
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], id: NodeId, g: &[f64]) {
    match &mut grads[id.0] {
        Some(acc) => {
            for (a, v) in acc.iter_mut().zip(g) {
                *a += v;
            }
        }
        slot @ None => *slot = Some(g.to_vec()),
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_mask(mask: Option<&[bool]>, n: usize) -> Result<()> {
    if let Some(m) = mask {
        if m.len() != n {
            return Err(TensorError::Shape {
                op: "mask",
                lhs: vec![n],
                rhs: vec![m.len()],
            });
        }
    }
    Ok(())
}

/// Max-subtracted softmax; masked positions are exactly zero.
pub(crate) fn softmax_raw(xs: &[f64], mask: Option<&[bool]>) -> Result<Vec<f64>> {
    let open = |i: usize| mask.map_or(true, |m| m[i]);
    let max = (0..xs.len())
        .filter(|&i| open(i))
        .map(|i| xs[i])
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(TensorError::AllMasked);
    }
    let mut out: Vec<f64> = (0..xs.len())
        .map(|i| if open(i) { (xs[i] - max).exp() } else { 0.0 })
        .collect();
    let z: f64 = out.iter().sum();
    for v in &mut out {
        *v /= z;
    }
    Ok(out)
}

fn softmax_backward(y: &[f64], g: &[f64]) -> Vec<f64> {
    let dot: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
    y.iter().zip(g).map(|(yi, gi)| yi * (gi - dot)).collect()
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}
