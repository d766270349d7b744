//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Graph`] is an append-only arena of nodes. Forward methods append one
//! node each and return a [`NodeId`] handle; [`Graph::backward`] seeds the
//! loss node with gradient one and sweeps the arena in reverse creation
//! order, accumulating gradients into every node on a path from a parameter
//! to the loss. Creation order is topological by construction because an op
//! can only reference ids that already exist.
//!
//! Each graph supports exactly one backward pass. Training code builds a
//! fresh graph per step, feeds the current parameter values in with
//! [`Graph::param`], and reads gradients back out after [`Graph::backward`].

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::{self, Tensor};

/// Handle to a node in a [`Graph`]. Only valid for the graph that created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// Axis selector for softmax.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Normalize within each row.
    Rows,
    /// Normalize within each column.
    Cols,
}

/// How the right operand of an elementwise op maps onto the left operand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bcast {
    /// Shapes are identical.
    Same,
    /// Right is `1x1`, applied to every element.
    Scalar,
    /// Right is `1 x c`, repeated down the rows.
    Row,
    /// Right is `n x 1`, repeated across the columns.
    Col,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId, Bcast),
    Sub(NodeId, NodeId, Bcast),
    Mul(NodeId, NodeId, Bcast),
    Div(NodeId, NodeId, Bcast),
    Scale(NodeId, f64),
    Relu(NodeId),
    Gelu(NodeId),
    Exp(NodeId),
    Log(NodeId),
    L2NormalizeRows(NodeId),
    Softmax(NodeId, Axis),
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
    },
    MeanRows(NodeId),
    MeanAll(NodeId),
    GatherCols(NodeId, Vec<usize>),
    LogSumExpRows(NodeId),
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    SliceCols {
        src: NodeId,
        start: usize,
        len: usize,
    },
}

struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    requires_grad: bool,
    op: Op,
}

/// Arena of tensors connected by differentiable ops.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    backward_done: bool,
}

const GELU_CUBIC: f64 = 0.044715;

fn gelu_scale() -> f64 {
    // sqrt(2 / pi)
    math::sqrt(2.0 / core::f64::consts::PI)
}

fn gelu_value(x: f64) -> f64 {
    let u = gelu_scale() * (x + GELU_CUBIC * x * x * x);
    0.5 * x * (1.0 + math::tanh(u))
}

fn gelu_derivative(x: f64) -> f64 {
    let c = gelu_scale();
    let u = c * (x + GELU_CUBIC * x * x * x);
    let t = math::tanh(u);
    let du = c * (1.0 + 3.0 * GELU_CUBIC * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    /// Number of nodes in the arena.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds a leaf that does not receive a gradient.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// Adds a leaf that receives a gradient during [`Graph::backward`].
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// Forward value of a node.
    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient accumulated into a node, if backward has run and the node
    /// lies on a path from a parameter to the loss.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes[id.0].grad.as_ref()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn requires(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = tensor::matmul(self.value(a), self.value(b))?;
        let req = self.requires(&[a, b]);
        Ok(self.push(value, Op::Matmul(a, b), req))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.value(a).transposed();
        let req = self.requires(&[a]);
        Ok(self.push(value, Op::Transpose(a), req))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul)
    }

    /// Elementwise division. The divisor must be free of zeros.
    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.value(b).data().contains(&0.0) {
            return Err(Error::numeric("division by zero"));
        }
        self.binary(a, b, "div", |x, y| x / y, Op::Div)
    }

    fn binary(
        &mut self,
        a: NodeId,
        b: NodeId,
        name: &str,
        f: impl Fn(f64, f64) -> f64,
        make: impl Fn(NodeId, NodeId, Bcast) -> Op,
    ) -> Result<NodeId> {
        let kind = bcast_kind(self.value(a).shape(), self.value(b).shape(), name)?;
        let (av, bv) = (self.value(a), self.value(b));
        let (rows, cols) = av.shape();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(av.get(r, c), bcast_get(bv, r, c, kind)));
            }
        }
        let value = Tensor::from_vec(rows, cols, data)?;
        let req = self.requires(&[a, b]);
        Ok(self.push(value, make(a, b, kind), req))
    }

    /// Multiplies every element by a constant.
    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId> {
        if !factor.is_finite() {
            return Err(Error::numeric(format!("scale factor is not finite: {factor}")));
        }
        let value = self.map_values(a, |x| factor * x);
        let req = self.requires(&[a]);
        Ok(self.push(value, Op::Scale(a, factor), req))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.map_values(a, |x| if x > 0.0 { x } else { 0.0 });
        let req = self.requires(&[a]);
        Ok(self.push(value, Op::Relu(a), req))
    }

    /// GELU with the tanh approximation.
    pub fn gelu(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.map_values(a, gelu_value);
        let req = self.requires(&[a]);
        Ok(self.push(value, Op::Gelu(a), req))
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.map_values(a, math::exp);
        let req = self.requires(&[a]);
        Ok(self.push(value, Op::Exp(a), req))
    }

    /// Natural log. Every element must be strictly positive.
    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        if let Some(bad) = self.value(a).data().iter().find(|v| **v <= 0.0) {
            return Err(Error::numeric(format!("log of non-positive value {bad}")));
        }
        let value = self.map_values(a, math::ln);
        let req = self.requires(&[a]);
        Ok(self.push(value, Op::Log(a), req))
    }

    /// Scales each row to unit Euclidean norm. Zero rows are rejected.
    pub fn l2_normalize_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let av = self.value(a);
        let mut out = av.clone();
        for r in 0..av.rows() {
            let norm = math::sqrt(tensor::dot(av.row(r), av.row(r)));
            if norm == 0.0 {
                return Err(Error::numeric(format!("cannot normalize zero row {r}")));
            }
            for v in out.row_mut(r) {
                *v /= norm;
            }
        }
        let req = self.requires(&[a]);
        Ok(self.push(out, Op::L2NormalizeRows(a), req))
    }

    /// Softmax along the chosen axis, stabilized by max subtraction.
    pub fn softmax(&mut self, a: NodeId, axis: Axis) -> Result<NodeId> {
        let av = self.value(a);
        if !av.is_finite() {
            return Err(Error::numeric("softmax input must be finite"));
        }
        let value = match axis {
            Axis::Rows => softmax_rows(av),
            Axis::Cols => softmax_rows(&av.transposed()).transposed(),
        };
        let req = self.requires(&[a]);
        Ok(self.push(value, Op::Softmax(a, axis), req))
    }

    /// Per-row normalization to zero mean and unit variance (population
    /// variance plus `eps`), then an affine map with `gamma` and `beta`,
    /// both `1 x d`.
    pub fn layer_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
    ) -> Result<NodeId> {
        if !(eps.is_finite() && eps > 0.0) {
            return Err(Error::config(format!("layer_norm eps must be positive, got {eps}")));
        }
        let xv = self.value(x);
        let d = xv.cols();
        for (name, id) in [("gamma", gamma), ("beta", beta)] {
            let t = self.value(id);
            if t.shape() != (1, d) {
                return Err(Error::dimension(format!(
                    "layer_norm {name} must be 1x{d}, got {}x{}",
                    t.rows(),
                    t.cols()
                )));
            }
        }
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let mut out = Tensor::zeros(xv.rows(), d);
        for r in 0..xv.rows() {
            let row = xv.row(r);
            let (mean, var) = mean_and_var(row);
            let inv = 1.0 / math::sqrt(var + eps);
            let orow = out.row_mut(r);
            for c in 0..d {
                let xhat = (row[c] - mean) * inv;
                orow[c] = gv.get(0, c) * xhat + bv.get(0, c);
            }
        }
        let req = self.requires(&[x, gamma, beta]);
        Ok(self.push(out, Op::LayerNorm { x, gamma, beta, eps }, req))
    }

    /// Column means: `n x d` to `1 x d`.
    pub fn mean_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let av = self.value(a);
        let (rows, cols) = av.shape();
        let mut out = Tensor::zeros(1, cols);
        for r in 0..rows {
            let row = av.row(r);
            let orow = out.row_mut(0);
            for c in 0..cols {
                orow[c] += row[c];
            }
        }
        for v in out.data_mut() {
            *v /= rows as f64;
        }
        let req = self.requires(&[a]);
        Ok(self.push(out, Op::MeanRows(a), req))
    }

    /// Mean of all elements: any shape to `1x1`.
    pub fn mean_all(&mut self, a: NodeId) -> Result<NodeId> {
        let av = self.value(a);
        let mean = av.data().iter().sum::<f64>() / av.numel() as f64;
        let req = self.requires(&[a]);
        Ok(self.push(Tensor::scalar(mean), Op::MeanAll(a), req))
    }

    /// Picks one column per row: `out[r, 0] = a[r, indices[r]]`.
    pub fn gather_cols(&mut self, a: NodeId, indices: &[usize]) -> Result<NodeId> {
        let av = self.value(a);
        if indices.len() != av.rows() {
            return Err(Error::dimension(format!(
                "gather_cols needs one index per row: {} indices for {} rows",
                indices.len(),
                av.rows()
            )));
        }
        if let Some(bad) = indices.iter().find(|i| **i >= av.cols()) {
            return Err(Error::dimension(format!(
                "gather_cols index {bad} out of range for {} columns",
                av.cols()
            )));
        }
        let mut out = Tensor::zeros(av.rows(), 1);
        for (r, &i) in indices.iter().enumerate() {
            out.set(r, 0, av.get(r, i));
        }
        let req = self.requires(&[a]);
        Ok(self.push(out, Op::GatherCols(a, indices.to_vec()), req))
    }

    /// Main diagonal of a square matrix as an `n x 1` column.
    pub fn diag(&mut self, a: NodeId) -> Result<NodeId> {
        let av = self.value(a);
        if av.rows() != av.cols() {
            return Err(Error::dimension(format!(
                "diag needs a square matrix, got {}x{}",
                av.rows(),
                av.cols()
            )));
        }
        let indices: Vec<usize> = (0..av.rows()).collect();
        self.gather_cols(a, &indices)
    }

    /// Row-wise log-sum-exp, stabilized by max subtraction: `n x c` to `n x 1`.
    pub fn logsumexp_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let av = self.value(a);
        if !av.is_finite() {
            return Err(Error::numeric("logsumexp input must be finite"));
        }
        let mut out = Tensor::zeros(av.rows(), 1);
        for r in 0..av.rows() {
            out.set(r, 0, logsumexp(av.row(r)));
        }
        let req = self.requires(&[a]);
        Ok(self.push(out, Op::LogSumExpRows(a), req))
    }

    /// Stacks parts vertically; every part must have the same column count.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::dimension("concat_rows needs at least one part"));
        }
        let cols = self.value(parts[0]).cols();
        let mut rows = 0;
        for (i, p) in parts.iter().enumerate() {
            let t = self.value(*p);
            if t.cols() != cols {
                return Err(Error::dimension(format!(
                    "concat_rows part {i} has {} columns but part 0 has {cols}",
                    t.cols()
                )));
            }
            rows += t.rows();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for p in parts {
            data.extend_from_slice(self.value(*p).data());
        }
        let value = Tensor::from_vec(rows, cols, data)?;
        let req = self.requires(parts);
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), req))
    }

    /// Stacks parts horizontally; every part must have the same row count.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::dimension("concat_cols needs at least one part"));
        }
        let rows = self.value(parts[0]).rows();
        let mut cols = 0;
        for (i, p) in parts.iter().enumerate() {
            let t = self.value(*p);
            if t.rows() != rows {
                return Err(Error::dimension(format!(
                    "concat_cols part {i} has {} rows but part 0 has {rows}",
                    t.rows()
                )));
            }
            cols += t.cols();
        }
        let mut out = Tensor::zeros(rows, cols);
        let mut offset = 0;
        for p in parts {
            let t = self.value(*p);
            for r in 0..rows {
                let src = t.row(r);
                out.row_mut(r)[offset..offset + t.cols()].copy_from_slice(src);
            }
            offset += t.cols();
        }
        let req = self.requires(parts);
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), req))
    }

    /// Contiguous column range `[start, start + len)`.
    pub fn slice_cols(&mut self, src: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let sv = self.value(src);
        if len == 0 || start + len > sv.cols() {
            return Err(Error::dimension(format!(
                "slice_cols range {start}..{} out of bounds for {} columns",
                start + len,
                sv.cols()
            )));
        }
        let mut out = Tensor::zeros(sv.rows(), len);
        for r in 0..sv.rows() {
            out.row_mut(r).copy_from_slice(&sv.row(r)[start..start + len]);
        }
        let req = self.requires(&[src]);
        Ok(self.push(out, Op::SliceCols { src, start, len }, req))
    }

    fn map_values(&self, a: NodeId, f: impl Fn(f64) -> f64) -> Tensor {
        let av = self.value(a);
        let mut out = av.clone();
        for v in out.data_mut() {
            *v = f(*v);
        }
        out
    }

    /// Runs reverse-mode differentiation from a `1x1` finite loss. May be
    /// called once per graph; a second call is a state error.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.backward_done {
            return Err(Error::state("backward was already run on this graph"));
        }
        let lv = &self.nodes[loss.0].value;
        if !lv.is_scalar() {
            return Err(Error::dimension(format!(
                "backward needs a 1x1 loss, got {}x{}",
                lv.rows(),
                lv.cols()
            )));
        }
        let l = lv.data()[0];
        if !l.is_finite() {
            return Err(Error::numeric(format!("loss is not finite: {l}")));
        }
        self.backward_done = true;
        if !self.nodes[loss.0].requires_grad {
            // No parameter feeds the loss; every gradient stays absent.
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.nodes[i].grad.clone() else {
                continue;
            };
            let op = self.nodes[i].op.clone();
            self.backprop(&op, &g)?;
        }
        Ok(())
    }

    fn accumulate(&mut self, id: NodeId, delta: Tensor) {
        let node = &mut self.nodes[id.0];
        if !node.requires_grad {
            return;
        }
        debug_assert_eq!(node.value.shape(), delta.shape());
        match &mut node.grad {
            Some(g) => {
                for (gi, di) in g.data_mut().iter_mut().zip(delta.data()) {
                    *gi += di;
                }
            }
            None => node.grad = Some(delta),
        }
    }

    fn backprop(&mut self, op: &Op, g: &Tensor) -> Result<()> {
        match op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let da = tensor::matmul(g, &self.value(*b).transposed())?;
                let db = tensor::matmul(&self.value(*a).transposed(), g)?;
                self.accumulate(*a, da);
                self.accumulate(*b, db);
            }
            Op::Transpose(a) => {
                self.accumulate(*a, g.transposed());
            }
            Op::Add(a, b, kind) => {
                self.accumulate(*a, g.clone());
                let db = reduce_to(g, self.value(*b).shape(), *kind);
                self.accumulate(*b, db);
            }
            Op::Sub(a, b, kind) => {
                self.accumulate(*a, g.clone());
                let mut db = reduce_to(g, self.value(*b).shape(), *kind);
                for v in db.data_mut() {
                    *v = -*v;
                }
                self.accumulate(*b, db);
            }
            Op::Mul(a, b, kind) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let mut da = g.clone();
                for r in 0..da.rows() {
                    for c in 0..da.cols() {
                        let v = da.get(r, c) * bcast_get(bv, r, c, *kind);
                        da.set(r, c, v);
                    }
                }
                let mut full = g.clone();
                for r in 0..full.rows() {
                    for c in 0..full.cols() {
                        let v = full.get(r, c) * av.get(r, c);
                        full.set(r, c, v);
                    }
                }
                let db = reduce_to(&full, bv.shape(), *kind);
                self.accumulate(*a, da);
                self.accumulate(*b, db);
            }
            Op::Div(a, b, kind) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let mut da = g.clone();
                let mut full = g.clone();
                for r in 0..g.rows() {
                    for c in 0..g.cols() {
                        let bval = bcast_get(bv, r, c, *kind);
                        da.set(r, c, g.get(r, c) / bval);
                        full.set(r, c, -g.get(r, c) * av.get(r, c) / (bval * bval));
                    }
                }
                let db = reduce_to(&full, bv.shape(), *kind);
                self.accumulate(*a, da);
                self.accumulate(*b, db);
            }
            Op::Scale(a, factor) => {
                let mut da = g.clone();
                for v in da.data_mut() {
                    *v *= factor;
                }
                self.accumulate(*a, da);
            }
            Op::Relu(a) => {
                let av = self.value(*a);
                let mut da = g.clone();
                for r in 0..da.rows() {
                    for c in 0..da.cols() {
                        if av.get(r, c) <= 0.0 {
                            da.set(r, c, 0.0);
                        }
                    }
                }
                self.accumulate(*a, da);
            }
            Op::Gelu(a) => {
                let av = self.value(*a);
                let mut da = g.clone();
                for r in 0..da.rows() {
                    for c in 0..da.cols() {
                        let v = da.get(r, c) * gelu_derivative(av.get(r, c));
                        da.set(r, c, v);
                    }
                }
                self.accumulate(*a, da);
            }
            Op::Exp(a) => {
                // d exp(x) = exp(x) dx, and exp(x) is this node's value; the
                // arena does not hand us our own id, so recompute it.
                let av = self.value(*a);
                let mut da = g.clone();
                for r in 0..da.rows() {
                    for c in 0..da.cols() {
                        let v = da.get(r, c) * math::exp(av.get(r, c));
                        da.set(r, c, v);
                    }
                }
                self.accumulate(*a, da);
            }
            Op::Log(a) => {
                let av = self.value(*a);
                let mut da = g.clone();
                for r in 0..da.rows() {
                    for c in 0..da.cols() {
                        let v = da.get(r, c) / av.get(r, c);
                        da.set(r, c, v);
                    }
                }
                self.accumulate(*a, da);
            }
            Op::L2NormalizeRows(a) => {
                let av = self.value(*a);
                let mut da = Tensor::zeros(av.rows(), av.cols());
                for r in 0..av.rows() {
                    let x = av.row(r);
                    let norm = math::sqrt(tensor::dot(x, x));
                    let grow = g.row(r);
                    let ydotg = tensor::dot(x, grow) / norm;
                    let drow = da.row_mut(r);
                    for c in 0..x.len() {
                        let y = x[c] / norm;
                        drow[c] = (grow[c] - y * ydotg) / norm;
                    }
                }
                self.accumulate(*a, da);
            }
            Op::Softmax(a, axis) => {
                let av = self.value(*a);
                let da = match axis {
                    Axis::Rows => softmax_rows_backward(&softmax_rows(av), g),
                    Axis::Cols => {
                        let yt = softmax_rows(&av.transposed());
                        softmax_rows_backward(&yt, &g.transposed()).transposed()
                    }
                };
                self.accumulate(*a, da);
            }
            Op::LayerNorm { x, gamma, beta, eps } => {
                let (xv, gv) = (self.value(*x), self.value(*gamma));
                let d = xv.cols();
                let mut dx = Tensor::zeros(xv.rows(), d);
                let mut dgamma = Tensor::zeros(1, d);
                let mut dbeta = Tensor::zeros(1, d);
                for r in 0..xv.rows() {
                    let row = xv.row(r);
                    let grow = g.row(r);
                    let (mean, var) = mean_and_var(row);
                    let inv = 1.0 / math::sqrt(var + eps);
                    let mut dxhat = vec![0.0; d];
                    let mut xhat = vec![0.0; d];
                    for c in 0..d {
                        xhat[c] = (row[c] - mean) * inv;
                        dxhat[c] = grow[c] * gv.get(0, c);
                        dgamma.row_mut(0)[c] += grow[c] * xhat[c];
                        dbeta.row_mut(0)[c] += grow[c];
                    }
                    let m1 = dxhat.iter().sum::<f64>() / d as f64;
                    let m2 = dxhat
                        .iter()
                        .zip(xhat.iter())
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
                        / d as f64;
                    let drow = dx.row_mut(r);
                    for c in 0..d {
                        drow[c] = (dxhat[c] - m1 - xhat[c] * m2) * inv;
                    }
                }
                self.accumulate(*x, dx);
                self.accumulate(*gamma, dgamma);
                self.accumulate(*beta, dbeta);
            }
            Op::MeanRows(a) => {
                let av = self.value(*a);
                let n = av.rows() as f64;
                let mut da = Tensor::zeros(av.rows(), av.cols());
                for r in 0..av.rows() {
                    let drow = da.row_mut(r);
                    for (c, dv) in drow.iter_mut().enumerate() {
                        *dv = g.get(0, c) / n;
                    }
                }
                self.accumulate(*a, da);
            }
            Op::MeanAll(a) => {
                let av = self.value(*a);
                let share = g.data()[0] / av.numel() as f64;
                self.accumulate(*a, Tensor::filled(av.rows(), av.cols(), share));
            }
            Op::GatherCols(a, indices) => {
                let av = self.value(*a);
                let mut da = Tensor::zeros(av.rows(), av.cols());
                for (r, &i) in indices.iter().enumerate() {
                    da.set(r, i, g.get(r, 0));
                }
                self.accumulate(*a, da);
            }
            Op::LogSumExpRows(a) => {
                let av = self.value(*a);
                let soft = softmax_rows(av);
                let mut da = Tensor::zeros(av.rows(), av.cols());
                for r in 0..av.rows() {
                    let srow = soft.row(r);
                    let drow = da.row_mut(r);
                    for c in 0..av.cols() {
                        drow[c] = g.get(r, 0) * srow[c];
                    }
                }
                self.accumulate(*a, da);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts.clone() {
                    let (rows, cols) = self.value(p).shape();
                    let mut dp = Tensor::zeros(rows, cols);
                    for r in 0..rows {
                        dp.row_mut(r).copy_from_slice(g.row(offset + r));
                    }
                    offset += rows;
                    self.accumulate(p, dp);
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts.clone() {
                    let (rows, cols) = self.value(p).shape();
                    let mut dp = Tensor::zeros(rows, cols);
                    for r in 0..rows {
                        dp.row_mut(r)
                            .copy_from_slice(&g.row(r)[offset..offset + cols]);
                    }
                    offset += cols;
                    self.accumulate(p, dp);
                }
            }
            Op::SliceCols { src, start, len } => {
                let sv = self.value(*src);
                let mut da = Tensor::zeros(sv.rows(), sv.cols());
                for r in 0..sv.rows() {
                    da.row_mut(r)[*start..start + len].copy_from_slice(g.row(r));
                }
                self.accumulate(*src, da);
            }
        }
        Ok(())
    }
}

fn bcast_kind(l: (usize, usize), r: (usize, usize), name: &str) -> Result<Bcast> {
    if l == r {
        Ok(Bcast::Same)
    } else if r == (1, 1) {
        Ok(Bcast::Scalar)
    } else if r.0 == 1 && r.1 == l.1 {
        Ok(Bcast::Row)
    } else if r.1 == 1 && r.0 == l.0 {
        Ok(Bcast::Col)
    } else {
        Err(Error::dimension(format!(
            "{name} cannot broadcast {}x{} onto {}x{}",
            r.0, r.1, l.0, l.1
        )))
    }
}

#[inline]
fn bcast_get(t: &Tensor, r: usize, c: usize, kind: Bcast) -> f64 {
    match kind {
        Bcast::Same => t.get(r, c),
        Bcast::Scalar => t.get(0, 0),
        Bcast::Row => t.get(0, c),
        Bcast::Col => t.get(r, 0),
    }
}

/// Sums a full-shape gradient down to the broadcast operand's shape.
fn reduce_to(g: &Tensor, shape: (usize, usize), kind: Bcast) -> Tensor {
    match kind {
        Bcast::Same => g.clone(),
        Bcast::Scalar => Tensor::scalar(g.data().iter().sum()),
        Bcast::Row => {
            let mut out = Tensor::zeros(1, shape.1);
            for r in 0..g.rows() {
                let row = g.row(r);
                let orow = out.row_mut(0);
                for c in 0..g.cols() {
                    orow[c] += row[c];
                }
            }
            out
        }
        Bcast::Col => {
            let mut out = Tensor::zeros(shape.0, 1);
            for r in 0..g.rows() {
                out.set(r, 0, g.row(r).iter().sum());
            }
            out
        }
    }
}

fn mean_and_var(row: &[f64]) -> (f64, f64) {
    let d = row.len() as f64;
    let mean = row.iter().sum::<f64>() / d;
    let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d;
    (mean, var)
}

fn softmax_rows(t: &Tensor) -> Tensor {
    let mut out = t.clone();
    for r in 0..t.rows() {
        let row = out.row_mut(r);
        let max = row.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = math::exp(*v - max);
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

fn softmax_rows_backward(y: &Tensor, g: &Tensor) -> Tensor {
    let mut dx = Tensor::zeros(y.rows(), y.cols());
    for r in 0..y.rows() {
        let yrow = y.row(r);
        let grow = g.row(r);
        let dot = tensor::dot(yrow, grow);
        let drow = dx.row_mut(r);
        for c in 0..yrow.len() {
            drow[c] = yrow[c] * (grow[c] - dot);
        }
    }
    dx
}

fn logsumexp(row: &[f64]) -> f64 {
    let max = row.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
    let sum: f64 = row.iter().map(|v| math::exp(v - max)).sum();
    max + math::ln(sum)
}
