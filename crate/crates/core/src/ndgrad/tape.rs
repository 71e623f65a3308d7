//! Append-only computation tape and reverse sweep.

use std::collections::HashMap;

use super::tensor::{axis_extents, broadcast_index, broadcast_shape, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Primitive operations. Binary elementwise ops broadcast numpy-style.
#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Add,
    Sub,
    Mul,
    Div,
    /// `(m,k) @ (k,n)`.
    MatMul,
    /// `x @ w + b` with `x: (k,)|(m,k)`, `w: (k,n)`, `b: (n,)`.
    Affine,
    Relu,
    Tanh,
    Exp,
    Log,
    Softplus,
    Square,
    /// Softmax over the last axis.
    Softmax,
    /// Log-sum-exp over the last axis; the axis is dropped.
    LogSumExp,
    /// Sum over one axis (dropped) or over everything (scalar result).
    Sum { axis: Option<usize> },
    Mean { axis: Option<usize> },
    Concat { axis: usize },
    /// Half-open range `[start, end)` along `axis`.
    Slice { axis: usize, start: usize, end: usize },
    Reshape { shape: Vec<usize> },
    /// 2-D transpose.
    Transpose,
    Scale { factor: f64 },
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::MatMul => "matmul",
            Op::Affine => "affine",
            Op::Relu => "relu",
            Op::Tanh => "tanh",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Softplus => "softplus",
            Op::Square => "square",
            Op::Softmax => "softmax",
            Op::LogSumExp => "logsumexp",
            Op::Sum { .. } => "sum",
            Op::Mean { .. } => "mean",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Reshape { .. } => "reshape",
            Op::Transpose => "transpose",
            Op::Scale { .. } => "scale",
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Option<Op>,
    parents: Vec<NodeId>,
    requires_grad: bool,
}

#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    marks: HashMap<String, NodeId>,
}

/// Result of a reverse sweep: `d root / d node` for every node that is a
/// differentiable leaf, a mark, or lies between one of those and the root.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    marks: HashMap<String, NodeId>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn at_mark(&self, name: &str) -> Result<&Tensor> {
        let id = self
            .marks
            .get(name)
            .ok_or_else(|| Error::UnknownMark(name.to_string()))?;
        self.get(*id)
            .ok_or_else(|| Error::UnknownMark(name.to_string()))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf. `requires_grad` leaves receive gradients on backward.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        self.push(Node {
            value,
            op: None,
            parents: Vec::new(),
            requires_grad,
        })
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Names an intermediate so its gradient can be read after backward.
    pub fn mark(&mut self, name: &str, id: NodeId) {
        self.marks.insert(name.to_string(), id);
    }

    pub fn marked(&self, name: &str) -> Result<NodeId> {
        self.marks
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownMark(name.to_string()))
    }

    fn push(&mut self, node: Node) -> NodeId {
        self.nodes.push(node);
        NodeId(self.nodes.len() - 1)
    }

    /// Evaluates `op` on `inputs` and appends the result.
    pub fn record(&mut self, op: Op, inputs: &[NodeId]) -> Result<NodeId> {
        for id in inputs {
            if id.0 >= self.nodes.len() {
                return Err(Error::Invalid(format!("{}: unknown node {}", op.name(), id.0)));
            }
        }
        let values: Vec<&Tensor> = inputs.iter().map(|id| &self.nodes[id.0].value).collect();
        let value = forward(&op, &values)?;
        if !value.is_finite() {
            return Err(Error::NonFinite(format!(
                "{} on inputs of shape {:?}",
                op.name(),
                values.iter().map(|v| v.shape().to_vec()).collect::<Vec<_>>()
            )));
        }
        let requires_grad = inputs.iter().any(|id| self.nodes[id.0].requires_grad);
        Ok(self.push(Node {
            value,
            op: Some(op),
            parents: inputs.to_vec(),
            requires_grad,
        }))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::Add, &[a, b])
    }
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::Sub, &[a, b])
    }
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::Mul, &[a, b])
    }
    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::Div, &[a, b])
    }
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::MatMul, &[a, b])
    }
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::Affine, &[x, w, b])
    }
    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.record(Op::Relu, &[x])
    }
    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        self.record(Op::Tanh, &[x])
    }
    pub fn exp(&mut self, x: NodeId) -> Result<NodeId> {
        self.record(Op::Exp, &[x])
    }
    pub fn log(&mut self, x: NodeId) -> Result<NodeId> {
        self.record(Op::Log, &[x])
    }
    pub fn softplus(&mut self, x: NodeId) -> Result<NodeId> {
        self.record(Op::Softplus, &[x])
    }
    pub fn square(&mut self, x: NodeId) -> Result<NodeId> {
        self.record(Op::Square, &[x])
    }
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        self.record(Op::Softmax, &[x])
    }
    pub fn logsumexp(&mut self, x: NodeId) -> Result<NodeId> {
        self.record(Op::LogSumExp, &[x])
    }
    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        self.record(Op::Sum { axis: None }, &[x])
    }
    pub fn sum_axis(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        self.record(Op::Sum { axis: Some(axis) }, &[x])
    }
    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        self.record(Op::Mean { axis: None }, &[x])
    }
    pub fn mean_axis(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        self.record(Op::Mean { axis: Some(axis) }, &[x])
    }
    pub fn concat(&mut self, xs: &[NodeId], axis: usize) -> Result<NodeId> {
        self.record(Op::Concat { axis }, xs)
    }
    pub fn slice(&mut self, x: NodeId, axis: usize, start: usize, end: usize) -> Result<NodeId> {
        self.record(Op::Slice { axis, start, end }, &[x])
    }
    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        self.record(
            Op::Reshape {
                shape: shape.to_vec(),
            },
            &[x],
        )
    }
    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        self.record(Op::Transpose, &[x])
    }
    pub fn scale(&mut self, x: NodeId, factor: f64) -> Result<NodeId> {
        self.record(Op::Scale { factor }, &[x])
    }

    /// Reverse sweep from a scalar `root`.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        let root_value = &self.nodes[root.0].value;
        if root_value.len() != 1 {
            return Err(Error::NonScalarRoot(root_value.shape().to_vec()));
        }
        // A node needs a gradient if it is a differentiable leaf, a mark, or
        // depends on one of those.
        let mut wants = vec![false; root.0 + 1];
        for mark in self.marks.values() {
            if mark.0 <= root.0 {
                wants[mark.0] = true;
            }
        }
        for i in 0..=root.0 {
            let node = &self.nodes[i];
            if node.requires_grad || node.parents.iter().any(|p| wants[p.0]) {
                wants[i] = true;
            }
        }

        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::full(root_value.shape(), 1.0));
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if let Some(op) = &node.op {
                let parent_wants: Vec<bool> = node.parents.iter().map(|p| wants[p.0]).collect();
                if parent_wants.iter().any(|&w| w) {
                    let inputs: Vec<&Tensor> =
                        node.parents.iter().map(|p| &self.nodes[p.0].value).collect();
                    let local = backward_op(op, &inputs, &node.value, &g, &parent_wants);
                    for (p, pg) in node.parents.iter().zip(local) {
                        if let Some(pg) = pg {
                            match &mut grads[p.0] {
                                Some(acc) => acc.add_assign(&pg),
                                slot @ None => *slot = Some(pg),
                            }
                        }
                    }
                }
            }
            grads[i] = Some(g);
        }
        // Differentiable nodes that do not feed the root get zero gradients.
        for i in 0..=root.0 {
            if wants[i] && grads[i].is_none() {
                grads[i] = Some(Tensor::zeros(self.nodes[i].value.shape()));
            }
        }
        for (name, id) in &self.marks {
            if id.0 > root.0 {
                grads[id.0] = Some(Tensor::zeros(self.nodes[id.0].value.shape()));
                log::debug!("mark `{name}` recorded after root; gradient is zero");
            }
        }
        Ok(Gradients {
            grads,
            marks: self.marks.clone(),
        })
    }
}

fn shape_err(op: &Op, inputs: &[&Tensor], why: &str) -> Error {
    Error::Shape {
        op: op.name(),
        detail: format!(
            "{why}; input shapes {:?}",
            inputs.iter().map(|t| t.shape().to_vec()).collect::<Vec<_>>()
        ),
    }
}

fn arity(op: &Op, inputs: &[&Tensor], n: usize) -> Result<()> {
    if inputs.len() != n {
        return Err(shape_err(op, inputs, &format!("expected {n} inputs")));
    }
    Ok(())
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
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn last_axis(t: &Tensor) -> (usize, usize) {
    let n = *t.shape().last().unwrap_or(&1);
    let rows = t.len().checked_div(n).unwrap_or(0);
    (rows, n)
}

fn reduce_shape(shape: &[usize], axis: Option<usize>) -> Vec<usize> {
    match axis {
        None => vec![],
        Some(a) => {
            let mut s = shape.to_vec();
            s.remove(a);
            s
        }
    }
}

fn forward(op: &Op, x: &[&Tensor]) -> Result<Tensor> {
    match op {
        Op::Add | Op::Sub | Op::Mul | Op::Div => {
            arity(op, x, 2)?;
            let (a, b) = (x[0], x[1]);
            let out_shape = broadcast_shape(a.shape(), b.shape())
                .ok_or_else(|| shape_err(op, x, "shapes do not broadcast"))?;
            let f: fn(f64, f64) -> f64 = match op {
                Op::Add => |p, q| p + q,
                Op::Sub => |p, q| p - q,
                Op::Mul => |p, q| p * q,
                _ => |p, q| p / q,
            };
            if a.shape() == b.shape() {
                return Ok(a.zip_map(b, f));
            }
            let ia = broadcast_index(a.shape(), &out_shape);
            let ib = broadcast_index(b.shape(), &out_shape);
            let data = ia
                .iter()
                .zip(&ib)
                .map(|(&i, &j)| f(a.data()[i], b.data()[j]))
                .collect();
            Ok(Tensor::from_parts(out_shape, data))
        }
        Op::MatMul => {
            arity(op, x, 2)?;
            let (a, b) = (x[0], x[1]);
            if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
                return Err(shape_err(op, x, "need (m,k) @ (k,n)"));
            }
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            Ok(Tensor::from_parts(vec![m, n], matmul_raw(a.data(), b.data(), m, k, n)))
        }
        Op::Affine => {
            arity(op, x, 3)?;
            let (xs, w, b) = (x[0], x[1], x[2]);
            let ok_w = w.rank() == 2;
            let ok_b = ok_w && b.rank() == 1 && b.shape()[0] == w.shape()[1];
            let (m, k, batched) = match xs.rank() {
                1 => (1, xs.shape()[0], false),
                2 => (xs.shape()[0], xs.shape()[1], true),
                _ => return Err(shape_err(op, x, "x must be rank 1 or 2")),
            };
            if !ok_w || !ok_b || w.shape()[0] != k {
                return Err(shape_err(op, x, "need x:(m,k), w:(k,n), b:(n,)"));
            }
            let n = w.shape()[1];
            let mut data = matmul_raw(xs.data(), w.data(), m, k, n);
            for row in data.chunks_mut(n) {
                for (o, &bv) in row.iter_mut().zip(b.data()) {
                    *o += bv;
                }
            }
            let shape = if batched { vec![m, n] } else { vec![n] };
            Ok(Tensor::from_parts(shape, data))
        }
        Op::Relu => {
            arity(op, x, 1)?;
            Ok(x[0].map(|v| v.max(0.0)))
        }
        Op::Tanh => {
            arity(op, x, 1)?;
            Ok(x[0].map(f64::tanh))
        }
        Op::Exp => {
            arity(op, x, 1)?;
            Ok(x[0].map(f64::exp))
        }
        Op::Log => {
            arity(op, x, 1)?;
            Ok(x[0].map(f64::ln))
        }
        Op::Softplus => {
            arity(op, x, 1)?;
            Ok(x[0].map(softplus))
        }
        Op::Square => {
            arity(op, x, 1)?;
            Ok(x[0].map(|v| v * v))
        }
        Op::Softmax => {
            arity(op, x, 1)?;
            let t = x[0];
            if t.rank() == 0 {
                return Err(shape_err(op, x, "needs rank >= 1"));
            }
            let (_, n) = last_axis(t);
            let mut data = t.data().to_vec();
            for row in data.chunks_mut(n.max(1)) {
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - max).exp();
                    z += *v;
                }
                for v in row.iter_mut() {
                    *v /= z;
                }
            }
            Ok(Tensor::from_parts(t.shape().to_vec(), data))
        }
        Op::LogSumExp => {
            arity(op, x, 1)?;
            let t = x[0];
            if t.rank() == 0 || t.shape()[t.rank() - 1] == 0 {
                return Err(shape_err(op, x, "needs a non-empty last axis"));
            }
            let (_, n) = last_axis(t);
            let data = t
                .data()
                .chunks(n)
                .map(|row| {
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
                })
                .collect();
            Ok(Tensor::from_parts(t.shape()[..t.rank() - 1].to_vec(), data))
        }
        Op::Sum { axis } | Op::Mean { axis } => {
            arity(op, x, 1)?;
            let t = x[0];
            let is_mean = matches!(op, Op::Mean { .. });
            match axis {
                None => {
                    let s: f64 = t.data().iter().sum();
                    let v = if is_mean { s / t.len().max(1) as f64 } else { s };
                    Ok(Tensor::scalar(v))
                }
                Some(a) => {
                    if *a >= t.rank() {
                        return Err(shape_err(op, x, &format!("axis {a} out of range")));
                    }
                    let (outer, len, inner) = axis_extents(t.shape(), *a);
                    let mut data = vec![0.0; outer * inner];
                    for o in 0..outer {
                        for l in 0..len {
                            let base = (o * len + l) * inner;
                            for i in 0..inner {
                                data[o * inner + i] += t.data()[base + i];
                            }
                        }
                    }
                    if is_mean && len > 0 {
                        for v in &mut data {
                            *v /= len as f64;
                        }
                    }
                    Ok(Tensor::from_parts(reduce_shape(t.shape(), *axis), data))
                }
            }
        }
        Op::Concat { axis } => {
            if x.is_empty() {
                return Err(shape_err(op, x, "needs at least one input"));
            }
            let first = x[0].shape();
            if *axis >= first.len() {
                return Err(shape_err(op, x, &format!("axis {axis} out of range")));
            }
            for t in x {
                let s = t.shape();
                let same = s.len() == first.len()
                    && s.iter().zip(first).enumerate().all(|(i, (p, q))| i == *axis || p == q);
                if !same {
                    return Err(shape_err(op, x, "non-concat axes must agree"));
                }
            }
            let (outer, _, inner) = axis_extents(first, *axis);
            let total: usize = x.iter().map(|t| t.shape()[*axis]).sum();
            let mut data = Vec::with_capacity(outer * total * inner);
            for o in 0..outer {
                for t in x {
                    let chunk = t.shape()[*axis] * inner;
                    data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
                }
            }
            let mut shape = first.to_vec();
            shape[*axis] = total;
            Ok(Tensor::from_parts(shape, data))
        }
        Op::Slice { axis, start, end } => {
            arity(op, x, 1)?;
            let t = x[0];
            if *axis >= t.rank() || start >= end || *end > t.shape()[*axis] {
                return Err(shape_err(
                    op,
                    x,
                    &format!("invalid range {start}..{end} on axis {axis}"),
                ));
            }
            let (outer, len, inner) = axis_extents(t.shape(), *axis);
            let mut data = Vec::with_capacity(outer * (end - start) * inner);
            for o in 0..outer {
                let base = o * len * inner;
                data.extend_from_slice(&t.data()[base + start * inner..base + end * inner]);
            }
            let mut shape = t.shape().to_vec();
            shape[*axis] = end - start;
            Ok(Tensor::from_parts(shape, data))
        }
        Op::Reshape { shape } => {
            arity(op, x, 1)?;
            x[0].reshaped(shape.clone())
                .map_err(|_| shape_err(op, x, &format!("cannot reshape to {shape:?}")))
        }
        Op::Transpose => {
            arity(op, x, 1)?;
            let t = x[0];
            if t.rank() != 2 {
                return Err(shape_err(op, x, "needs rank 2"));
            }
            let (r, c) = (t.shape()[0], t.shape()[1]);
            Ok(Tensor::from_parts(vec![c, r], transpose_raw(t.data(), r, c)))
        }
        Op::Scale { factor } => {
            arity(op, x, 1)?;
            let f = *factor;
            Ok(x[0].map(|v| v * f))
        }
    }
}

/// Local vector-Jacobian products for each parent (None where not wanted).
fn backward_op(
    op: &Op,
    x: &[&Tensor],
    out: &Tensor,
    g: &Tensor,
    wants: &[bool],
) -> Vec<Option<Tensor>> {
    let want = |i: usize| wants.get(i).copied().unwrap_or(false);
    match op {
        Op::Add | Op::Sub | Op::Mul | Op::Div => {
            let (a, b) = (x[0], x[1]);
            let ia = broadcast_index(a.shape(), g.shape());
            let ib = broadcast_index(b.shape(), g.shape());
            let mut ga = want(0).then(|| Tensor::zeros(a.shape()));
            let mut gb = want(1).then(|| Tensor::zeros(b.shape()));
            for (k, &gv) in g.data().iter().enumerate() {
                let (av, bv) = (a.data()[ia[k]], b.data()[ib[k]]);
                let (da, db) = match op {
                    Op::Add => (gv, gv),
                    Op::Sub => (gv, -gv),
                    Op::Mul => (gv * bv, gv * av),
                    _ => (gv / bv, -gv * av / (bv * bv)),
                };
                if let Some(t) = ga.as_mut() {
                    t.data_mut()[ia[k]] += da;
                }
                if let Some(t) = gb.as_mut() {
                    t.data_mut()[ib[k]] += db;
                }
            }
            vec![ga, gb]
        }
        Op::MatMul => {
            let (a, b) = (x[0], x[1]);
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            let ga = want(0).then(|| {
                let bt = transpose_raw(b.data(), k, n);
                Tensor::from_parts(vec![m, k], matmul_raw(g.data(), &bt, m, n, k))
            });
            let gb = want(1).then(|| {
                let at = transpose_raw(a.data(), m, k);
                Tensor::from_parts(vec![k, n], matmul_raw(&at, g.data(), k, m, n))
            });
            vec![ga, gb]
        }
        Op::Affine => {
            let (xs, w) = (x[0], x[1]);
            let (k, n) = (w.shape()[0], w.shape()[1]);
            let m = xs.len() / k;
            let gx = want(0).then(|| {
                let wt = transpose_raw(w.data(), k, n);
                Tensor::from_parts(xs.shape().to_vec(), matmul_raw(g.data(), &wt, m, n, k))
            });
            let gw = want(1).then(|| {
                let xt = transpose_raw(xs.data(), m, k);
                Tensor::from_parts(vec![k, n], matmul_raw(&xt, g.data(), k, m, n))
            });
            let gb = want(2).then(|| {
                let mut acc = vec![0.0; n];
                for row in g.data().chunks(n) {
                    for (a, v) in acc.iter_mut().zip(row) {
                        *a += v;
                    }
                }
                Tensor::from_parts(vec![n], acc)
            });
            vec![gx, gw, gb]
        }
        Op::Relu => vec![Some(g.zip_map(x[0], |gv, v| if v > 0.0 { gv } else { 0.0 }))],
        Op::Tanh => vec![Some(g.zip_map(out, |gv, y| gv * (1.0 - y * y)))],
        Op::Exp => vec![Some(g.zip_map(out, |gv, y| gv * y))],
        Op::Log => vec![Some(g.zip_map(x[0], |gv, v| gv / v))],
        Op::Softplus => vec![Some(g.zip_map(x[0], |gv, v| gv * sigmoid(v)))],
        Op::Square => vec![Some(g.zip_map(x[0], |gv, v| 2.0 * gv * v))],
        Op::Softmax => {
            let (_, n) = last_axis(out);
            let mut data = vec![0.0; out.len()];
            for ((d, y), gr) in data
                .chunks_mut(n)
                .zip(out.data().chunks(n))
                .zip(g.data().chunks(n))
            {
                let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                for i in 0..n {
                    d[i] = y[i] * (gr[i] - dot);
                }
            }
            vec![Some(Tensor::from_parts(out.shape().to_vec(), data))]
        }
        Op::LogSumExp => {
            let t = x[0];
            let (_, n) = last_axis(t);
            let mut data = vec![0.0; t.len()];
            for (r, (d, row)) in data.chunks_mut(n).zip(t.data().chunks(n)).enumerate() {
                let lse = out.data()[r];
                for i in 0..n {
                    d[i] = g.data()[r] * (row[i] - lse).exp();
                }
            }
            vec![Some(Tensor::from_parts(t.shape().to_vec(), data))]
        }
        Op::Sum { axis } | Op::Mean { axis } => {
            let t = x[0];
            let is_mean = matches!(op, Op::Mean { .. });
            match axis {
                None => {
                    let scale = if is_mean { 1.0 / t.len().max(1) as f64 } else { 1.0 };
                    vec![Some(Tensor::full(t.shape(), g.data()[0] * scale))]
                }
                Some(a) => {
                    let (outer, len, inner) = axis_extents(t.shape(), *a);
                    let scale = if is_mean && len > 0 { 1.0 / len as f64 } else { 1.0 };
                    let mut data = vec![0.0; t.len()];
                    for o in 0..outer {
                        for l in 0..len {
                            for i in 0..inner {
                                data[(o * len + l) * inner + i] = g.data()[o * inner + i] * scale;
                            }
                        }
                    }
                    vec![Some(Tensor::from_parts(t.shape().to_vec(), data))]
                }
            }
        }
        Op::Concat { axis } => {
            let (outer, total, inner) = axis_extents(out.shape(), *axis);
            let mut offset = 0;
            let mut res = Vec::with_capacity(x.len());
            for (pi, t) in x.iter().enumerate() {
                let len = t.shape()[*axis];
                if want(pi) {
                    let mut data = Vec::with_capacity(t.len());
                    for o in 0..outer {
                        let base = (o * total + offset) * inner;
                        data.extend_from_slice(&g.data()[base..base + len * inner]);
                    }
                    res.push(Some(Tensor::from_parts(t.shape().to_vec(), data)));
                } else {
                    res.push(None);
                }
                offset += len;
            }
            res
        }
        Op::Slice { axis, start, end } => {
            let t = x[0];
            let (outer, len, inner) = axis_extents(t.shape(), *axis);
            let mut data = vec![0.0; t.len()];
            let width = (end - start) * inner;
            for o in 0..outer {
                let dst = o * len * inner + start * inner;
                data[dst..dst + width].copy_from_slice(&g.data()[o * width..(o + 1) * width]);
            }
            vec![Some(Tensor::from_parts(t.shape().to_vec(), data))]
        }
        Op::Reshape { .. } => vec![Some(Tensor::from_parts(x[0].shape().to_vec(), g.data().to_vec()))],
        Op::Transpose => {
            let (r, c) = (x[0].shape()[0], x[0].shape()[1]);
            vec![Some(Tensor::from_parts(vec![r, c], transpose_raw(g.data(), c, r)))]
        }
        Op::Scale { factor } => {
            let f = *factor;
            vec![Some(g.map(|v| v * f))]
        }
    }
    .into_iter()
    .enumerate()
    .map(|(i, t)| if want(i) { t } else { None })
    .collect()
}
