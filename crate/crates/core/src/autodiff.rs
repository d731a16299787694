//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every executed op together with its forward value.
//! Nodes whose inputs all lack gradients are evaluated but never revisited
//! during [`Graph::backward`], so frozen sub-computations cost nothing on the
//! way back while gradients still pass *through* frozen parameters that sit
//! between a trainable leaf and the loss.

use std::borrow::Cow;
use std::collections::BTreeMap;

use crate::tensor::{self, Tensor};
use crate::{Error, Result};

const LAYERNORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf {
        name: Option<String>,
    },
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Add {
        a: NodeId,
        b: NodeId,
        broadcast: bool,
    },
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    Tanh(NodeId),
    SoftmaxRows(NodeId),
    LayerNormRows {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    EmbeddingGather {
        table: NodeId,
        ids: Vec<usize>,
    },
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    SliceRows {
        a: NodeId,
        start: usize,
        end: usize,
    },
    SliceCols {
        a: NodeId,
        start: usize,
        end: usize,
    },
    Reshape(NodeId),
    MeanRows(NodeId),
    Sum(NodeId),
    CrossEntropyRows {
        logits: NodeId,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    requires_grad: bool,
}

/// The computation tape. Values of leaves may borrow parameter storage for
/// the lifetime `'a`, so binding frozen weights does not copy them.
#[derive(Debug, Default)]
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
}

/// Gradients of the loss with respect to every named trainable leaf.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    map: BTreeMap<String, Tensor>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.map.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.map.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    pub fn scale(&mut self, c: f64) {
        for t in self.map.values_mut() {
            t.scale_in_place(c);
        }
    }

    /// Adds `other` into `self`, entry by entry.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (name, g) in &other.map {
            match self.map.get_mut(name) {
                Some(t) => t.add_assign(g),
                None => {
                    self.map.insert(name.clone(), g.clone());
                }
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.map.values().map(Tensor::sq_norm).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.map.values().all(Tensor::is_finite)
    }
}

fn shape_err(op: &'static str, expected: impl Into<String>, actual: impl Into<String>) -> Error {
    Error::Shape {
        op,
        expected: expected.into(),
        actual: actual.into(),
    }
}

fn require_matrix(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    if !t.is_matrix() {
        return Err(shape_err(op, "rank-2 tensor", format!("{:?}", t.shape())));
    }
    Ok((t.shape()[0], t.shape()[1]))
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    /// Number of recorded nodes (leaves included).
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of nodes that will be visited by `backward`.
    pub fn tape_len(&self) -> usize {
        self.nodes.iter().filter(|n| n.requires_grad).count()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// A named parameter leaf borrowing its storage.
    pub fn param(&mut self, name: &str, value: &'a Tensor, trainable: bool) -> NodeId {
        self.push(
            Cow::Borrowed(value),
            Op::Leaf {
                name: Some(name.to_string()),
            },
            trainable,
        )
    }

    /// A named parameter leaf owning its storage.
    pub fn param_owned(&mut self, name: &str, value: Tensor, trainable: bool) -> NodeId {
        self.push(
            Cow::Owned(value),
            Op::Leaf {
                name: Some(name.to_string()),
            },
            trainable,
        )
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Cow::Owned(value), Op::Leaf { name: None }, false)
    }

    pub fn constant_ref(&mut self, value: &'a Tensor) -> NodeId {
        self.push(Cow::Borrowed(value), Op::Leaf { name: None }, false)
    }

    fn push(&mut self, value: Cow<'a, Tensor>, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor, op: Op, inputs: &[NodeId]) -> NodeId {
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.push(Cow::Owned(value), op, requires_grad)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = require_matrix("matmul", self.value(a))?;
        let (k2, n) = require_matrix("matmul", self.value(b))?;
        if k != k2 {
            return Err(shape_err(
                "matmul",
                format!("rhs with {k} rows"),
                format!("lhs {m}x{k}, rhs {k2}x{n}"),
            ));
        }
        let out = tensor::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push_op(value, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let (m, n) = require_matrix("transpose", self.value(a))?;
        let value = Tensor::new(vec![n, m], tensor::transpose(self.value(a).data(), m, n))?;
        Ok(self.push_op(value, Op::Transpose(a), &[a]))
    }

    /// Elementwise add; `b` may also be a `1×n` row added to every row of `a`.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        let broadcast = if va.shape() == vb.shape() {
            false
        } else if va.is_matrix() && vb.shape() == [1, va.cols()] {
            true
        } else {
            return Err(shape_err(
                "add",
                format!("{:?} or [1, {}]", va.shape(), va.cols()),
                format!("{:?}", vb.shape()),
            ));
        };
        let cols = va.cols();
        let data: Vec<f64> = if broadcast {
            va.data()
                .iter()
                .enumerate()
                .map(|(i, x)| x + vb.data()[i % cols])
                .collect()
        } else {
            va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect()
        };
        let value = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push_op(value, Op::Add { a, b, broadcast }, &[a, b]))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err(
                "mul",
                format!("{:?}", va.shape()),
                format!("{:?}", vb.shape()),
            ));
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push_op(value, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let value = self.value(a).map(|v| v * c);
        self.push_op(value, Op::Scale(a, c), &[a])
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(|v| v.max(0.0));
        self.push_op(value, Op::Relu(a), &[a])
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(f64::tanh);
        self.push_op(value, Op::Tanh(a), &[a])
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let (m, n) = require_matrix("softmax_rows", self.value(a))?;
        let value = Tensor::new(vec![m, n], tensor::softmax_rows(self.value(a).data(), m, n))?;
        Ok(self.push_op(value, Op::SoftmaxRows(a), &[a]))
    }

    /// Row-wise layer normalization with a learned `1×n` gain and bias.
    pub fn layernorm_rows(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> Result<NodeId> {
        let (m, n) = require_matrix("layernorm_rows", self.value(x))?;
        for p in [gain, bias] {
            if self.value(p).shape() != [1, n] {
                return Err(shape_err(
                    "layernorm_rows",
                    format!("[1, {n}] gain/bias"),
                    format!("{:?}", self.value(p).shape()),
                ));
            }
        }
        let xs = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = &xs[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + LAYERNORM_EPS).sqrt();
            inv_std[r] = is;
            for c in 0..n {
                let h = (row[c] - mean) * is;
                xhat[r * n + c] = h;
                out[r * n + c] = h * g[c] + b[c];
            }
        }
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push_op(
            value,
            Op::LayerNormRows {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            &[x, gain, bias],
        ))
    }

    pub fn embedding_gather(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let (vocab, d) = require_matrix("embedding_gather", self.value(table))?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(shape_err(
                "embedding_gather",
                format!("ids < {vocab}"),
                format!("id {bad}"),
            ));
        }
        let t = self.value(table);
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(t.row(i));
        }
        let value = Tensor::new(vec![ids.len(), d], data)?;
        Ok(self.push_op(
            value,
            Op::EmbeddingGather {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = parts
            .first()
            .ok_or_else(|| shape_err("concat_rows", "at least one input", "none"))?;
        let (_, n) = require_matrix("concat_rows", self.value(*first))?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (r, c) = require_matrix("concat_rows", self.value(p))?;
            if c != n {
                return Err(shape_err("concat_rows", format!("{n} columns"), format!("{c} columns")));
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        let value = Tensor::new(vec![rows, n], data)?;
        Ok(self.push_op(value, Op::ConcatRows(parts.to_vec()), parts))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = parts
            .first()
            .ok_or_else(|| shape_err("concat_cols", "at least one input", "none"))?;
        let (m, _) = require_matrix("concat_cols", self.value(*first))?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = require_matrix("concat_cols", self.value(p))?;
            if r != m {
                return Err(shape_err("concat_cols", format!("{m} rows"), format!("{r} rows")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for r in 0..m {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let value = Tensor::new(vec![m, total], data)?;
        Ok(self.push_op(value, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let (m, n) = require_matrix("slice_rows", self.value(a))?;
        if start > end || end > m {
            return Err(shape_err(
                "slice_rows",
                format!("range within 0..{m}"),
                format!("{start}..{end}"),
            ));
        }
        let data = self.value(a).data()[start * n..end * n].to_vec();
        let value = Tensor::new(vec![end - start, n], data)?;
        Ok(self.push_op(value, Op::SliceRows { a, start, end }, &[a]))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let (m, n) = require_matrix("slice_cols", self.value(a))?;
        if start > end || end > n {
            return Err(shape_err(
                "slice_cols",
                format!("range within 0..{n}"),
                format!("{start}..{end}"),
            ));
        }
        let src = self.value(a);
        let mut data = Vec::with_capacity(m * (end - start));
        for r in 0..m {
            data.extend_from_slice(&src.row(r)[start..end]);
        }
        let value = Tensor::new(vec![m, end - start], data)?;
        Ok(self.push_op(value, Op::SliceCols { a, start, end }, &[a]))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let value = self.value(a).reshape(shape).map_err(|_| {
            shape_err(
                "reshape",
                format!("{} elements", self.value(a).numel()),
                format!("{shape:?}"),
            )
        })?;
        Ok(self.push_op(value, Op::Reshape(a), &[a]))
    }

    pub fn mean_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let (m, n) = require_matrix("mean_rows", self.value(a))?;
        if m == 0 {
            return Err(shape_err("mean_rows", "at least one row", "0 rows"));
        }
        let src = self.value(a);
        let mut out = vec![0.0; n];
        for r in 0..m {
            for (o, v) in out.iter_mut().zip(src.row(r)) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= m as f64;
        }
        Ok(self.push_op(Tensor::row_vector(out), Op::MeanRows(a), &[a]))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let value = Tensor::scalar(self.value(a).sum());
        self.push_op(value, Op::Sum(a), &[a])
    }

    /// Mean over rows of `-log softmax(logits)[target]`.
    pub fn cross_entropy_rows(&mut self, logits: NodeId, targets: &[usize]) -> Result<NodeId> {
        let (m, v) = require_matrix("cross_entropy_rows", self.value(logits))?;
        if targets.len() != m || m == 0 {
            return Err(shape_err(
                "cross_entropy_rows",
                format!("{m} targets (nonzero)"),
                format!("{} targets", targets.len()),
            ));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= v) {
            return Err(shape_err(
                "cross_entropy_rows",
                format!("targets < {v}"),
                format!("target {bad}"),
            ));
        }
        let l = self.value(logits).data();
        let mut total = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let row = &l[r * v..(r + 1) * v];
            total += tensor::log_sum_exp(row) - row[t];
        }
        let probs = tensor::softmax_rows(l, m, v);
        let value = Tensor::scalar(total / m as f64);
        Ok(self.push_op(
            value,
            Op::CrossEntropyRows {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    /// Reverse pass from a scalar `loss`. Returns gradients for every named
    /// leaf created with `trainable = true`; frozen leaves get no entry.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        let mut out = Gradients::default();
        if !self.nodes[loss.0].requires_grad {
            return Ok(out);
        }
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let mut send = |target: NodeId, delta: Tensor| {
                if !self.nodes[target.0].requires_grad {
                    return;
                }
                match &mut grads[target.0] {
                    Some(t) => t.add_assign(&delta),
                    slot @ None => *slot = Some(delta),
                }
            };
            match &node.op {
                Op::Leaf { name } => {
                    if let Some(name) = name {
                        match out.map.get_mut(name) {
                            Some(t) => t.add_assign(&g),
                            None => {
                                out.map.insert(name.clone(), g);
                            }
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let (m, k) = (va.rows(), va.cols());
                    let n = vb.cols();
                    if self.requires_grad(*a) {
                        let ga = tensor::matmul_nt(g.data(), vb.data(), m, n, k);
                        send(*a, Tensor::new(vec![m, k], ga)?);
                    }
                    if self.requires_grad(*b) {
                        let gb = tensor::matmul_tn(va.data(), g.data(), m, k, n);
                        send(*b, Tensor::new(vec![k, n], gb)?);
                    }
                }
                Op::Transpose(a) => {
                    let (m, n) = (g.rows(), g.cols());
                    send(*a, Tensor::new(vec![n, m], tensor::transpose(g.data(), m, n))?);
                }
                Op::Add { a, b, broadcast } => {
                    if self.requires_grad(*b) {
                        if *broadcast {
                            let n = g.cols();
                            let mut gb = vec![0.0; n];
                            for r in 0..g.rows() {
                                for (o, v) in gb.iter_mut().zip(g.row(r)) {
                                    *o += v;
                                }
                            }
                            send(*b, Tensor::row_vector(gb));
                        } else {
                            send(*b, g.clone());
                        }
                    }
                    send(*a, g);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    if self.requires_grad(*a) {
                        let d = g.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
                        send(*a, Tensor::new(g.shape().to_vec(), d)?);
                    }
                    if self.requires_grad(*b) {
                        let d = g.data().iter().zip(va.data()).map(|(x, y)| x * y).collect();
                        send(*b, Tensor::new(g.shape().to_vec(), d)?);
                    }
                }
                Op::Scale(a, c) => send(*a, g.map(|v| v * c)),
                Op::Relu(a) => {
                    let x = self.value(*a);
                    let d = g
                        .data()
                        .iter()
                        .zip(x.data())
                        .map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 })
                        .collect();
                    send(*a, Tensor::new(g.shape().to_vec(), d)?);
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    let d = g
                        .data()
                        .iter()
                        .zip(y.data())
                        .map(|(gv, yv)| gv * (1.0 - yv * yv))
                        .collect();
                    send(*a, Tensor::new(g.shape().to_vec(), d)?);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let (m, n) = (y.rows(), y.cols());
                    let mut d = vec![0.0; m * n];
                    for r in 0..m {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for c in 0..n {
                            d[r * n + c] = yr[c] * (gr[c] - dot);
                        }
                    }
                    send(*a, Tensor::new(vec![m, n], d)?);
                }
                Op::LayerNormRows {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let (m, n) = (g.rows(), g.cols());
                    let gv = self.value(*gain).data();
                    if self.requires_grad(*gain) || self.requires_grad(*bias) {
                        let mut dg = vec![0.0; n];
                        let mut db = vec![0.0; n];
                        for r in 0..m {
                            for c in 0..n {
                                let gg = g.data()[r * n + c];
                                dg[c] += gg * xhat[r * n + c];
                                db[c] += gg;
                            }
                        }
                        send(*gain, Tensor::row_vector(dg));
                        send(*bias, Tensor::row_vector(db));
                    }
                    if self.requires_grad(*x) {
                        let mut dx = vec![0.0; m * n];
                        for r in 0..m {
                            let mut mean_g = 0.0;
                            let mut mean_gx = 0.0;
                            for c in 0..n {
                                let gh = g.data()[r * n + c] * gv[c];
                                mean_g += gh;
                                mean_gx += gh * xhat[r * n + c];
                            }
                            mean_g /= n as f64;
                            mean_gx /= n as f64;
                            for c in 0..n {
                                let gh = g.data()[r * n + c] * gv[c];
                                dx[r * n + c] = inv_std[r] * (gh - mean_g - xhat[r * n + c] * mean_gx);
                            }
                        }
                        send(*x, Tensor::new(vec![m, n], dx)?);
                    }
                }
                Op::EmbeddingGather { table, ids } => {
                    let t = self.value(*table);
                    let d = t.cols();
                    let mut dt = Tensor::zeros(t.shape());
                    for (r, &i) in ids.iter().enumerate() {
                        let dst = &mut dt.data_mut()[i * d..(i + 1) * d];
                        for (o, v) in dst.iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    send(*table, dt);
                }
                Op::ConcatRows(parts) => {
                    let n = g.cols();
                    let mut offset = 0;
                    for p in parts {
                        let r = self.value(*p).rows();
                        if self.requires_grad(*p) {
                            let d = g.data()[offset * n..(offset + r) * n].to_vec();
                            send(*p, Tensor::new(vec![r, n], d)?);
                        }
                        offset += r;
                    }
                }
                Op::ConcatCols(parts) => {
                    let m = g.rows();
                    let mut offset = 0;
                    for p in parts {
                        let c = self.value(*p).cols();
                        if self.requires_grad(*p) {
                            let mut d = Vec::with_capacity(m * c);
                            for r in 0..m {
                                d.extend_from_slice(&g.row(r)[offset..offset + c]);
                            }
                            send(*p, Tensor::new(vec![m, c], d)?);
                        }
                        offset += c;
                    }
                }
                Op::SliceRows { a, start, end } => {
                    let src = self.value(*a);
                    let n = src.cols();
                    let mut d = Tensor::zeros(src.shape());
                    d.data_mut()[start * n..end * n].copy_from_slice(g.data());
                    send(*a, d);
                }
                Op::SliceCols { a, start, end } => {
                    let src = self.value(*a);
                    let n = src.cols();
                    let w = end - start;
                    let mut d = Tensor::zeros(src.shape());
                    for r in 0..src.rows() {
                        d.data_mut()[r * n + start..r * n + end].copy_from_slice(&g.data()[r * w..(r + 1) * w]);
                    }
                    send(*a, d);
                }
                Op::Reshape(a) => {
                    let shape = self.value(*a).shape().to_vec();
                    send(*a, Tensor::new(shape, g.into_data())?);
                }
                Op::MeanRows(a) => {
                    let src = self.value(*a);
                    let (m, n) = (src.rows(), src.cols());
                    let mut d = Vec::with_capacity(m * n);
                    for _ in 0..m {
                        d.extend(g.data().iter().map(|v| v / m as f64));
                    }
                    send(*a, Tensor::new(vec![m, n], d)?);
                }
                Op::Sum(a) => {
                    let shape = self.value(*a).shape().to_vec();
                    send(*a, Tensor::full(&shape, g.item()));
                }
                Op::CrossEntropyRows { logits, targets, probs } => {
                    let m = targets.len();
                    let v = probs.len() / m;
                    let scale = g.item() / m as f64;
                    let mut d: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                    for (r, &t) in targets.iter().enumerate() {
                        d[r * v + t] -= scale;
                    }
                    send(*logits, Tensor::new(vec![m, v], d)?);
                }
            }
        }
        Ok(out)
    }
}
