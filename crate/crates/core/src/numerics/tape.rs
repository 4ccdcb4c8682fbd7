//! Tensor-level reverse-mode differentiation.
//!
//! A [`Tape`] records every operation of one forward pass as a node holding
//! its output value. [`Var::backward`] walks the nodes in reverse creation
//! order and accumulates vector-Jacobian products into a [`Gradients`] table.
//! Nodes that do not depend on any leaf created with [`Tape::leaf`] are
//! skipped. The tape is dropped after use; nothing is retained between steps.
//!
//! Operations panic on shape mismatches. Public model entry points validate
//! their inputs before building a graph, so a panic here is a bug.

use std::cell::RefCell;
use std::ops::{Add, Mul, Neg, Sub};
use std::rc::Rc;

use super::kernels::{batch_moments, silu, silu_grad, softmax_in_place};
use super::tensor::{matmul_at_into, matmul_bt_into, Tensor};

type NodeId = usize;

enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddRow(NodeId, NodeId),
    MulCol(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Reshape(NodeId),
    Silu(NodeId),
    Sum(NodeId),
    SoftmaxRows(NodeId),
    LogSoftmaxRows(NodeId),
    GatherRows(NodeId, Rc<[usize]>),
    ScatterAddRows(NodeId, Rc<[usize]>),
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    BatchNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
    Attention {
        q: NodeId,
        k: NodeId,
        v: NodeId,
        layout: AttentionLayout,
        probs: Rc<Vec<f64>>,
    },
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Geometry of a fused block-diagonal multi-head attention.
///
/// Rows of Q, K and V are `groups` independent sequences of `seq` tokens.
/// Q and K carry `heads` column blocks of width `key_width`; V carries
/// `heads` blocks of width `value_width`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionLayout {
    pub groups: usize,
    pub seq: usize,
    pub heads: usize,
    pub key_width: usize,
    pub value_width: usize,
}

/// How a batch-norm node normalizes its input.
#[derive(Clone, Copy, Debug)]
pub enum NormStats<'a> {
    /// Normalize with the statistics of the current batch.
    Batch { eps: f64 },
    /// Normalize with fixed running statistics.
    Running {
        mean: &'a [f64],
        var: &'a [f64],
        eps: f64,
    },
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: NodeId,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A differentiable input.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// A non-differentiable input.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value(&self, id: NodeId) -> Rc<Tensor> {
        self.nodes.borrow()[id].value.clone()
    }

    fn requires_grad(&self, ids: &[NodeId]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    pub fn concat_rows<'t>(&'t self, parts: &[Var<'t>]) -> Var<'t> {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let cols = values[0].cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for v in &values {
            assert_eq!(v.cols(), cols, "concat_rows column mismatch");
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let ids: Vec<_> = parts.iter().map(|p| p.id).collect();
        let rg = self.requires_grad(&ids);
        self.push(
            Tensor::matrix(rows, cols, data).expect("concat_rows"),
            Op::ConcatRows(ids),
            rg,
        )
    }

    pub fn concat_cols<'t>(&'t self, parts: &[Var<'t>]) -> Var<'t> {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let rows = values[0].rows();
        let total: usize = values.iter().map(|v| v.cols()).sum();
        let mut data = vec![0.0; rows * total];
        let mut offset = 0;
        for v in &values {
            assert_eq!(v.rows(), rows, "concat_cols row mismatch");
            let c = v.cols();
            for r in 0..rows {
                data[r * total + offset..r * total + offset + c].copy_from_slice(v.row(r));
            }
            offset += c;
        }
        let ids: Vec<_> = parts.iter().map(|p| p.id).collect();
        let rg = self.requires_grad(&ids);
        self.push(
            Tensor::matrix(rows, total, data).expect("concat_cols"),
            Op::ConcatCols(ids),
            rg,
        )
    }

    /// Attention probabilities stored by an [`Var::attention`] node, laid out
    /// as `[group][head][query][key]`.
    pub fn attention_probs(&self, var: Var<'_>) -> Option<(AttentionLayout, Rc<Vec<f64>>)> {
        match &self.nodes.borrow()[var.id].op {
            Op::Attention { layout, probs, .. } => Some((*layout, probs.clone())),
            _ => None,
        }
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    /// Value of a one-element node.
    pub fn item(&self) -> f64 {
        self.value().item()
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    fn unary(self, value: Tensor, op: Op) -> Var<'t> {
        let rg = self.tape.requires_grad(&[self.id]);
        self.tape.push(value, op, rg)
    }

    fn binary(self, other: Var<'t>, value: Tensor, op: Op) -> Var<'t> {
        let rg = self.tape.requires_grad(&[self.id, other.id]);
        self.tape.push(value, op, rg)
    }

    fn zip_with(self, other: Var<'t>, name: &str, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (a, b) = (self.value(), other.value());
        assert_eq!(a.shape(), b.shape(), "{name}: shape mismatch");
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(a.shape().to_vec(), data).expect(name)
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        let v = self.value().map(|x| x * c);
        self.unary(v, Op::Scale(self.id, c))
    }

    /// Adds a row vector (`[n]` or `[1, n]`) to every row of `self`.
    pub fn add_row(self, row: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), row.value());
        let n = a.cols();
        assert_eq!(b.numel(), n, "add_row: width mismatch");
        let mut out = (*a).clone();
        for r in 0..a.rows() {
            for (o, &bv) in out.row_mut(r).iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
        self.binary(row, out, Op::AddRow(self.id, row.id))
    }

    /// Scales row `i` of `self` by `col[i]` (`col` is `[m, 1]` or `[m]`).
    pub fn mul_col(self, col: Var<'t>) -> Var<'t> {
        let (a, c) = (self.value(), col.value());
        assert_eq!(c.numel(), a.rows(), "mul_col: height mismatch");
        let mut out = (*a).clone();
        for r in 0..a.rows() {
            let s = c.data()[r];
            out.row_mut(r).iter_mut().for_each(|o| *o *= s);
        }
        self.binary(col, out, Op::MulCol(self.id, col.id))
    }

    pub fn matmul(self, other: Var<'t>) -> Var<'t> {
        let out = self
            .value()
            .matmul(&other.value())
            .unwrap_or_else(|e| panic!("{e}"));
        self.binary(other, out, Op::MatMul(self.id, other.id))
    }

    pub fn transpose(self) -> Var<'t> {
        let v = self.value().transpose();
        self.unary(v, Op::Transpose(self.id))
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Var<'t> {
        let v = (*self.value())
            .clone()
            .reshaped(shape)
            .unwrap_or_else(|e| panic!("{e}"));
        self.unary(v, Op::Reshape(self.id))
    }

    pub fn silu(self) -> Var<'t> {
        let v = self.value().map(silu);
        self.unary(v, Op::Silu(self.id))
    }

    pub fn sum(self) -> Var<'t> {
        let v = Tensor::scalar(self.value().sum());
        self.unary(v, Op::Sum(self.id))
    }

    pub fn mean(self) -> Var<'t> {
        let n = self.value().numel() as f64;
        self.sum().scale(1.0 / n)
    }

    pub fn softmax_rows(self) -> Var<'t> {
        let mut v = (*self.value()).clone();
        for r in 0..v.rows() {
            softmax_in_place(v.row_mut(r));
        }
        self.unary(v, Op::SoftmaxRows(self.id))
    }

    pub fn log_softmax_rows(self) -> Var<'t> {
        let mut v = (*self.value()).clone();
        for r in 0..v.rows() {
            let row = v.row_mut(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|x| *x -= lse);
        }
        self.unary(v, Op::LogSoftmaxRows(self.id))
    }

    /// Output row `r` is input row `index[r]`.
    pub fn gather_rows(self, index: impl Into<Rc<[usize]>>) -> Var<'t> {
        let index = index.into();
        let a = self.value();
        let c = a.cols();
        let mut data = Vec::with_capacity(index.len() * c);
        for &i in index.iter() {
            assert!(i < a.rows(), "gather_rows: index {i} out of range");
            data.extend_from_slice(a.row(i));
        }
        let v = Tensor::matrix(index.len(), c, data).expect("gather_rows");
        self.unary(v, Op::GatherRows(self.id, index))
    }

    /// Output row `j` is the sum of input rows `r` with `index[r] == j`.
    pub fn scatter_add_rows(self, index: impl Into<Rc<[usize]>>, rows_out: usize) -> Var<'t> {
        let index = index.into();
        let a = self.value();
        assert_eq!(index.len(), a.rows(), "scatter_add_rows: index length");
        let c = a.cols();
        let mut out = Tensor::zeros([rows_out, c]);
        for (r, &j) in index.iter().enumerate() {
            assert!(j < rows_out, "scatter_add_rows: target {j} out of range");
            for (o, &x) in out.row_mut(j).iter_mut().zip(a.row(r)) {
                *o += x;
            }
        }
        self.unary(out, Op::ScatterAddRows(self.id, index))
    }

    /// Per-column normalization over the rows of `self`, followed by the
    /// affine map `gamma * xhat + beta`. Returns the output and, in batch
    /// mode, the batch mean and biased variance.
    pub fn batch_norm(
        self,
        gamma: Var<'t>,
        beta: Var<'t>,
        stats: NormStats<'_>,
    ) -> (Var<'t>, Option<(Vec<f64>, Vec<f64>)>) {
        let x = self.value();
        let (g, b) = (gamma.value(), beta.value());
        let (m, n) = (x.rows(), x.cols());
        assert!(m > 0, "batch_norm: empty batch");
        assert_eq!(g.numel(), n, "batch_norm: gamma width");
        assert_eq!(b.numel(), n, "batch_norm: beta width");
        let (mean, var, eps, train) = match stats {
            NormStats::Batch { eps } => {
                let (mean, var) = batch_moments(&x);
                (mean, var, eps, true)
            }
            NormStats::Running { mean, var, eps } => (mean.to_vec(), var.to_vec(), eps, false),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = vec![0.0; m * n];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let h = (x.data()[i * n + j] - mean[j]) * inv_std[j];
                xhat[i * n + j] = h;
                out[i * n + j] = g.data()[j] * h + b.data()[j];
            }
        }
        let rg = self.tape.requires_grad(&[self.id, gamma.id, beta.id]);
        let var_out = self.tape.push(
            Tensor::new(x.shape().to_vec(), out).expect("batch_norm"),
            Op::BatchNorm {
                x: self.id,
                gamma: gamma.id,
                beta: beta.id,
                xhat,
                inv_std,
                train,
            },
            rg,
        );
        (var_out, train.then_some((mean, var)))
    }

    /// Fused block-diagonal multi-head scaled dot-product attention.
    ///
    /// For every group `g` and head `h`, computes
    /// `softmax(Q_gh K_gh^T / sqrt(key_width)) V_gh` and writes it into
    /// column block `h` of the group's output rows.
    pub fn attention(self, k: Var<'t>, v: Var<'t>, layout: AttentionLayout) -> Var<'t> {
        let (qv, kv, vv) = (self.value(), k.value(), v.value());
        let AttentionLayout {
            groups,
            seq,
            heads,
            key_width: dk,
            value_width: dv,
        } = layout;
        let rows = groups * seq;
        assert_eq!(qv.shape(), &[rows, heads * dk], "attention: Q shape");
        assert_eq!(kv.shape(), &[rows, heads * dk], "attention: K shape");
        assert_eq!(vv.shape(), &[rows, heads * dv], "attention: V shape");
        let scale = 1.0 / (dk as f64).sqrt();
        let (qw, vw) = (heads * dk, heads * dv);
        let mut probs = vec![0.0; groups * heads * seq * seq];
        let mut out = vec![0.0; rows * vw];
        for g in 0..groups {
            for h in 0..heads {
                let p = &mut probs[(g * heads + h) * seq * seq..][..seq * seq];
                for i in 0..seq {
                    let qi = &qv.data()[(g * seq + i) * qw + h * dk..][..dk];
                    let row = &mut p[i * seq..(i + 1) * seq];
                    for (j, s) in row.iter_mut().enumerate() {
                        let kj = &kv.data()[(g * seq + j) * qw + h * dk..][..dk];
                        *s = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                    }
                    softmax_in_place(row);
                    let o = &mut out[(g * seq + i) * vw + h * dv..][..dv];
                    for (j, &w) in row.iter().enumerate() {
                        let vj = &vv.data()[(g * seq + j) * vw + h * dv..][..dv];
                        for (oc, &x) in o.iter_mut().zip(vj) {
                            *oc += w * x;
                        }
                    }
                }
            }
        }
        let rg = self.tape.requires_grad(&[self.id, k.id, v.id]);
        self.tape.push(
            Tensor::matrix(rows, vw, out).expect("attention"),
            Op::Attention {
                q: self.id,
                k: k.id,
                v: v.id,
                layout,
                probs: Rc::new(probs),
            },
            rg,
        )
    }

    /// Reverse-mode sweep from a one-element node.
    pub fn backward(self) -> Gradients {
        let nodes = self.tape.nodes.borrow();
        assert_eq!(nodes[self.id].value.numel(), 1, "backward from non-scalar");
        let mut grads: Vec<Option<Tensor>> = vec![None; self.id + 1];
        grads[self.id] = Some(Tensor::filled(nodes[self.id].value.shape().to_vec(), 1.0));

        for id in (0..=self.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            backprop(&nodes, node, &g, &mut grads);
            grads[id] = Some(g);
        }
        Gradients { grads }
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        let v = self.zip_with(rhs, "add", |a, b| a + b);
        self.binary(rhs, v, Op::Add(self.id, rhs.id))
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        let v = self.zip_with(rhs, "sub", |a, b| a - b);
        self.binary(rhs, v, Op::Sub(self.id, rhs.id))
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        let v = self.zip_with(rhs, "mul", |a, b| a * b);
        self.binary(rhs, v, Op::Mul(self.id, rhs.id))
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }
}

/// Gradients of one backward sweep, indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`, if it influenced the loss.
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Tensor>], id: NodeId, contribution: Tensor) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(g) => g.add_assign(&contribution),
        slot @ None => *slot = Some(contribution),
    }
}

fn backprop(nodes: &[Node], node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let val = |id: NodeId| nodes[id].value.as_ref();
    let rg = |id: NodeId| nodes[id].requires_grad;
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accumulate(nodes, grads, *a, g.clone());
            accumulate(nodes, grads, *b, g.clone());
        }
        Op::Sub(a, b) => {
            accumulate(nodes, grads, *a, g.clone());
            if rg(*b) {
                accumulate(nodes, grads, *b, g.map(|x| -x));
            }
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            if rg(*a) {
                let d = zip(g, bv, |x, y| x * y);
                accumulate(nodes, grads, *a, d);
            }
            if rg(*b) {
                let d = zip(g, av, |x, y| x * y);
                accumulate(nodes, grads, *b, d);
            }
        }
        Op::Scale(a, c) => accumulate(nodes, grads, *a, g.map(|x| x * c)),
        Op::AddRow(a, b) => {
            accumulate(nodes, grads, *a, g.clone());
            if rg(*b) {
                let mut col = vec![0.0; g.cols()];
                for r in 0..g.rows() {
                    for (c, &x) in col.iter_mut().zip(g.row(r)) {
                        *c += x;
                    }
                }
                let shape = val(*b).shape().to_vec();
                accumulate(nodes, grads, *b, Tensor::new(shape, col).expect("add_row grad"));
            }
        }
        Op::MulCol(a, c) => {
            let (av, cv) = (val(*a), val(*c));
            if rg(*a) {
                let mut d = g.clone();
                for r in 0..d.rows() {
                    let s = cv.data()[r];
                    d.row_mut(r).iter_mut().for_each(|x| *x *= s);
                }
                accumulate(nodes, grads, *a, d);
            }
            if rg(*c) {
                let dc: Vec<f64> = (0..g.rows())
                    .map(|r| g.row(r).iter().zip(av.row(r)).map(|(x, y)| x * y).sum())
                    .collect();
                let shape = cv.shape().to_vec();
                accumulate(nodes, grads, *c, Tensor::new(shape, dc).expect("mul_col grad"));
            }
        }
        Op::MatMul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let (m, k, n) = (av.rows(), av.cols(), bv.cols());
            if rg(*a) {
                let mut da = vec![0.0; m * k];
                matmul_bt_into(g.data(), bv.data(), &mut da, m, n, k);
                let shape = av.shape().to_vec();
                accumulate(nodes, grads, *a, Tensor::new(shape, da).expect("matmul grad"));
            }
            if rg(*b) {
                let mut db = vec![0.0; k * n];
                matmul_at_into(av.data(), g.data(), &mut db, m, k, n);
                let shape = bv.shape().to_vec();
                accumulate(nodes, grads, *b, Tensor::new(shape, db).expect("matmul grad"));
            }
        }
        Op::Transpose(a) => accumulate(nodes, grads, *a, g.transpose()),
        Op::Reshape(a) => {
            let shape = val(*a).shape().to_vec();
            accumulate(nodes, grads, *a, g.clone().reshaped(shape).expect("reshape grad"));
        }
        Op::Silu(a) => {
            let d = zip(g, val(*a), |x, y| x * silu_grad(y));
            accumulate(nodes, grads, *a, d);
        }
        Op::Sum(a) => {
            let shape = val(*a).shape().to_vec();
            accumulate(nodes, grads, *a, Tensor::filled(shape, g.item()));
        }
        Op::SoftmaxRows(a) => {
            let y = node.value.as_ref();
            let mut d = g.clone();
            for r in 0..d.rows() {
                let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(x, p)| x * p).sum();
                for (dx, &p) in d.row_mut(r).iter_mut().zip(y.row(r)) {
                    *dx = p * (*dx - dot);
                }
            }
            accumulate(nodes, grads, *a, d);
        }
        Op::LogSoftmaxRows(a) => {
            let y = node.value.as_ref();
            let mut d = g.clone();
            for r in 0..d.rows() {
                let total: f64 = g.row(r).iter().sum();
                for (dx, &ly) in d.row_mut(r).iter_mut().zip(y.row(r)) {
                    *dx -= ly.exp() * total;
                }
            }
            accumulate(nodes, grads, *a, d);
        }
        Op::GatherRows(a, index) => {
            let av = val(*a);
            let mut d = Tensor::zeros(av.shape().to_vec());
            for (r, &i) in index.iter().enumerate() {
                for (o, &x) in d.row_mut(i).iter_mut().zip(g.row(r)) {
                    *o += x;
                }
            }
            accumulate(nodes, grads, *a, d);
        }
        Op::ScatterAddRows(a, index) => {
            let av = val(*a);
            let c = av.cols();
            let mut data = Vec::with_capacity(av.numel());
            for &j in index.iter() {
                data.extend_from_slice(g.row(j));
            }
            let d = Tensor::matrix(index.len(), c, data).expect("scatter grad");
            let d = d.reshaped(av.shape().to_vec()).expect("scatter grad");
            accumulate(nodes, grads, *a, d);
        }
        Op::ConcatRows(parts) => {
            let c = g.cols();
            let mut start = 0;
            for &p in parts {
                let pv = val(p);
                let len = pv.rows() * c;
                if rg(p) {
                    let d = Tensor::new(pv.shape().to_vec(), g.data()[start..start + len].to_vec())
                        .expect("concat_rows grad");
                    accumulate(nodes, grads, p, d);
                }
                start += len;
            }
        }
        Op::ConcatCols(parts) => {
            let (rows, total) = (g.rows(), g.cols());
            let mut offset = 0;
            for &p in parts {
                let pv = val(p);
                let c = pv.cols();
                if rg(p) {
                    let mut data = Vec::with_capacity(rows * c);
                    for r in 0..rows {
                        data.extend_from_slice(&g.data()[r * total + offset..r * total + offset + c]);
                    }
                    let d = Tensor::new(pv.shape().to_vec(), data).expect("concat_cols grad");
                    accumulate(nodes, grads, p, d);
                }
                offset += c;
            }
        }
        Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            train,
        } => {
            let gv = val(*gamma);
            let (m, n) = (g.rows(), g.cols());
            let gd = g.data();
            if rg(*beta) {
                let mut db = vec![0.0; n];
                for i in 0..m {
                    for j in 0..n {
                        db[j] += gd[i * n + j];
                    }
                }
                let shape = val(*beta).shape().to_vec();
                accumulate(nodes, grads, *beta, Tensor::new(shape, db).expect("bn grad"));
            }
            if rg(*gamma) {
                let mut dg = vec![0.0; n];
                for i in 0..m {
                    for j in 0..n {
                        dg[j] += gd[i * n + j] * xhat[i * n + j];
                    }
                }
                let shape = gv.shape().to_vec();
                accumulate(nodes, grads, *gamma, Tensor::new(shape, dg).expect("bn grad"));
            }
            if rg(*x) {
                let mut dx = vec![0.0; m * n];
                if *train {
                    let mut sum_dh = vec![0.0; n];
                    let mut sum_dh_h = vec![0.0; n];
                    for i in 0..m {
                        for j in 0..n {
                            let dh = gd[i * n + j] * gv.data()[j];
                            sum_dh[j] += dh;
                            sum_dh_h[j] += dh * xhat[i * n + j];
                        }
                    }
                    let mf = m as f64;
                    for i in 0..m {
                        for j in 0..n {
                            let dh = gd[i * n + j] * gv.data()[j];
                            dx[i * n + j] = inv_std[j] / mf
                                * (mf * dh - sum_dh[j] - xhat[i * n + j] * sum_dh_h[j]);
                        }
                    }
                } else {
                    for i in 0..m {
                        for j in 0..n {
                            dx[i * n + j] = gd[i * n + j] * gv.data()[j] * inv_std[j];
                        }
                    }
                }
                let shape = val(*x).shape().to_vec();
                accumulate(nodes, grads, *x, Tensor::new(shape, dx).expect("bn grad"));
            }
        }
        Op::Attention {
            q,
            k,
            v,
            layout,
            probs,
        } => {
            let (qv, kv, vv) = (val(*q), val(*k), val(*v));
            let AttentionLayout {
                groups,
                seq,
                heads,
                key_width: dk,
                value_width: dv,
            } = *layout;
            let scale = 1.0 / (dk as f64).sqrt();
            let (qw, vw) = (heads * dk, heads * dv);
            let mut dq = vec![0.0; qv.numel()];
            let mut dk_ = vec![0.0; kv.numel()];
            let mut dvv = vec![0.0; vv.numel()];
            let mut ds = vec![0.0; seq];
            for gi in 0..groups {
                for h in 0..heads {
                    let p = &probs[(gi * heads + h) * seq * seq..][..seq * seq];
                    for i in 0..seq {
                        let go = &g.data()[(gi * seq + i) * vw + h * dv..][..dv];
                        let pi = &p[i * seq..(i + 1) * seq];
                        // dP_ij = dO_i . V_j, then the softmax Jacobian.
                        let mut dot = 0.0;
                        for (j, d) in ds.iter_mut().enumerate() {
                            let vj = &vv.data()[(gi * seq + j) * vw + h * dv..][..dv];
                            *d = go.iter().zip(vj).map(|(a, b)| a * b).sum::<f64>();
                            dot += pi[j] * *d;
                        }
                        for j in 0..seq {
                            let w = pi[j];
                            let dvj = &mut dvv[(gi * seq + j) * vw + h * dv..][..dv];
                            for (o, &x) in dvj.iter_mut().zip(go) {
                                *o += w * x;
                            }
                            ds[j] = w * (ds[j] - dot) * scale;
                        }
                        let qi_off = (gi * seq + i) * qw + h * dk;
                        for (j, &s) in ds.iter().enumerate() {
                            if s == 0.0 {
                                continue;
                            }
                            let kj_off = (gi * seq + j) * qw + h * dk;
                            for c in 0..dk {
                                dq[qi_off + c] += s * kv.data()[kj_off + c];
                                dk_[kj_off + c] += s * qv.data()[qi_off + c];
                            }
                        }
                    }
                }
            }
            if rg(*q) {
                accumulate(nodes, grads, *q, Tensor::new(qv.shape().to_vec(), dq).expect("attn"));
            }
            if rg(*k) {
                accumulate(nodes, grads, *k, Tensor::new(kv.shape().to_vec(), dk_).expect("attn"));
            }
            if rg(*v) {
                accumulate(nodes, grads, *v, Tensor::new(vv.shape().to_vec(), dvv).expect("attn"));
            }
        }
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("zip")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn square_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let y = (x * x).sum();
        let g = y.backward();
        assert_eq!(y.item(), 9.0);
        assert_eq!(g.get(x).unwrap().item(), 6.0);
    }

    #[test]
    fn reuse_accumulates() {
        // f = x*y + x, df/dx = y + 1
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(2.0));
        let y = tape.leaf(Tensor::scalar(5.0));
        let f = (x * y + x).sum();
        let g = f.backward();
        assert_eq!(g.get(x).unwrap().item(), 6.0);
        assert_eq!(g.get(y).unwrap().item(), 2.0);
    }

    #[test]
    fn constants_get_no_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(t(&[&[1.0, 2.0]]));
        let c = tape.constant(t(&[&[3.0, 4.0]]));
        let g = (x * c).sum().backward();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(x).unwrap().data(), &[3.0, 4.0]);
    }

    #[test]
    fn gather_scatter_are_adjoint() {
        let tape = Tape::new();
        let x = tape.leaf(t(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let picked = x.gather_rows(vec![1, 1, 0]);
        assert_eq!(picked.value().data(), &[3.0, 4.0, 3.0, 4.0, 1.0, 2.0]);
        let g = picked.sum().backward();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 1.0, 2.0, 2.0]);

        let s = x.scatter_add_rows(vec![0, 0], 1);
        assert_eq!(s.value().data(), &[4.0, 6.0]);
    }

    #[test]
    fn concat_cols_layout() {
        let tape = Tape::new();
        let a = tape.leaf(t(&[&[1.0], &[2.0]]));
        let b = tape.leaf(t(&[&[3.0, 4.0], &[5.0, 6.0]]));
        let c = tape.concat_cols(&[a, b]);
        assert_eq!(c.value().data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let w = tape.constant(t(&[&[1.0, 10.0, 100.0], &[1000.0, 1e4, 1e5]]));
        let g = (c * w).sum().backward();
        assert_eq!(g.get(a).unwrap().data(), &[1.0, 1000.0]);
        assert_eq!(g.get(b).unwrap().data(), &[10.0, 100.0, 1e4, 1e5]);
    }
}
