//! Reverse-mode differentiation over dense tensors.
//!
//! A [`Tape`] records every forward operation in execution order. Leaves are
//! either constants or named trainable parameters. [`Tape::backward`] walks
//! the records in exact reverse order and returns one gradient per trainable
//! leaf, shaped like the leaf, zero-filled when the loss does not depend on it.
//!
//! Every forward op checks its output for NaN/Inf and fails instead of
//! recording a non-finite value.
//!
//! The op set is what the rating model needs and nothing more. Two ops are
//! specific to sparse graph work: [`Tape::gather_accumulate`] sums weighted
//! feature rows along neighbor lists, and [`Tape::row_dot`] takes dot
//! products between selected row pairs of two matrices.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

/// Compressed neighbor lists with one weight per entry.
///
/// Row `i` of a gather output is `sum_e weights[e] * features[indices[e]]`
/// for `e` in `offsets[i]..offsets[i + 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborLists {
    offsets: Vec<usize>,
    indices: Vec<usize>,
    weights: Vec<f64>,
    max_index: Option<usize>,
}

impl NeighborLists {
    pub fn new(offsets: Vec<usize>, indices: Vec<usize>, weights: Vec<f64>) -> Result<Self> {
        if offsets.first() != Some(&0)
            || offsets.last() != Some(&indices.len())
            || offsets.windows(2).any(|w| w[0] > w[1])
        {
            return Err(Error::InvalidArgument("neighbor offsets are not a valid prefix array".into()));
        }
        if weights.len() != indices.len() {
            return Err(Error::InvalidArgument("one weight per neighbor entry is required".into()));
        }
        let max_index = indices.iter().copied().max();
        Ok(NeighborLists {
            offsets,
            indices,
            weights,
            max_index,
        })
    }

    /// Builds lists from per-row `(index, weight)` pairs.
    pub fn from_lists(lists: &[Vec<(usize, f64)>]) -> Result<Self> {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        let mut indices = Vec::new();
        let mut weights = Vec::new();
        offsets.push(0);
        for row in lists {
            for &(j, w) in row {
                indices.push(j);
                weights.push(w);
            }
            offsets.push(indices.len());
        }
        Self::new(offsets, indices, weights)
    }

    /// Number of output rows.
    pub fn rows(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.offsets[i]..self.offsets[i + 1];
        self.indices[span.clone()].iter().copied().zip(self.weights[span].iter().copied())
    }
}

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    OneMinus(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    ConcatCols(Vec<Var>),
    ScaleRows(Var, Arc<[f64]>),
    Dropout(Var, Vec<f64>),
    Gather(Var, Arc<NeighborLists>),
    RowDot(Var, Var, Arc<[(usize, usize)]>),
    SoftmaxXent {
        logits: Var,
        targets: Arc<[usize]>,
        probs: Tensor,
    },
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Per-parameter gradients keyed by parameter name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    grads: BTreeMap<String, Tensor>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.grads.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.grads.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.grads.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.grads.values().all(Tensor::is_finite)
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: a.shape(),
        rhs: b.shape(),
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, needs_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        self.nodes.push(Node { value, op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push("constant", value, Op::Constant, false)
    }

    /// Registers a trainable leaf. Names must be unique per tape.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor) -> Result<Var> {
        let name = name.into();
        if self.params.iter().any(|(n, _)| *n == name) {
            return Err(Error::InvalidArgument(alloc::format!("parameter {name} registered twice")));
        }
        let v = self.push("param", value, Op::Param, true)?;
        self.params.push((name, v));
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let g = self.needs(a) || self.needs(b);
        self.push("matmul", out, Op::MatMul(a, b), g)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(mismatch("add", x, y));
        }
        let mut out = x.clone();
        out.add_assign(y);
        let g = self.needs(a) || self.needs(b);
        self.push("add", out, Op::Add(a, b), g)
    }

    /// Adds a `1 x n` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (xv, rv) = (self.value(x), self.value(row));
        if rv.rows() != 1 || rv.cols() != xv.cols() {
            return Err(mismatch("add_row", xv, rv));
        }
        let mut out = xv.clone();
        let cols = out.cols();
        for chunk in out.data_mut().chunks_mut(cols.max(1)) {
            for (o, b) in chunk.iter_mut().zip(rv.data()) {
                *o += b;
            }
        }
        let g = self.needs(x) || self.needs(row);
        self.push("add_row", out, Op::AddRow(x, row), g)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(mismatch("mul", x, y));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let out = Tensor::from_vec(x.rows(), x.cols(), data)?;
        let g = self.needs(a) || self.needs(b);
        self.push("mul", out, Op::Mul(a, b), g)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let out = self.value(x).map(|v| v * c);
        let g = self.needs(x);
        self.push("scale", out, Op::Scale(x, c), g)
    }

    /// `1 - x`, elementwise.
    pub fn one_minus(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| 1.0 - v);
        let g = self.needs(x);
        self.push("one_minus", out, Op::OneMinus(x), g)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { 0.0 });
        let g = self.needs(x);
        self.push("relu", out, Op::Relu(x), g)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(sigmoid);
        let g = self.needs(x);
        self.push("sigmoid", out, Op::Sigmoid(x), g)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(libm::tanh);
        let g = self.needs(x);
        self.push("tanh", out, Op::Tanh(x), g)
    }

    /// Concatenates along columns; all parts must have the same row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(Error::Empty("concat_cols"))?;
        let rows = self.value(*first).rows();
        let mut cols = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows() != rows {
                return Err(mismatch("concat_cols", self.value(*first), t));
            }
            cols += t.cols();
        }
        let mut out = Tensor::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let t = self.value(p);
            for i in 0..rows {
                out.row_mut(i)[offset..offset + t.cols()].copy_from_slice(t.row(i));
            }
            offset += t.cols();
        }
        let g = parts.iter().any(|&p| self.needs(p));
        self.push("concat_cols", out, Op::ConcatCols(parts.to_vec()), g)
    }

    /// Multiplies row `i` of `x` by `scales[i]`.
    pub fn scale_rows(&mut self, x: Var, scales: Arc<[f64]>) -> Result<Var> {
        let xv = self.value(x);
        if scales.len() != xv.rows() {
            return Err(Error::ShapeMismatch {
                op: "scale_rows",
                lhs: xv.shape(),
                rhs: [scales.len(), 1],
            });
        }
        let mut out = xv.clone();
        for (i, &s) in scales.iter().enumerate() {
            out.row_mut(i).iter_mut().for_each(|v| *v *= s);
        }
        let g = self.needs(x);
        self.push("scale_rows", out, Op::ScaleRows(x, scales), g)
    }

    /// Inverted dropout: each entry is zeroed with probability `p` and the
    /// survivors are scaled by `1 / (1 - p)`. The identity when `training` is
    /// false or `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, training: bool, rng: &mut R) -> Result<Var> {
        check_drop_probability(p)?;
        if !training || p == 0.0 {
            return Ok(x);
        }
        let mask = dropout_mask(self.value(x).len(), p, rng)?;
        let xv = self.value(x);
        let data = xv.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Tensor::from_vec(xv.rows(), xv.cols(), data)?;
        let g = self.needs(x);
        self.push("dropout", out, Op::Dropout(x, mask), g)
    }

    /// Row `i` of the result is `sum_j w_ij * features[j]` over the neighbor
    /// list of `i`.
    pub fn gather_accumulate(&mut self, features: Var, lists: &Arc<NeighborLists>) -> Result<Var> {
        let fv = self.value(features);
        if let Some(m) = lists.max_index {
            if m >= fv.rows() {
                return Err(Error::IndexOutOfRange {
                    op: "gather_accumulate",
                    index: m,
                    len: fv.rows(),
                });
            }
        }
        let d = fv.cols();
        let mut out = Tensor::zeros(lists.rows(), d);
        for i in 0..lists.rows() {
            let dst = out.row_mut(i);
            for (j, w) in lists.row(i) {
                for (o, f) in dst.iter_mut().zip(fv.row(j)) {
                    *o += w * f;
                }
            }
        }
        let g = self.needs(features);
        self.push("gather_accumulate", out, Op::Gather(features, Arc::clone(lists)), g)
    }

    /// One dot product per pair: `out[e] = left[a_e] . right[b_e]`, as an
    /// `E x 1` column.
    pub fn row_dot(&mut self, left: Var, right: Var, pairs: &Arc<[(usize, usize)]>) -> Result<Var> {
        let (l, r) = (self.value(left), self.value(right));
        if l.cols() != r.cols() {
            return Err(mismatch("row_dot", l, r));
        }
        let mut out = Tensor::zeros(pairs.len(), 1);
        for (e, &(a, b)) in pairs.iter().enumerate() {
            if a >= l.rows() {
                return Err(Error::IndexOutOfRange {
                    op: "row_dot",
                    index: a,
                    len: l.rows(),
                });
            }
            if b >= r.rows() {
                return Err(Error::IndexOutOfRange {
                    op: "row_dot",
                    index: b,
                    len: r.rows(),
                });
            }
            out.data_mut()[e] = dot(l.row(a), r.row(b));
        }
        let g = self.needs(left) || self.needs(right);
        self.push("row_dot", out, Op::RowDot(left, right, Arc::clone(pairs)), g)
    }

    /// Mean negative log-likelihood of `targets` under a row-wise softmax of
    /// `logits`. The row-stochastic probabilities are cached on the node and
    /// available through [`Tape::probabilities`].
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &Arc<[usize]>) -> Result<Var> {
        let lv = self.value(logits);
        if !lv.is_finite() {
            return Err(Error::NonFinite("softmax_cross_entropy logits"));
        }
        if targets.len() != lv.rows() {
            return Err(Error::ShapeMismatch {
                op: "softmax_cross_entropy",
                lhs: lv.shape(),
                rhs: [targets.len(), 1],
            });
        }
        if targets.is_empty() {
            return Err(Error::Empty("softmax_cross_entropy targets"));
        }
        let mut probs = Tensor::zeros(lv.rows(), lv.cols());
        let mut nll = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            if t >= lv.cols() {
                return Err(Error::IndexOutOfRange {
                    op: "softmax_cross_entropy",
                    index: t,
                    len: lv.cols(),
                });
            }
            let row = lv.row(i);
            let lse = log_sum_exp(row);
            nll += lse - row[t];
            for (p, &z) in probs.row_mut(i).iter_mut().zip(row) {
                *p = libm::exp(z - lse);
            }
        }
        let loss = Tensor::scalar(nll / targets.len() as f64);
        let g = self.needs(logits);
        let op = Op::SoftmaxXent {
            logits,
            targets: Arc::clone(targets),
            probs,
        };
        self.push("softmax_cross_entropy", loss, op, g)
    }

    /// Cached probabilities of a softmax cross-entropy node.
    pub fn probabilities(&self, v: Var) -> Option<&Tensor> {
        match &self.nodes[v.0].op {
            Op::SoftmaxXent { probs, .. } => Some(probs),
            _ => None,
        }
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).sum());
        let g = self.needs(x);
        self.push("sum", out, Op::Sum(x), g)
    }

    /// Hash of the sign pattern of every ReLU output recorded so far. Two
    /// forward passes with equal signatures took the same linear piece.
    pub fn relu_signature(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for node in &self.nodes {
            if let Op::Relu(_) = node.op {
                for &v in node.value.data() {
                    h ^= u64::from(v > 0.0);
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }

    /// Reverse sweep from a `1 x 1` loss node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.shape() != [1, 1] {
            return Err(Error::NonScalarLoss(lv.shape()));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Constant => {}
                Op::Param => grads[idx] = Some(g),
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.needs(*a) {
                        let mut da = Tensor::zeros(av.rows(), av.cols());
                        gemm(&g, false, bv, true, &mut da, false);
                        accumulate(&mut grads, *a, da);
                    }
                    if self.needs(*b) {
                        let mut db = Tensor::zeros(bv.rows(), bv.cols());
                        gemm(av, true, &g, false, &mut db, false);
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, g);
                    }
                }
                Op::AddRow(x, row) => {
                    if self.needs(*row) {
                        let mut db = Tensor::zeros(1, g.cols());
                        for i in 0..g.rows() {
                            for (d, v) in db.data_mut().iter_mut().zip(g.row(i)) {
                                *d += v;
                            }
                        }
                        accumulate(&mut grads, *row, db);
                    }
                    if self.needs(*x) {
                        accumulate(&mut grads, *x, g);
                    }
                }
                Op::Mul(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, hadamard(&g, self.value(*b)));
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, hadamard(&g, self.value(*a)));
                    }
                }
                Op::Scale(x, c) => accumulate(&mut grads, *x, g.map(|v| v * c)),
                Op::OneMinus(x) => accumulate(&mut grads, *x, g.map(|v| -v)),
                Op::Relu(x) => {
                    let d = zip_map(&g, &node.value, |gv, y| if y > 0.0 { gv } else { 0.0 });
                    accumulate(&mut grads, *x, d);
                }
                Op::Sigmoid(x) => {
                    let d = zip_map(&g, &node.value, |gv, y| gv * y * (1.0 - y));
                    accumulate(&mut grads, *x, d);
                }
                Op::Tanh(x) => {
                    let d = zip_map(&g, &node.value, |gv, y| gv * (1.0 - y * y));
                    accumulate(&mut grads, *x, d);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let cols = self.value(p).cols();
                        if self.needs(p) {
                            let mut d = Tensor::zeros(g.rows(), cols);
                            for i in 0..g.rows() {
                                d.row_mut(i).copy_from_slice(&g.row(i)[offset..offset + cols]);
                            }
                            accumulate(&mut grads, p, d);
                        }
                        offset += cols;
                    }
                }
                Op::ScaleRows(x, scales) => {
                    let mut d = g;
                    for (i, &s) in scales.iter().enumerate() {
                        d.row_mut(i).iter_mut().for_each(|v| *v *= s);
                    }
                    accumulate(&mut grads, *x, d);
                }
                Op::Dropout(x, mask) => {
                    let mut d = g;
                    d.data_mut().iter_mut().zip(mask).for_each(|(v, m)| *v *= m);
                    accumulate(&mut grads, *x, d);
                }
                Op::Gather(features, lists) => {
                    let fv = self.value(*features);
                    let mut d = Tensor::zeros(fv.rows(), fv.cols());
                    for i in 0..lists.rows() {
                        let gi = g.row(i);
                        for (j, w) in lists.row(i) {
                            for (o, gv) in d.row_mut(j).iter_mut().zip(gi) {
                                *o += w * gv;
                            }
                        }
                    }
                    accumulate(&mut grads, *features, d);
                }
                Op::RowDot(left, right, pairs) => {
                    let (l, r) = (self.value(*left), self.value(*right));
                    let need_l = self.needs(*left);
                    let need_r = self.needs(*right);
                    let mut dl = Tensor::zeros(if need_l { l.rows() } else { 0 }, l.cols());
                    let mut dr = Tensor::zeros(if need_r { r.rows() } else { 0 }, r.cols());
                    for (e, &(a, b)) in pairs.iter().enumerate() {
                        let ge = g.data()[e];
                        if ge == 0.0 {
                            continue;
                        }
                        if need_l {
                            for (o, v) in dl.row_mut(a).iter_mut().zip(r.row(b)) {
                                *o += ge * v;
                            }
                        }
                        if need_r {
                            for (o, v) in dr.row_mut(b).iter_mut().zip(l.row(a)) {
                                *o += ge * v;
                            }
                        }
                    }
                    if need_l {
                        accumulate(&mut grads, *left, dl);
                    }
                    if need_r {
                        accumulate(&mut grads, *right, dr);
                    }
                }
                Op::SoftmaxXent { logits, targets, probs } => {
                    let scale = g.item() / targets.len() as f64;
                    let mut d = probs.clone();
                    for (i, &t) in targets.iter().enumerate() {
                        let row = d.row_mut(i);
                        row[t] -= 1.0;
                        row.iter_mut().for_each(|v| *v *= scale);
                    }
                    accumulate(&mut grads, *logits, d);
                }
                Op::Sum(x) => {
                    let xv = self.value(*x);
                    accumulate(&mut grads, *x, Tensor::filled(xv.rows(), xv.cols(), g.item()));
                }
            }
        }

        let mut out = Gradients::default();
        for (name, v) in &self.params {
            let shape = self.value(*v).shape();
            let g = grads
                .get_mut(v.0)
                .and_then(Option::take)
                .unwrap_or_else(|| Tensor::zeros(shape[0], shape[1]));
            if !g.is_finite() {
                return Err(Error::NonFinite("backward"));
            }
            out.grads.insert(name.clone(), g);
        }
        Ok(out)
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.rows(), a.cols(), data).expect("shapes agree")
}

fn hadamard(a: &Tensor, b: &Tensor) -> Tensor {
    zip_map(a, b, |x, y| x * y)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

pub fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + libm::log(row.iter().map(|&z| libm::exp(z - m)).sum::<f64>())
}

fn check_drop_probability(p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidArgument(alloc::format!("dropout probability {p} outside [0, 1)")));
    }
    Ok(())
}

/// Inverted-dropout multipliers: `0` with probability `p`, else `1 / (1 - p)`.
pub fn dropout_mask<R: Rng + ?Sized>(n: usize, p: f64, rng: &mut R) -> Result<Vec<f64>> {
    check_drop_probability(p)?;
    let keep = 1.0 / (1.0 - p);
    Ok((0..n)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect())
}
