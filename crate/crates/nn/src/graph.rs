//! Tape-based reverse-mode differentiation over 2-D tensors.
//!
//! A [`Graph`] is built fresh for every forward pass. Nodes are appended in
//! evaluation order, so walking the tape backwards visits every node after
//! all of its consumers.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{NnError, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{matmul_acc, Real, Tensor};

const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mask {
    None,
    /// Query row `i` may only attend to key columns `j <= i`.
    Causal,
}

enum Op<T> {
    Leaf,
    Param,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Sigmoid(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor<T>,
        inv_std: Vec<T>,
    },
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    MeanRows(Var),
    Transpose(Var),
    Reshape(Var),
    Gather(Var, Vec<usize>),
    Unfold(Var, usize),
    RepeatRows(Var, usize),
    SumAll(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Tensor<T>,
    },
    Huber {
        pred: Var,
        target: Tensor<T>,
        delta: T,
    },
}

struct Node<T> {
    value: Arc<Tensor<T>>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
    grads: Vec<Option<Tensor<T>>>,
    track_params: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(op: &'static str, a: [usize; 2], b: [usize; 2]) -> NnError {
    NnError::ShapeMismatch {
        op,
        left: a.to_vec(),
        right: b.to_vec(),
    }
}

impl<T: Real> Graph<T> {
    /// Graph whose parameters receive gradients.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            grads: Vec::new(),
            track_params: true,
        }
    }

    /// Graph for inference: parameters are imported without gradients.
    pub fn inference() -> Self {
        Self {
            track_params: false,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.push_arc(Arc::new(value), op, needs_grad)
    }

    fn push_arc(&mut self, value: Arc<Tensor<T>>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    /// A constant input; no gradient flows into it.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push_arc(Arc::new(t), Op::Leaf, false)
    }

    /// A constant that shares storage with the caller.
    pub fn constant_shared(&mut self, t: Arc<Tensor<T>>) -> Var {
        self.push_arc(t, Op::Leaf, false)
    }

    /// A leaf input that collects a gradient (used by gradient checks).
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push_arc(Arc::new(t), Op::Leaf, true)
    }

    /// Imports a parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push_arc(store.shared(id), Op::Param, self.track_params);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = Tensor::matmul(self.value(a), false, self.value(b), false)?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = Tensor::matmul(self.value(a), false, self.value(b), true)?;
        Ok(self.push(out, Op::MatMulNt(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(mismatch("add", sa, sb));
        }
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    /// Adds a `1 × n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (sa, sr) = (self.shape(a), self.shape(row));
        if sr != [1, sa[1]] {
            return Err(mismatch("add_row", sa, sr));
        }
        let mut out = self.value(a).clone();
        let r = self.value(row).data().to_vec();
        for i in 0..sa[0] {
            for (o, &b) in out.row_mut(i).iter_mut().zip(&r) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddRow(a, row), &[a, row]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(mismatch("mul", sa, sb));
        }
        let mut out = self.value(a).clone();
        for (o, &v) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o *= v;
        }
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).map(|v| v * s);
        self.push(out, Op::Scale(a, s), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.max(T::zero()));
        self.push(out, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a), &[a])
    }

    /// Row-wise softmax, optionally with a causal mask.
    pub fn softmax_rows(&mut self, a: Var, mask: Mask) -> Var {
        let x = self.value(a);
        let mut out = Tensor::zeros(x.rows(), x.cols());
        for r in 0..x.rows() {
            let limit = match mask {
                Mask::None => x.cols(),
                Mask::Causal => (r + 1).min(x.cols()),
            };
            softmax_into(&x.row(r)[..limit], &mut out.row_mut(r)[..limit]);
        }
        self.push(out, Op::Softmax(a), &[a])
    }

    /// Normalizes each row to zero mean and unit variance, then applies the
    /// `1 × n` affine parameters.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let sx = self.shape(x);
        for p in [gamma, beta] {
            let sp = self.shape(p);
            if sp != [1, sx[1]] {
                return Err(mismatch("layer_norm", sx, sp));
            }
        }
        let n = T::from_usize(sx[1]).expect("usize fits");
        let eps = T::from_f64_lossy(LAYER_NORM_EPS);
        let xv = self.value(x);
        let mut xhat = Tensor::zeros(sx[0], sx[1]);
        let mut inv_std = Vec::with_capacity(sx[0]);
        for r in 0..sx[0] {
            let row = xv.row(r);
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let is = T::one() / (var + eps).sqrt();
            for (o, &v) in xhat.row_mut(r).iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
            inv_std.push(is);
        }
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut out = xhat.clone();
        for r in 0..sx[0] {
            for (c, o) in out.row_mut(r).iter_mut().enumerate() {
                *o = *o * g[c] + b[c];
            }
        }
        let op = Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
        };
        Ok(self.push(out, op, &[x, gamma, beta]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.shape(parts[0])[0];
        let mut cols = 0;
        for &p in parts {
            let s = self.shape(p);
            if s[0] != rows {
                return Err(mismatch("concat_cols", [rows, cols], s));
            }
            cols += s[1];
        }
        let mut out = Tensor::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let v = self.value(p);
            for r in 0..rows {
                out.row_mut(r)[offset..offset + v.cols()].copy_from_slice(v.row(r));
            }
            offset += v.cols();
        }
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x);
        if start + len > s[1] {
            return Err(mismatch("slice_cols", s, [start, len]));
        }
        let v = self.value(x);
        let out = Tensor::from_fn(s[0], len, |r, c| v.get(r, start + c));
        Ok(self.push(out, Op::SliceCols(x, start), &[x]))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.shape(parts[0])[1];
        let mut out = Tensor::zeros(0, cols);
        for &p in parts {
            out.push_rows(self.value(p))?;
        }
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), parts))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x);
        if start + len > s[0] {
            return Err(mismatch("slice_rows", s, [start, len]));
        }
        let out = self.value(x).slice_rows(start, len);
        Ok(self.push(out, Op::SliceRows(x, start), &[x]))
    }

    /// Mean over rows: `[r × c] → [1 × c]`.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let mut out = v.col_sums();
        out.scale_assign(T::one() / T::from_usize(v.rows()).expect("usize fits"));
        self.push(out, Op::MeanRows(x), &[x])
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let out = self.value(x).transpose();
        self.push(out, Op::Transpose(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let out = self.value(x).clone().reshaped(rows, cols)?;
        Ok(self.push(out, Op::Reshape(x), &[x]))
    }

    /// Embedding lookup: row `i` of the output is row `ids[i]` of `table`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= t.rows()) {
            return Err(NnError::IndexOutOfRange {
                what: "embedding table",
                index: bad,
                size: t.rows(),
            });
        }
        let mut out = Tensor::zeros(ids.len(), t.cols());
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).copy_from_slice(t.row(id));
        }
        Ok(self.push(out, Op::Gather(table, ids.to_vec()), &[table]))
    }

    /// Sliding windows of `k` rows with zero padding so the row count is
    /// preserved: output row `i` concatenates input rows `i - k/2 .. i + k/2`.
    pub fn unfold_rows(&mut self, x: Var, k: usize) -> Var {
        let v = self.value(x);
        let (rows, cols) = (v.rows(), v.cols());
        let half = (k / 2) as isize;
        let mut out = Tensor::zeros(rows, k * cols);
        for r in 0..rows {
            for j in 0..k {
                let src = r as isize + j as isize - half;
                if src >= 0 && (src as usize) < rows {
                    out.row_mut(r)[j * cols..(j + 1) * cols].copy_from_slice(v.row(src as usize));
                }
            }
        }
        self.push(out, Op::Unfold(x, k), &[x])
    }

    /// Nearest-neighbour upsampling along rows.
    pub fn repeat_rows(&mut self, x: Var, factor: usize) -> Var {
        let v = self.value(x);
        let mut out = Tensor::zeros(v.rows() * factor, v.cols());
        for r in 0..out.rows() {
            out.row_mut(r).copy_from_slice(v.row(r / factor));
        }
        self.push(out, Op::RepeatRows(x, factor), &[x])
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::full(1, 1, s), Op::SumAll(x), &[x])
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `logits`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let l = self.value(logits);
        if targets.len() != l.rows() {
            return Err(mismatch("cross_entropy", l.shape(), [targets.len(), 1]));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= l.cols()) {
            return Err(NnError::IndexOutOfRange {
                what: "class",
                index: bad,
                size: l.cols(),
            });
        }
        let mut probs = Tensor::zeros(l.rows(), l.cols());
        let mut total = T::zero();
        for (r, &t) in targets.iter().enumerate() {
            let row = l.row(r);
            let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
            total += lse - row[t];
            for (p, &v) in probs.row_mut(r).iter_mut().zip(row) {
                *p = (v - lse).exp();
            }
        }
        let n = T::from_usize(targets.len().max(1)).expect("usize fits");
        let op = Op::CrossEntropy {
            logits,
            targets: targets.to_vec(),
            probs,
        };
        Ok(self.push(Tensor::full(1, 1, total / n), op, &[logits]))
    }

    /// Mean Huber loss against a constant target.
    pub fn huber(&mut self, pred: Var, target: &Tensor<T>, delta: T) -> Result<Var> {
        let p = self.value(pred);
        if p.shape() != target.shape() {
            return Err(mismatch("huber", p.shape(), target.shape()));
        }
        let total: T = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(&a, &b)| huber(a - b, delta))
            .sum();
        let n = T::from_usize(p.len().max(1)).expect("usize fits");
        let op = Op::Huber {
            pred,
            target: target.clone(),
            delta,
        };
        Ok(self.push(Tensor::full(1, 1, total / n), op, &[pred]))
    }

    /// Runs reverse accumulation from a scalar node.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let s = self.shape(loss);
        if s != [1, 1] {
            return Err(mismatch("backward", s, [1, 1]));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(Tensor::full(1, 1, T::one()));
        for i in (0..=loss.0).rev() {
            let Some(grad) = self.grads[i].take() else {
                continue;
            };
            if !self.nodes[i].needs_grad {
                continue;
            }
            self.backprop_node(i, &grad);
            if matches!(self.nodes[i].op, Op::Leaf | Op::Param) {
                self.grads[i] = Some(grad);
            }
        }
        Ok(())
    }

    /// Gradient of a leaf or parameter after [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Moves out the gradients of every imported parameter.
    pub fn take_param_grads(&mut self) -> Vec<(ParamId, Tensor<T>)> {
        let mut out: Vec<_> = self
            .params
            .iter()
            .filter_map(|(&id, v)| self.grads.get_mut(v.0)?.take().map(|g| (id, g)))
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }

    fn accumulate(&mut self, v: Var, f: impl FnOnce(&mut Tensor<T>)) {
        let node = &self.nodes[v.0];
        if !node.needs_grad {
            return;
        }
        let [rows, cols] = node.value.shape();
        f(self.grads[v.0].get_or_insert_with(|| Tensor::zeros(rows, cols)));
    }

    fn backprop_node(&mut self, i: usize, g: &Tensor<T>) {
        let out = Arc::clone(&self.nodes[i].value);
        // Ops are moved out temporarily to avoid borrowing `self.nodes`
        // while accumulating into `self.grads`.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let bv = Arc::clone(&self.nodes[b.0].value);
                let av = Arc::clone(&self.nodes[a.0].value);
                self.accumulate(*a, |ga| matmul_acc(g, false, &bv, true, ga));
                self.accumulate(*b, |gb| matmul_acc(&av, true, g, false, gb));
            }
            Op::MatMulNt(a, b) => {
                let bv = Arc::clone(&self.nodes[b.0].value);
                let av = Arc::clone(&self.nodes[a.0].value);
                self.accumulate(*a, |ga| matmul_acc(g, false, &bv, false, ga));
                self.accumulate(*b, |gb| matmul_acc(g, true, &av, false, gb));
            }
            Op::Add(a, b) => {
                self.accumulate(*a, |ga| ga.add_assign(g));
                self.accumulate(*b, |gb| gb.add_assign(g));
            }
            Op::AddRow(a, row) => {
                self.accumulate(*a, |ga| ga.add_assign(g));
                self.accumulate(*row, |gr| gr.add_assign(&g.col_sums()));
            }
            Op::Mul(a, b) => {
                let bv = Arc::clone(&self.nodes[b.0].value);
                self.accumulate(*a, |ga| {
                    for ((o, &d), &y) in ga.data_mut().iter_mut().zip(g.data()).zip(bv.data()) {
                        *o += d * y;
                    }
                });
                let av = Arc::clone(&self.nodes[a.0].value);
                self.accumulate(*b, |gb| {
                    for ((o, &d), &x) in gb.data_mut().iter_mut().zip(g.data()).zip(av.data()) {
                        *o += d * x;
                    }
                });
            }
            Op::Scale(a, s) => {
                let s = *s;
                self.accumulate(*a, |ga| {
                    for (o, &d) in ga.data_mut().iter_mut().zip(g.data()) {
                        *o += d * s;
                    }
                });
            }
            Op::Relu(a) => {
                self.accumulate(*a, |ga| {
                    for ((o, &d), &y) in ga.data_mut().iter_mut().zip(g.data()).zip(out.data()) {
                        if y > T::zero() {
                            *o += d;
                        }
                    }
                });
            }
            Op::Sigmoid(a) => {
                self.accumulate(*a, |ga| {
                    for ((o, &d), &y) in ga.data_mut().iter_mut().zip(g.data()).zip(out.data()) {
                        *o += d * y * (T::one() - y);
                    }
                });
            }
            Op::Softmax(a) => {
                self.accumulate(*a, |ga| {
                    for r in 0..out.rows() {
                        let y = out.row(r);
                        let d = g.row(r);
                        let dot: T = y.iter().zip(d).map(|(&a, &b)| a * b).sum();
                        for ((o, &yi), &di) in ga.row_mut(r).iter_mut().zip(y).zip(d) {
                            *o += yi * (di - dot);
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let gv = Arc::clone(&self.nodes[gamma.0].value);
                self.accumulate(*beta, |gb| gb.add_assign(&g.col_sums()));
                self.accumulate(*gamma, |gg| {
                    for r in 0..g.rows() {
                        for ((o, &d), &h) in gg.data_mut().iter_mut().zip(g.row(r)).zip(xhat.row(r)) {
                            *o += d * h;
                        }
                    }
                });
                self.accumulate(*x, |gx| {
                    let n = T::from_usize(g.cols()).expect("usize fits");
                    let mut dxhat = vec![T::zero(); g.cols()];
                    for r in 0..g.rows() {
                        for ((dh, &d), &gam) in dxhat.iter_mut().zip(g.row(r)).zip(gv.data()) {
                            *dh = d * gam;
                        }
                        let h = xhat.row(r);
                        let sum_d: T = dxhat.iter().copied().sum();
                        let sum_dh: T = dxhat.iter().zip(h).map(|(&a, &b)| a * b).sum();
                        let scale = inv_std[r] / n;
                        for ((o, &dh), &hv) in gx.row_mut(r).iter_mut().zip(&dxhat).zip(h) {
                            *o += scale * (n * dh - sum_d - hv * sum_dh);
                        }
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.shape(p)[1];
                    self.accumulate(p, |gp| {
                        for r in 0..g.rows() {
                            for (o, &d) in gp.row_mut(r).iter_mut().zip(&g.row(r)[offset..offset + w]) {
                                *o += d;
                            }
                        }
                    });
                    offset += w;
                }
            }
            Op::SliceCols(x, start) => {
                let start = *start;
                self.accumulate(*x, |gx| {
                    for r in 0..g.rows() {
                        for (o, &d) in gx.row_mut(r)[start..start + g.cols()].iter_mut().zip(g.row(r)) {
                            *o += d;
                        }
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let h = self.shape(p)[0];
                    self.accumulate(p, |gp| gp.add_assign(&g.slice_rows(offset, h)));
                    offset += h;
                }
            }
            Op::SliceRows(x, start) => {
                let start = *start;
                self.accumulate(*x, |gx| {
                    let c = g.cols();
                    for (o, &d) in gx.data_mut()[start * c..(start + g.rows()) * c].iter_mut().zip(g.data()) {
                        *o += d;
                    }
                });
            }
            Op::MeanRows(x) => {
                self.accumulate(*x, |gx| {
                    let inv = T::one() / T::from_usize(gx.rows()).expect("usize fits");
                    for r in 0..gx.rows() {
                        for (o, &d) in gx.row_mut(r).iter_mut().zip(g.data()) {
                            *o += d * inv;
                        }
                    }
                });
            }
            Op::Transpose(x) => {
                self.accumulate(*x, |gx| gx.add_assign(&g.transpose()));
            }
            Op::Reshape(x) => {
                self.accumulate(*x, |gx| {
                    for (o, &d) in gx.data_mut().iter_mut().zip(g.data()) {
                        *o += d;
                    }
                });
            }
            Op::Gather(table, ids) => {
                self.accumulate(*table, |gt| {
                    for (r, &id) in ids.iter().enumerate() {
                        for (o, &d) in gt.row_mut(id).iter_mut().zip(g.row(r)) {
                            *o += d;
                        }
                    }
                });
            }
            Op::Unfold(x, k) => {
                let k = *k;
                self.accumulate(*x, |gx| {
                    let (rows, cols) = (gx.rows(), gx.cols());
                    let half = (k / 2) as isize;
                    for r in 0..rows {
                        for j in 0..k {
                            let src = r as isize + j as isize - half;
                            if src >= 0 && (src as usize) < rows {
                                let d = &g.row(r)[j * cols..(j + 1) * cols];
                                for (o, &v) in gx.row_mut(src as usize).iter_mut().zip(d) {
                                    *o += v;
                                }
                            }
                        }
                    }
                });
            }
            Op::RepeatRows(x, factor) => {
                let factor = *factor;
                self.accumulate(*x, |gx| {
                    for r in 0..g.rows() {
                        for (o, &d) in gx.row_mut(r / factor).iter_mut().zip(g.row(r)) {
                            *o += d;
                        }
                    }
                });
            }
            Op::SumAll(x) => {
                let d = g.data()[0];
                self.accumulate(*x, |gx| {
                    for o in gx.data_mut() {
                        *o += d;
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let d = g.data()[0] / T::from_usize(targets.len().max(1)).expect("usize fits");
                self.accumulate(*logits, |gl| {
                    for (r, &t) in targets.iter().enumerate() {
                        for (c, (o, &p)) in gl.row_mut(r).iter_mut().zip(probs.row(r)).enumerate() {
                            let onehot = if c == t { T::one() } else { T::zero() };
                            *o += d * (p - onehot);
                        }
                    }
                });
            }
            Op::Huber {
                pred,
                target,
                delta,
            } => {
                let delta = *delta;
                let pv = Arc::clone(&self.nodes[pred.0].value);
                let d = g.data()[0] / T::from_usize(pv.len().max(1)).expect("usize fits");
                self.accumulate(*pred, |gp| {
                    for ((o, &p), &t) in gp.data_mut().iter_mut().zip(pv.data()).zip(target.data()) {
                        *o += d * huber_grad(p - t, delta);
                    }
                });
            }
        }
        self.nodes[i].op = op;
    }
}

pub(crate) fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softmax_into<T: Real>(x: &[T], out: &mut [T]) {
    let max = x.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut total = T::zero();
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// Huber penalty: quadratic inside `delta`, linear outside.
pub fn huber<T: Real>(e: T, delta: T) -> T {
    let a = e.abs();
    let half = T::from_f64_lossy(0.5);
    if a <= delta {
        half * e * e
    } else {
        delta * (a - half * delta)
    }
}

fn huber_grad<T: Real>(e: T, delta: T) -> T {
    if e.abs() <= delta {
        e
    } else {
        delta * e.signum()
    }
}
