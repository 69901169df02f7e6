use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Deref, DerefMut};

use super::{Gradients, ParamId, ParamStore, Real, Tensor};
use crate::{Error, Result};

/// Handle of a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<F> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Affine { x: Var, w: Var, b: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    Gelu(Var),
    Tanh(Var),
    Sigmoid(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<F>, rstd: Vec<F> },
    Attention { q: Var, k: Var, v: Var, heads: usize, probs: Vec<F> },
    Softmax(Var),
    LogSumExp(Var),
    Dot(Var, Var),
    Sum(Var),
    Element { x: Var, index: usize },
    Row { x: Var, index: usize },
    Reshape(Var),
    SliceCols { x: Var, start: usize, len: usize },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    Gather { table: Var, ids: Vec<usize> },
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<F> },
}

#[derive(Debug, Clone)]
struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    needs_grad: bool,
}

/// Record of forward operations in topological order.
///
/// Nodes are appended as operations execute, so the node index order is a
/// topological order and backward simply walks it in reverse.
#[derive(Debug, Clone, Default)]
pub struct Tape<F> {
    nodes: Vec<Node<F>>,
}

const LN_EPS: f64 = 1e-5;

fn gelu_parts<F: Real>(x: F) -> (F, F) {
    let c = F::c(0.797_884_560_802_865_4);
    let a = F::c(0.044_715);
    let half = F::c(0.5);
    let inner = c * (x + a * x * x * x);
    let t = inner.tanh();
    let y = half * x * (F::one() + t);
    let dinner = c * (F::one() + F::c(3.0) * a * x * x);
    let dy = half * (F::one() + t) + half * x * (F::one() - t * t) * dinner;
    (y, dy)
}

fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> F {
        self.nodes[v.0].value.item()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn constant(&mut self, t: Tensor<F>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn scalar(&mut self, x: F) -> Var {
        self.constant(Tensor::scalar(x))
    }

    pub fn vector(&mut self, x: Vec<F>) -> Var {
        self.constant(Tensor::vector(x))
    }

    /// Records a parameter snapshot. Prefer [`Ctx::param`], which binds each
    /// parameter once per tape.
    pub fn param_node(&mut self, id: ParamId, value: Tensor<F>) -> Var {
        self.push(value, Op::Param(id), true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(bv.shape().len(), 2, "matmul rhs must be a matrix");
        let (r, k, c) = (av.rows(), av.cols(), bv.cols());
        assert_eq!(k, bv.rows(), "matmul inner dimensions {:?} x {:?}", av.shape(), bv.shape());
        let mut out = vec![F::zero(); r * c];
        matmul_into(av.data(), bv.data(), &mut out, r, k, c);
        let shape = if av.shape().len() == 2 { vec![r, c] } else { vec![c] };
        let ng = self.ng(a) || self.ng(b);
        self.push(Tensor::new(shape, out).unwrap(), Op::MatMul(a, b), ng)
    }

    /// `a · bᵀ` for `a: [r, k]` (or `[k]`) and `b: [c, k]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(bv.shape().len(), 2, "matmul_nt rhs must be a matrix");
        let (r, k, c) = (av.rows(), av.cols(), bv.rows());
        assert_eq!(k, bv.cols(), "matmul_nt inner dimensions {:?} x {:?}ᵀ", av.shape(), bv.shape());
        let mut out = vec![F::zero(); r * c];
        matmul_bt_into(av.data(), bv.data(), &mut out, r, k, c);
        let shape = if av.shape().len() == 2 { vec![r, c] } else { vec![c] };
        let ng = self.ng(a) || self.ng(b);
        self.push(Tensor::new(shape, out).unwrap(), Op::MatMulNT(a, b), ng)
    }

    /// `x · w + b` with `b` broadcast over rows.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let (r, k, c) = (xv.rows(), xv.cols(), wv.cols());
        assert_eq!(k, wv.rows(), "affine input {:?} weight {:?}", xv.shape(), wv.shape());
        assert_eq!(bv.numel(), c, "affine bias");
        let mut out = Vec::with_capacity(r * c);
        for _ in 0..r {
            out.extend_from_slice(bv.data());
        }
        matmul_into(xv.data(), wv.data(), &mut out, r, k, c);
        let shape = if xv.shape().len() == 2 { vec![r, c] } else { vec![c] };
        let ng = self.ng(x) || self.ng(w) || self.ng(b);
        self.push(Tensor::new(shape, out).unwrap(), Op::Affine { x, w, b }, ng)
    }

    fn zip_op(&mut self, a: Var, b: Var, f: impl Fn(F, F) -> F, op: Op<F>) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.numel(), bv.numel(), "elementwise {:?} vs {:?}", av.shape(), bv.shape());
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let shape = av.shape().to_vec();
        let ng = self.ng(a) || self.ng(b);
        self.push(Tensor::new(shape, data).unwrap(), op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_op(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_op(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_op(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Sum of several same-shape values, added left to right.
    pub fn add_all(&mut self, xs: &[Var]) -> Var {
        let mut acc = xs[0];
        for &x in &xs[1..] {
            acc = self.add(acc, x);
        }
        acc
    }

    fn map_op(&mut self, x: Var, f: impl Fn(F) -> F, op: Op<F>) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| f(v)).collect();
        let shape = xv.shape().to_vec();
        let ng = self.ng(x);
        self.push(Tensor::new(shape, data).unwrap(), op, ng)
    }

    pub fn scale(&mut self, x: Var, s: F) -> Var {
        self.map_op(x, |v| v * s, Op::Scale(x, s))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        self.map_op(x, |v| gelu_parts(v).0, Op::Gelu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map_op(x, |v| v.tanh(), Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map_op(x, sigmoid, Op::Sigmoid(x))
    }

    /// Row-wise layer normalization over the last dimension.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let (r, c) = (xv.rows(), xv.cols());
        assert_eq!(gv.numel(), c);
        assert_eq!(bv.numel(), c);
        let n = F::c(c as f64);
        let mut out = vec![F::zero(); r * c];
        let mut xhat = vec![F::zero(); r * c];
        let mut rstd = vec![F::zero(); r];
        for i in 0..r {
            let row = xv.row(i);
            let mut mean = F::zero();
            for &v in row {
                mean += v;
            }
            mean /= n;
            let mut var = F::zero();
            for &v in row {
                var += (v - mean) * (v - mean);
            }
            var /= n;
            let rs = F::one() / (var + F::c(LN_EPS)).sqrt();
            rstd[i] = rs;
            for j in 0..c {
                let h = (row[j] - mean) * rs;
                xhat[i * c + j] = h;
                out[i * c + j] = h * gv.data()[j] + bv.data()[j];
            }
        }
        let shape = xv.shape().to_vec();
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        self.push(Tensor::new(shape, out).unwrap(), Op::LayerNorm { x, gamma, beta, xhat, rstd }, ng)
    }

    /// Scaled dot-product attention with `heads` heads over the column axis.
    /// `q` is `[tq, d]` (or `[d]`), `k` and `v` are `[tk, d]`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (tq, d, tk) = (qv.rows(), qv.cols(), kv.rows());
        assert_eq!(kv.cols(), d);
        assert_eq!(vv.cols(), d);
        assert_eq!(vv.rows(), tk);
        assert_eq!(d % heads, 0, "dim {d} not divisible by {heads} heads");
        let dh = d / heads;
        let scale = F::one() / F::c(dh as f64).sqrt();
        let mut probs = vec![F::zero(); heads * tq * tk];
        let mut out = vec![F::zero(); tq * d];
        let mut scores = vec![F::zero(); tk];
        for h in 0..heads {
            let off = h * dh;
            for i in 0..tq {
                let qi = &qv.data()[i * d + off..i * d + off + dh];
                let mut max = F::neg_infinity();
                for (j, s) in scores.iter_mut().enumerate() {
                    let kj = &kv.data()[j * d + off..j * d + off + dh];
                    let mut acc = F::zero();
                    for t in 0..dh {
                        acc += qi[t] * kj[t];
                    }
                    *s = acc * scale;
                    max = max.max(*s);
                }
                let mut total = F::zero();
                for s in scores.iter_mut() {
                    *s = (*s - max).exp();
                    total += *s;
                }
                let p = &mut probs[(h * tq + i) * tk..(h * tq + i + 1) * tk];
                for (pj, s) in p.iter_mut().zip(&scores) {
                    *pj = *s / total;
                }
                let o = &mut out[i * d + off..i * d + off + dh];
                for (j, &pj) in p.iter().enumerate() {
                    let vj = &vv.data()[j * d + off..j * d + off + dh];
                    for t in 0..dh {
                        o[t] += pj * vj[t];
                    }
                }
            }
        }
        let shape = qv.shape().to_vec();
        let ng = self.ng(q) || self.ng(k) || self.ng(v);
        self.push(Tensor::new(shape, out).unwrap(), Op::Attention { q, k, v, heads, probs }, ng)
    }

    /// Row-wise softmax. `-inf` entries receive zero weight.
    pub fn softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (r, c) = (xv.rows(), xv.cols());
        let mut out = vec![F::zero(); r * c];
        for i in 0..r {
            let row = xv.row(i);
            let max = row.iter().copied().fold(F::neg_infinity(), F::max);
            let mut total = F::zero();
            for j in 0..c {
                let e = (row[j] - max).exp();
                out[i * c + j] = e;
                total += e;
            }
            for j in 0..c {
                out[i * c + j] /= total;
            }
        }
        let shape = xv.shape().to_vec();
        let ng = self.ng(x);
        self.push(Tensor::new(shape, out).unwrap(), Op::Softmax(x), ng)
    }

    /// Log-sum-exp over all elements.
    pub fn log_sum_exp(&mut self, x: Var) -> Var {
        let out = super::log_sum_exp_slice(self.value(x).data());
        let ng = self.ng(x);
        self.push(Tensor::scalar(out), Op::LogSumExp(x), ng)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.numel(), bv.numel());
        let mut acc = F::zero();
        for (&x, &y) in av.data().iter().zip(bv.data()) {
            acc += x * y;
        }
        let ng = self.ng(a) || self.ng(b);
        self.push(Tensor::scalar(acc), Op::Dot(a, b), ng)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let mut acc = F::zero();
        for &v in self.value(x).data() {
            acc += v;
        }
        let ng = self.ng(x);
        self.push(Tensor::scalar(acc), Op::Sum(x), ng)
    }

    /// Flat element `index` as a scalar.
    pub fn element(&mut self, x: Var, index: usize) -> Var {
        let v = self.value(x).data()[index];
        let ng = self.ng(x);
        self.push(Tensor::scalar(v), Op::Element { x, index }, ng)
    }

    pub fn row(&mut self, x: Var, index: usize) -> Var {
        let v = self.value(x).row(index).to_vec();
        let ng = self.ng(x);
        self.push(Tensor::vector(v), Op::Row { x, index }, ng)
    }

    /// Same data under a new shape.
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let data = self.value(x).data().to_vec();
        let ng = self.ng(x);
        self.push(Tensor::new(shape.to_vec(), data).unwrap(), Op::Reshape(x), ng)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = self.value(x);
        let (r, c) = (xv.rows(), xv.cols());
        assert!(start + len <= c);
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&xv.row(i)[start..start + len]);
        }
        let shape = if xv.shape().len() == 2 { vec![r, len] } else { vec![len] };
        let ng = self.ng(x);
        self.push(Tensor::new(shape, data).unwrap(), Op::SliceCols { x, start, len }, ng)
    }

    /// Stacks vectors / matrices with equal column counts into a matrix.
    pub fn concat_rows(&mut self, xs: &[Var]) -> Var {
        let c = self.value(xs[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &x in xs {
            let xv = self.value(x);
            assert_eq!(xv.cols(), c, "concat_rows column mismatch");
            data.extend_from_slice(xv.data());
            rows += xv.rows();
        }
        let ng = xs.iter().any(|&x| self.ng(x));
        self.push(Tensor::new(vec![rows, c], data).unwrap(), Op::ConcatRows(xs.to_vec()), ng)
    }

    /// Concatenates along the last axis. Scalars count as one column; the
    /// result is a vector unless some input is a matrix.
    pub fn concat_cols(&mut self, xs: &[Var]) -> Var {
        let r = self.value(xs[0]).rows();
        let matrix = xs.iter().any(|&x| self.value(x).shape().len() == 2);
        let total: usize = xs.iter().map(|&x| self.value(x).cols()).sum();
        let mut data = vec![F::zero(); r * total];
        let mut off = 0;
        for &x in xs {
            let xv = self.value(x);
            assert_eq!(xv.rows(), r, "concat_cols row mismatch");
            let c = xv.cols();
            for i in 0..r {
                data[i * total + off..i * total + off + c].copy_from_slice(xv.row(i));
            }
            off += c;
        }
        let shape = if matrix { vec![r, total] } else { vec![total] };
        let ng = xs.iter().any(|&x| self.ng(x));
        self.push(Tensor::new(shape, data).unwrap(), Op::ConcatCols(xs.to_vec()), ng)
    }

    /// Rows `ids` of a `[V, d]` table as a `[len, d]` matrix.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let tv = self.value(table);
        let d = tv.cols();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            data.extend_from_slice(tv.row(id));
        }
        let ng = self.ng(table);
        self.push(Tensor::new(vec![ids.len(), d], data).unwrap(), Op::Gather { table, ids: ids.to_vec() }, ng)
    }

    /// Summed cross-entropy of each logits row against its target id.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let lv = self.value(logits);
        let (r, c) = (lv.rows(), lv.cols());
        assert_eq!(r, targets.len());
        let mut probs = vec![F::zero(); r * c];
        let mut loss = F::zero();
        for i in 0..r {
            let row = lv.row(i);
            let lse = super::log_sum_exp_slice(row);
            for j in 0..c {
                probs[i * c + j] = (row[j] - lse).exp();
            }
            loss += lse - row[targets[i]];
        }
        let ng = self.ng(logits);
        self.push(Tensor::scalar(loss), Op::CrossEntropy { logits, targets: targets.to_vec(), probs }, ng)
    }

    /// Reverse-mode pass from scalar `loss`; parameter gradients are added
    /// into `grads`.
    pub fn backward(&self, loss: Var, grads: &mut Gradients<F>) -> Result<()> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::Shape(format!("loss must be scalar, got {:?}", lv.shape())));
        }
        if !lv.item().is_finite() {
            return Err(Error::NonFinite(format!("loss = {}", lv.item())));
        }
        let mut g: Vec<Option<Vec<F>>> = vec![None; loss.0 + 1];
        g[loss.0] = Some(vec![F::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let gi = match g[i].take() {
                Some(v) => v,
                None => continue,
            };
            self.backward_node(node, &gi, &mut g, grads);
        }
        Ok(())
    }

    fn acc<'g>(&self, g: &'g mut [Option<Vec<F>>], v: Var) -> Option<&'g mut Vec<F>> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let n = self.nodes[v.0].value.numel();
        Some(g[v.0].get_or_insert_with(|| vec![F::zero(); n]))
    }

    fn backward_node(&self, node: &Node<F>, gi: &[F], g: &mut [Option<Vec<F>>], grads: &mut Gradients<F>) {
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => {
                for (dst, &src) in grads.values[id.0].iter_mut().zip(gi) {
                    *dst += src;
                }
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (r, k, c) = (av.rows(), av.cols(), bv.cols());
                if let Some(da) = self.acc(g, *a) {
                    matmul_bt_into(gi, bv.data(), da, r, c, k);
                }
                if let Some(db) = self.acc(g, *b) {
                    matmul_at_into(av.data(), gi, db, r, k, c);
                }
            }
            Op::MatMulNT(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (r, k, c) = (av.rows(), av.cols(), bv.rows());
                if let Some(da) = self.acc(g, *a) {
                    matmul_into(gi, bv.data(), da, r, c, k);
                }
                if let Some(db) = self.acc(g, *b) {
                    matmul_at_into(gi, av.data(), db, r, c, k);
                }
            }
            Op::Affine { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (r, k, c) = (xv.rows(), xv.cols(), wv.cols());
                if let Some(dx) = self.acc(g, *x) {
                    matmul_bt_into(gi, wv.data(), dx, r, c, k);
                }
                if let Some(dw) = self.acc(g, *w) {
                    matmul_at_into(xv.data(), gi, dw, r, k, c);
                }
                if let Some(db) = self.acc(g, *b) {
                    for i in 0..r {
                        for j in 0..c {
                            db[j] += gi[i * c + j];
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(da) = self.acc(g, *a) {
                    add_into(da, gi);
                }
                if let Some(db) = self.acc(g, *b) {
                    add_into(db, gi);
                }
            }
            Op::Sub(a, b) => {
                if let Some(da) = self.acc(g, *a) {
                    add_into(da, gi);
                }
                if let Some(db) = self.acc(g, *b) {
                    for (d, &x) in db.iter_mut().zip(gi) {
                        *d -= x;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(da) = self.acc(g, *a) {
                    for ((d, &x), &y) in da.iter_mut().zip(gi).zip(bv) {
                        *d += x * y;
                    }
                }
                if let Some(db) = self.acc(g, *b) {
                    for ((d, &x), &y) in db.iter_mut().zip(gi).zip(av) {
                        *d += x * y;
                    }
                }
            }
            Op::Scale(x, s) => {
                if let Some(dx) = self.acc(g, *x) {
                    for (d, &v) in dx.iter_mut().zip(gi) {
                        *d += v * *s;
                    }
                }
            }
            Op::Gelu(x) => {
                let xv = self.value(*x).data();
                if let Some(dx) = self.acc(g, *x) {
                    for ((d, &v), &xi) in dx.iter_mut().zip(gi).zip(xv) {
                        *d += v * gelu_parts(xi).1;
                    }
                }
            }
            Op::Tanh(x) => {
                let yv = node.value.data();
                if let Some(dx) = self.acc(g, *x) {
                    for ((d, &v), &y) in dx.iter_mut().zip(gi).zip(yv) {
                        *d += v * (F::one() - y * y);
                    }
                }
            }
            Op::Sigmoid(x) => {
                let yv = node.value.data();
                if let Some(dx) = self.acc(g, *x) {
                    for ((d, &v), &y) in dx.iter_mut().zip(gi).zip(yv) {
                        *d += v * y * (F::one() - y);
                    }
                }
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let gv = self.value(*gamma).data();
                let (r, c) = (node.value.rows(), node.value.cols());
                let n = F::c(c as f64);
                if let Some(dg) = self.acc(g, *gamma) {
                    for i in 0..r {
                        for j in 0..c {
                            dg[j] += gi[i * c + j] * xhat[i * c + j];
                        }
                    }
                }
                if let Some(db) = self.acc(g, *beta) {
                    for i in 0..r {
                        for j in 0..c {
                            db[j] += gi[i * c + j];
                        }
                    }
                }
                if let Some(dx) = self.acc(g, *x) {
                    let mut dxhat = vec![F::zero(); c];
                    for i in 0..r {
                        let mut m1 = F::zero();
                        let mut m2 = F::zero();
                        for j in 0..c {
                            dxhat[j] = gi[i * c + j] * gv[j];
                            m1 += dxhat[j];
                            m2 += dxhat[j] * xhat[i * c + j];
                        }
                        m1 /= n;
                        m2 /= n;
                        for j in 0..c {
                            dx[i * c + j] += rstd[i] * (dxhat[j] - m1 - xhat[i * c + j] * m2);
                        }
                    }
                }
            }
            Op::Attention { q, k, v, heads, probs } => {
                let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                let (tq, d, tk) = (qv.rows(), qv.cols(), kv.rows());
                let dh = d / heads;
                let scale = F::one() / F::c(dh as f64).sqrt();
                let mut dq = vec![F::zero(); tq * d];
                let mut dk = vec![F::zero(); tk * d];
                let mut dv = vec![F::zero(); tk * d];
                let mut dp = vec![F::zero(); tk];
                for h in 0..*heads {
                    let off = h * dh;
                    for i in 0..tq {
                        let p = &probs[(h * tq + i) * tk..(h * tq + i + 1) * tk];
                        let go = &gi[i * d + off..i * d + off + dh];
                        let mut dot = F::zero();
                        for j in 0..tk {
                            let vj = &vv.data()[j * d + off..j * d + off + dh];
                            let mut acc = F::zero();
                            for t in 0..dh {
                                acc += go[t] * vj[t];
                                dv[j * d + off + t] += p[j] * go[t];
                            }
                            dp[j] = acc;
                            dot += p[j] * acc;
                        }
                        let qi = &qv.data()[i * d + off..i * d + off + dh];
                        for j in 0..tk {
                            let ds = p[j] * (dp[j] - dot) * scale;
                            let kj = &kv.data()[j * d + off..j * d + off + dh];
                            for t in 0..dh {
                                dq[i * d + off + t] += ds * kj[t];
                                dk[j * d + off + t] += ds * qi[t];
                            }
                        }
                    }
                }
                if let Some(t) = self.acc(g, *q) {
                    add_into(t, &dq);
                }
                if let Some(t) = self.acc(g, *k) {
                    add_into(t, &dk);
                }
                if let Some(t) = self.acc(g, *v) {
                    add_into(t, &dv);
                }
            }
            Op::Softmax(x) => {
                let y = node.value.data();
                let (r, c) = (node.value.rows(), node.value.cols());
                if let Some(dx) = self.acc(g, *x) {
                    for i in 0..r {
                        let mut dot = F::zero();
                        for j in 0..c {
                            dot += y[i * c + j] * gi[i * c + j];
                        }
                        for j in 0..c {
                            dx[i * c + j] += y[i * c + j] * (gi[i * c + j] - dot);
                        }
                    }
                }
            }
            Op::LogSumExp(x) => {
                let out = node.value.item();
                let xv = self.value(*x).data();
                if let Some(dx) = self.acc(g, *x) {
                    if out.is_finite() {
                        for (d, &v) in dx.iter_mut().zip(xv) {
                            *d += gi[0] * (v - out).exp();
                        }
                    }
                }
            }
            Op::Dot(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(da) = self.acc(g, *a) {
                    for (d, &y) in da.iter_mut().zip(bv) {
                        *d += gi[0] * y;
                    }
                }
                if let Some(db) = self.acc(g, *b) {
                    for (d, &x) in db.iter_mut().zip(av) {
                        *d += gi[0] * x;
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(dx) = self.acc(g, *x) {
                    dx.iter_mut().for_each(|d| *d += gi[0]);
                }
            }
            Op::Element { x, index } => {
                if let Some(dx) = self.acc(g, *x) {
                    dx[*index] += gi[0];
                }
            }
            Op::Row { x, index } => {
                let c = node.value.numel();
                if let Some(dx) = self.acc(g, *x) {
                    add_into(&mut dx[index * c..(index + 1) * c], gi);
                }
            }
            Op::Reshape(x) => {
                if let Some(dx) = self.acc(g, *x) {
                    add_into(dx, gi);
                }
            }
            Op::SliceCols { x, start, len } => {
                let c = self.value(*x).cols();
                let r = node.value.rows();
                if let Some(dx) = self.acc(g, *x) {
                    for i in 0..r {
                        add_into(&mut dx[i * c + start..i * c + start + len], &gi[i * len..(i + 1) * len]);
                    }
                }
            }
            Op::ConcatRows(xs) => {
                let mut off = 0;
                for &x in xs {
                    let n = self.value(x).numel();
                    if let Some(dx) = self.acc(g, x) {
                        add_into(dx, &gi[off..off + n]);
                    }
                    off += n;
                }
            }
            Op::ConcatCols(xs) => {
                let r = node.value.rows();
                let total = node.value.cols();
                let mut off = 0;
                for &x in xs {
                    let c = self.value(x).cols();
                    if let Some(dx) = self.acc(g, x) {
                        for i in 0..r {
                            add_into(&mut dx[i * c..(i + 1) * c], &gi[i * total + off..i * total + off + c]);
                        }
                    }
                    off += c;
                }
            }
            Op::Gather { table, ids } => {
                let d = node.value.cols();
                if let Some(dt) = self.acc(g, *table) {
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut dt[id * d..(id + 1) * d], &gi[r * d..(r + 1) * d]);
                    }
                }
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let c = self.value(*logits).cols();
                if let Some(dl) = self.acc(g, *logits) {
                    for (i, &t) in targets.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == t { F::one() } else { F::zero() };
                            dl[i * c + j] += gi[0] * (probs[i * c + j] - onehot);
                        }
                    }
                }
            }
        }
    }
}

fn add_into<F: Real>(dst: &mut [F], src: &[F]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// `out[r×c] += a[r×k] · b[k×c]`
fn matmul_into<F: Real>(a: &[F], b: &[F], out: &mut [F], r: usize, k: usize, c: usize) {
    for i in 0..r {
        let o = &mut out[i * c..(i + 1) * c];
        for t in 0..k {
            let av = a[i * k + t];
            let brow = &b[t * c..(t + 1) * c];
            for j in 0..c {
                o[j] += av * brow[j];
            }
        }
    }
}

/// `out[r×k] += g[r×c] · b[k×c]ᵀ`
fn matmul_bt_into<F: Real>(g: &[F], b: &[F], out: &mut [F], r: usize, c: usize, k: usize) {
    for i in 0..r {
        let gr = &g[i * c..(i + 1) * c];
        for t in 0..k {
            let brow = &b[t * c..(t + 1) * c];
            let mut acc = F::zero();
            for j in 0..c {
                acc += gr[j] * brow[j];
            }
            out[i * k + t] += acc;
        }
    }
}

/// `out[k×c] += a[r×k]ᵀ · g[r×c]`
fn matmul_at_into<F: Real>(a: &[F], g: &[F], out: &mut [F], r: usize, k: usize, c: usize) {
    for i in 0..r {
        let gr = &g[i * c..(i + 1) * c];
        for t in 0..k {
            let av = a[i * k + t];
            let o = &mut out[t * c..(t + 1) * c];
            for j in 0..c {
                o[j] += av * gr[j];
            }
        }
    }
}

/// A tape bound to a parameter store; each parameter is recorded at most
/// once per tape.
pub struct Ctx<'a, F> {
    tape: Tape<F>,
    store: &'a ParamStore<F>,
    bound: Vec<Option<Var>>,
}

impl<'a, F: Real> Ctx<'a, F> {
    pub fn new(store: &'a ParamStore<F>) -> Self {
        Ctx { tape: Tape::new(), store, bound: vec![None; store.len()] }
    }

    pub fn store(&self) -> &'a ParamStore<F> {
        self.store
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self.tape.param_node(id, self.store.value(id).clone());
        self.bound[id.0] = Some(v);
        v
    }

    pub fn tape(&self) -> &Tape<F> {
        &self.tape
    }

    pub fn into_tape(self) -> Tape<F> {
        self.tape
    }

    /// Backward into a fresh gradient buffer shaped like the store.
    pub fn gradients(&self, loss: Var) -> Result<Gradients<F>> {
        let mut grads = self.store.zero_gradients();
        self.tape.backward(loss, &mut grads)?;
        Ok(grads)
    }
}

impl<F> Deref for Ctx<'_, F> {
    type Target = Tape<F>;
    fn deref(&self) -> &Tape<F> {
        &self.tape
    }
}

impl<F> DerefMut for Ctx<'_, F> {
    fn deref_mut(&mut self) -> &mut Tape<F> {
        &mut self.tape
    }
}
