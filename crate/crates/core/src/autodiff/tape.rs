//! Reverse-mode differentiation over a linear record of tensor operations.
//!
//! A [`Tape`] owns every intermediate value. Operations append a node and
//! return a [`Var`] handle; [`Tape::backward`] walks the record in reverse and
//! returns the gradient of a scalar node with respect to every node that
//! depends on a differentiable leaf.

use super::rng::Rng;
use super::tensor::Tensor;
use crate::error::{shape_err, Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Ln(Var),
    Sqrt(Var),
    Abs(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    MaskCols(Var, Vec<bool>),
    Conv(Var, Var),
    Transpose(Var),
    Reshape(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Gather(Var, Vec<usize>),
    Select(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Record of a single differentiable computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return shape_err(format!("{what}: {:?} vs {:?}", a.shape(), b.shape()));
    }
    Ok(())
}

fn two_d(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => shape_err(format!("{what}: expected a matrix, got {s:?}")),
    }
}

fn softmax_row(x: &[f64], out: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

fn matmul_raw(a: &[f64], b: &[f64], p: usize, q: usize, s: usize) -> Vec<f64> {
    let mut out = vec![0.0; p * s];
    for i in 0..p {
        let orow = &mut out[i * s..(i + 1) * s];
        for k in 0..q {
            let av = a[i * q + k];
            if av == 0.0 {
                continue;
            }
            let brow = &b[k * s..(k + 1) * s];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
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

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Differentiable leaf.
    pub fn var(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Copy of `v` with the gradient path cut.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (p, q) = two_d(av, "matmul lhs")?;
        let (q2, s) = two_d(bv, "matmul rhs")?;
        if q != q2 {
            return shape_err(format!("matmul: [{p},{q}] x [{q2},{s}]"));
        }
        let out = matmul_raw(av.data(), bv.data(), p, q, s);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::new(&[p, s], out)?, Op::MatMul(a, b), ng))
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape(av, bv, "elementwise")?;
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(av.shape(), data)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Div(a, b), |x, y| x / y)
    }

    /// Adds a `[1, c]` row to every row of an `[r, c]` matrix.
    pub fn add_row(&mut self, m: Var, row: Var) -> Result<Var> {
        let (mv, rv) = (self.value(m), self.value(row));
        let c = mv.cols();
        if rv.len() != c {
            return shape_err(format!("add_row: {:?} + {:?}", mv.shape(), rv.shape()));
        }
        let mut data = mv.data().to_vec();
        for chunk in data.chunks_mut(c) {
            for (d, &b) in chunk.iter_mut().zip(rv.data()) {
                *d += b;
            }
        }
        let value = Tensor::new(mv.shape(), data)?;
        let ng = self.ng(m) || self.ng(row);
        Ok(self.push(value, Op::AddRow(m, row), ng))
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.value(a).map(f);
        let ng = self.ng(a);
        self.push(value, op, ng)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, Op::Scale(a, k), |x| k * x)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Offset(a), |x| x + c)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), |x| {
            if x >= 0.0 {
                1.0 / (1.0 + (-x).exp())
            } else {
                let e = x.exp();
                e / (1.0 + e)
            }
        })
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, Op::Ln(a), f64::ln)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sqrt(a), f64::sqrt)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, Op::Abs(a), f64::abs)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, Op::Clamp(a, lo, hi), |x| x.clamp(lo, hi))
    }

    /// Softmax over the last axis, max-shifted.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let c = av.cols();
        let mut out = vec![0.0; av.len()];
        for (x, o) in av.data().chunks(c).zip(out.chunks_mut(c)) {
            softmax_row(x, o);
        }
        let value = Tensor::new(av.shape(), out).expect("same shape");
        let ng = self.ng(a);
        self.push(value, Op::SoftmaxRows(a), ng)
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let c = av.cols();
        let mut out = vec![0.0; av.len()];
        for (x, o) in av.data().chunks(c).zip(out.chunks_mut(c)) {
            let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for (o, &v) in o.iter_mut().zip(x) {
                *o = v - lse;
            }
        }
        let value = Tensor::new(av.shape(), out).expect("same shape");
        let ng = self.ng(a);
        self.push(value, Op::LogSoftmaxRows(a), ng)
    }

    /// Sets every column flagged in `masked` to negative infinity, so a
    /// following softmax gives it exactly zero mass.
    pub fn mask_cols(&mut self, a: Var, masked: &[bool]) -> Result<Var> {
        let av = self.value(a);
        let c = av.cols();
        if masked.len() != c {
            return shape_err(format!("mask_cols: {} flags for {} columns", masked.len(), c));
        }
        if masked.iter().all(|&m| m) {
            return Err(Error::Domain("mask_cols: every column masked".into()));
        }
        let mut data = av.data().to_vec();
        for row in data.chunks_mut(c) {
            for (d, &m) in row.iter_mut().zip(masked) {
                if m {
                    *d = f64::NEG_INFINITY;
                }
            }
        }
        let value = Tensor::new(av.shape(), data)?;
        let ng = self.ng(a);
        Ok(self.push(value, Op::MaskCols(a, masked.to_vec()), ng))
    }

    /// Softmax of `(logits + g) / tau`, where `g` is i.i.d. Gumbel noise when
    /// an rng is supplied and zero otherwise. Soft relaxation only.
    pub fn gumbel_softmax(&mut self, logits: Var, tau: f64, noise: Option<&mut Rng>) -> Result<Var> {
        if !(tau > 0.0) {
            return Err(Error::Domain(format!("gumbel_softmax: tau must be positive, got {tau}")));
        }
        let perturbed = match noise {
            Some(rng) => {
                let shape = self.value(logits).shape().to_vec();
                let n = self.value(logits).len();
                let g: Vec<f64> = (0..n).map(|_| rng.gumbel()).collect();
                let g = self.constant(Tensor::new(&shape, g)?);
                self.add(logits, g)?
            }
            None => logits,
        };
        let scaled = self.scale(perturbed, 1.0 / tau);
        Ok(self.softmax_rows(scaled))
    }

    /// Valid 1-D convolution along the sequence axis of `input` `[L, N]` with
    /// a `[m, N, 1, chan]` kernel spanning the whole embedding axis. The
    /// result is laid out channel-major: `[chan, L - m + 1]`.
    pub fn conv_seq(&mut self, input: Var, kernel: Var) -> Result<Var> {
        let (iv, kv) = (self.value(input), self.value(kernel));
        let (len, width) = two_d(iv, "conv_seq input")?;
        let (m, kw, chan) = match kv.shape() {
            [m, n, 1, c] => (*m, *n, *c),
            s => return shape_err(format!("conv_seq kernel: expected [m, N, 1, chan], got {s:?}")),
        };
        if kw != width {
            return shape_err(format!("conv_seq: kernel width {kw} vs embedding {width}"));
        }
        if m == 0 || len < m {
            return shape_err(format!("conv_seq: sequence length {len} shorter than kernel {m}"));
        }
        let steps = len - m + 1;
        let (x, k) = (iv.data(), kv.data());
        let mut out = vec![0.0; chan * steps];
        for t in 0..steps {
            for dk in 0..m {
                let xrow = &x[(t + dk) * width..(t + dk + 1) * width];
                for (n, &xv) in xrow.iter().enumerate() {
                    let kbase = (dk * width + n) * chan;
                    for c in 0..chan {
                        out[c * steps + t] += xv * k[kbase + c];
                    }
                }
            }
        }
        let value = Tensor::new(&[chan, steps], out)?;
        let ng = self.ng(input) || self.ng(kernel);
        Ok(self.push(value, Op::Conv(input, kernel), ng))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let (r, c) = two_d(av, "transpose")?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = av.data()[i * c + j];
            }
        }
        let value = Tensor::new(&[c, r], out)?;
        let ng = self.ng(a);
        Ok(self.push(value, Op::Transpose(a), ng))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).reshaped(shape)?;
        let ng = self.ng(a);
        Ok(self.push(value, Op::Reshape(a), ng))
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(first) = parts.first() else {
            return shape_err("concat_rows: nothing to concatenate");
        };
        let c = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.cols() != c {
                return shape_err(format!("concat_rows: {} vs {} columns", pv.cols(), c));
            }
            rows += pv.rows();
            data.extend_from_slice(pv.data());
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        let value = Tensor::new(&[rows, c], data)?;
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), ng))
    }

    /// Joins matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(first) = parts.first() else {
            return shape_err("concat_cols: nothing to concatenate");
        };
        let r = self.value(*first).rows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        if parts.iter().any(|&p| self.value(p).rows() != r) {
            return shape_err("concat_cols: row counts differ");
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(i));
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        let value = Tensor::new(&[r, total], data)?;
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), ng))
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let av = self.value(a);
        let (r, c) = two_d(av, "slice_rows")?;
        if start >= end || end > r {
            return shape_err(format!("slice_rows: {start}..{end} of {r}"));
        }
        let value = Tensor::new(&[end - start, c], av.data()[start * c..end * c].to_vec())?;
        let ng = self.ng(a);
        Ok(self.push(value, Op::SliceRows(a, start), ng))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let av = self.value(a);
        let (r, c) = two_d(av, "slice_cols")?;
        if start >= end || end > c {
            return shape_err(format!("slice_cols: {start}..{end} of {c}"));
        }
        let mut data = Vec::with_capacity(r * (end - start));
        for i in 0..r {
            data.extend_from_slice(&av.data()[i * c + start..i * c + end]);
        }
        let value = Tensor::new(&[r, end - start], data)?;
        let ng = self.ng(a);
        Ok(self.push(value, Op::SliceCols(a, start), ng))
    }

    /// Rows of `table` picked by `ids`, in order.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        let (r, c) = two_d(tv, "gather_rows")?;
        let mut data = Vec::with_capacity(ids.len() * c);
        for &id in ids {
            if id >= r {
                return shape_err(format!("gather_rows: id {id} out of {r}"));
            }
            data.extend_from_slice(tv.row_slice(id));
        }
        let value = Tensor::new(&[ids.len(), c], data)?;
        let ng = self.ng(table);
        Ok(self.push(value, Op::Gather(table, ids.to_vec()), ng))
    }

    /// Flat-index selection; returns a `[k]` vector.
    pub fn select(&mut self, a: Var, flat: &[usize]) -> Result<Var> {
        let av = self.value(a);
        let mut data = Vec::with_capacity(flat.len());
        for &i in flat {
            match av.data().get(i) {
                Some(&v) => data.push(v),
                None => return shape_err(format!("select: index {i} out of {}", av.len())),
            }
        }
        let value = Tensor::new(&[flat.len()], data)?;
        let ng = self.ng(a);
        Ok(self.push(value, Op::Select(a, flat.to_vec()), ng))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let s = av.data().iter().sum::<f64>() / av.len() as f64;
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Mean(a), ng)
    }

    /// Adds up a non-empty list of same-shape nodes.
    pub fn add_all(&mut self, parts: &[Var]) -> Result<Var> {
        let Some((&first, rest)) = parts.split_first() else {
            return shape_err("add_all: empty");
        };
        let mut acc = first;
        for &p in rest {
            acc = self.add(acc, p)?;
        }
        Ok(acc)
    }

    /// Reverse sweep from a single-element node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return shape_err(format!("backward: loss has shape {:?}", self.value(loss).shape()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.needs_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, contrib: Vec<f64>| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => {
                    for (e, c) in existing.iter_mut().zip(contrib) {
                        *e += c;
                    }
                }
                slot @ None => *slot = Some(contrib),
            }
        };
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (p, q) = (av.shape()[0], av.shape()[1]);
                let s = bv.shape()[1];
                if self.ng(*a) {
                    // g [p,s] . b^T [s,q]
                    let mut da = vec![0.0; p * q];
                    for i in 0..p {
                        for k in 0..q {
                            let brow = &bv.data()[k * s..(k + 1) * s];
                            let grow = &g[i * s..(i + 1) * s];
                            da[i * q + k] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                        }
                    }
                    acc(*a, da);
                }
                if self.ng(*b) {
                    // a^T [q,p] . g [p,s]
                    let mut db = vec![0.0; q * s];
                    for i in 0..p {
                        for k in 0..q {
                            let av_ik = av.data()[i * q + k];
                            if av_ik == 0.0 {
                                continue;
                            }
                            let grow = &g[i * s..(i + 1) * s];
                            for (d, &gv) in db[k * s..(k + 1) * s].iter_mut().zip(grow) {
                                *d += av_ik * gv;
                            }
                        }
                    }
                    acc(*b, db);
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.to_vec());
            }
            Op::AddRow(m, row) => {
                acc(*m, g.to_vec());
                let c = val(*row).len();
                let mut dr = vec![0.0; c];
                for chunk in g.chunks(c) {
                    for (d, &gv) in dr.iter_mut().zip(chunk) {
                        *d += gv;
                    }
                }
                acc(*row, dr);
            }
            Op::Sub(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a).data(), val(*b).data());
                acc(*a, g.iter().zip(bv).map(|(g, b)| g * b).collect());
                acc(*b, g.iter().zip(av).map(|(g, a)| g * a).collect());
            }
            Op::Div(a, b) => {
                let bv = val(*b).data();
                acc(*a, g.iter().zip(bv).map(|(g, b)| g / b).collect());
                acc(*b, g.iter().zip(y).zip(bv).map(|((g, y), b)| -g * y / b).collect());
            }
            Op::Scale(a, k) => acc(*a, g.iter().map(|v| v * k).collect()),
            Op::Offset(a) => acc(*a, g.to_vec()),
            Op::Sigmoid(a) => acc(*a, g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect()),
            Op::Tanh(a) => acc(*a, g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect()),
            Op::Exp(a) => acc(*a, g.iter().zip(y).map(|(g, y)| g * y).collect()),
            Op::Ln(a) => {
                let x = val(*a).data();
                acc(*a, g.iter().zip(x).map(|(g, x)| g / x).collect());
            }
            Op::Sqrt(a) => acc(*a, g.iter().zip(y).map(|(g, y)| 0.5 * g / y).collect()),
            Op::Abs(a) => {
                let x = val(*a).data();
                acc(
                    *a,
                    g.iter()
                        .zip(x)
                        .map(|(g, &x)| if x > 0.0 { *g } else if x < 0.0 { -g } else { 0.0 })
                        .collect(),
                );
            }
            Op::Square(a) => {
                let x = val(*a).data();
                acc(*a, g.iter().zip(x).map(|(g, x)| 2.0 * g * x).collect());
            }
            Op::Clamp(a, lo, hi) => {
                let x = val(*a).data();
                acc(
                    *a,
                    g.iter()
                        .zip(x)
                        .map(|(g, x)| if x >= lo && x <= hi { *g } else { 0.0 })
                        .collect(),
                );
            }
            Op::SoftmaxRows(a) => {
                let c = node.value.cols();
                let mut dx = vec![0.0; y.len()];
                for ((yr, gr), dr) in y.chunks(c).zip(g.chunks(c)).zip(dx.chunks_mut(c)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                    for ((d, y), g) in dr.iter_mut().zip(yr).zip(gr) {
                        *d = y * (g - dot);
                    }
                }
                acc(*a, dx);
            }
            Op::LogSoftmaxRows(a) => {
                let c = node.value.cols();
                let mut dx = vec![0.0; y.len()];
                for ((yr, gr), dr) in y.chunks(c).zip(g.chunks(c)).zip(dx.chunks_mut(c)) {
                    let gsum: f64 = gr.iter().sum();
                    for ((d, y), g) in dr.iter_mut().zip(yr).zip(gr) {
                        *d = g - y.exp() * gsum;
                    }
                }
                acc(*a, dx);
            }
            Op::MaskCols(a, masked) => {
                let c = masked.len();
                let mut dx = g.to_vec();
                for row in dx.chunks_mut(c) {
                    for (d, &m) in row.iter_mut().zip(masked) {
                        if m {
                            *d = 0.0;
                        }
                    }
                }
                acc(*a, dx);
            }
            Op::Conv(input, kernel) => {
                let (iv, kv) = (val(*input), val(*kernel));
                let width = iv.shape()[1];
                let m = kv.shape()[0];
                let chan = kv.shape()[3];
                let steps = node.value.shape()[1];
                let (x, k) = (iv.data(), kv.data());
                let mut dx = vec![0.0; x.len()];
                let mut dk = vec![0.0; k.len()];
                for t in 0..steps {
                    for dkk in 0..m {
                        let row = t + dkk;
                        for n in 0..width {
                            let kbase = (dkk * width + n) * chan;
                            let xv = x[row * width + n];
                            let mut sx = 0.0;
                            for c in 0..chan {
                                let gv = g[c * steps + t];
                                sx += gv * k[kbase + c];
                                dk[kbase + c] += gv * xv;
                            }
                            dx[row * width + n] += sx;
                        }
                    }
                }
                acc(*input, dx);
                acc(*kernel, dk);
            }
            Op::Transpose(a) => {
                let (r, c) = (node.value.shape()[0], node.value.shape()[1]);
                // node is [r, c]; parent is [c, r]
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        dx[j * r + i] = g[i * c + j];
                    }
                }
                acc(*a, dx);
            }
            Op::Reshape(a) => acc(*a, g.to_vec()),
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = val(p).len();
                    acc(p, g[off..off + n].to_vec());
                    off += n;
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let mut start = 0;
                for &p in parts {
                    let pv = val(p);
                    let w = pv.cols();
                    let mut dp = Vec::with_capacity(pv.len());
                    for row in g.chunks(total) {
                        dp.extend_from_slice(&row[start..start + w]);
                    }
                    acc(p, dp);
                    start += w;
                }
            }
            Op::SliceRows(a, start) => {
                let av = val(*a);
                let c = av.cols();
                let mut dx = vec![0.0; av.len()];
                dx[start * c..start * c + g.len()].copy_from_slice(g);
                acc(*a, dx);
            }
            Op::SliceCols(a, start) => {
                let av = val(*a);
                let c = av.cols();
                let w = node.value.cols();
                let mut dx = vec![0.0; av.len()];
                for (i, row) in g.chunks(w).enumerate() {
                    dx[i * c + start..i * c + start + w].copy_from_slice(row);
                }
                acc(*a, dx);
            }
            Op::Gather(table, ids) => {
                let tv = val(*table);
                let c = tv.cols();
                let mut dt = vec![0.0; tv.len()];
                for (k, &id) in ids.iter().enumerate() {
                    for (d, &gv) in dt[id * c..(id + 1) * c].iter_mut().zip(&g[k * c..(k + 1) * c]) {
                        *d += gv;
                    }
                }
                acc(*table, dt);
            }
            Op::Select(a, flat) => {
                let mut dx = vec![0.0; val(*a).len()];
                for (&i, &gv) in flat.iter().zip(g) {
                    dx[i] += gv;
                }
                acc(*a, dx);
            }
            Op::Sum(a) => acc(*a, vec![g[0]; val(*a).len()]),
            Op::Mean(a) => {
                let n = val(*a).len();
                acc(*a, vec![g[0] / n as f64; n]);
            }
        }
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient with respect to `v`, or `None` when `v` does not influence
    /// the loss through a differentiable path.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient as a tensor shaped like the node, zero-filled if absent.
    pub fn wrt(&self, tape: &Tape, v: Var) -> Tensor {
        let shape = tape.value(v).shape();
        match self.get(v) {
            Some(g) => Tensor::new(shape, g.to_vec()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }
}
