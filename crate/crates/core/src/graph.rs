//! Reverse-mode differentiation over a recorded sequence of array operations.
//!
//! A [`Graph`] is the computation record: every operation appends a node
//! holding its output value, so nodes are topologically ordered by
//! construction and [`Graph::backward`] visits each node exactly once in
//! reverse. All arrays are treated as matrices (`dims2`); vectors are
//! columns.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::{matmul_nt_into, matmul_tn_into, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const NO_SOURCE: usize = usize::MAX;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Relu(Var),
    Abs(Var),
    ClampMin(Var, f64),
    Transpose(Var),
    Reshape(Var),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    SumRows(Var),
    SumCols(Var),
    Sum(Var),
    MaxRows(Var, Vec<usize>),
    Broadcast(Var),
    SoftmaxRows(Var),
    NormalizeRows(Var, Vec<bool>),
    Kron(Var, Var),
    Gather(Var, Rc<[usize]>),
}

impl Op {
    fn tag(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Constant => "constant",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Relu(..) => "relu",
            Op::Abs(..) => "abs",
            Op::ClampMin(..) => "clamp_min",
            Op::Transpose(..) => "transpose",
            Op::Reshape(..) => "reshape",
            Op::ConcatRows(..) => "concat_rows",
            Op::SliceRows(..) => "slice_rows",
            Op::SumRows(..) => "sum_rows",
            Op::SumCols(..) => "sum_cols",
            Op::Sum(..) => "sum",
            Op::MaxRows(..) => "max_rows",
            Op::Broadcast(..) => "broadcast",
            Op::SoftmaxRows(..) => "softmax_rows",
            Op::NormalizeRows(..) => "normalize_rows",
            Op::Kron(..) => "kron",
            Op::Gather(..) => "gather",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Computation record. Single writer; values are immutable once recorded.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    check_finite: bool,
    first_non_finite: Option<(usize, &'static str)>,
}

/// Gradients of a scalar with respect to every leaf of a graph.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `v`; `None` when `v` is not a leaf or the loss does not
    /// depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn shape_err(op: &str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape(format!("{op}: {:?} vs {:?}", a.shape(), b.shape()))
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Graph that records the first node whose value is not finite; see
    /// [`Graph::finite_check`].
    pub fn with_finite_checks() -> Self {
        Graph { check_finite: true, ..Self::default() }
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

    /// Errors if finite checks are enabled and any node went non-finite.
    pub fn finite_check(&self) -> Result<()> {
        match self.first_non_finite {
            Some((node, op)) => Err(Error::NonFinite { node, op }),
            None => Ok(()),
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        if self.check_finite && self.first_non_finite.is_none() && !value.is_finite() {
            self.first_non_finite = Some((self.nodes.len(), op.tag()));
        }
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.value(x).map(f);
        let rg = self.rg(x);
        self.push(value, op, rg)
    }

    /// Differentiable input.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Embedded constant; receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant, false)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    fn zip(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.dims2() != tb.dims2() {
            return Err(shape_err(op.tag(), ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(ta.shape(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Div(a, b), |x, y| x / y)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.unary(x, Op::Scale(x, s), |v| v * s)
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Var {
        self.unary(x, Op::AddScalar(x), |v| v + s)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), f64::tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Op::Exp(x), f64::exp)
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, Op::Log(x), f64::ln)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| v.max(0.0))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, Op::Abs(x), f64::abs)
    }

    pub fn clamp_min(&mut self, x: Var, lo: f64) -> Var {
        self.unary(x, Op::ClampMin(x, lo), |v| v.max(lo))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let value = self.value(x).transpose();
        let rg = self.rg(x);
        self.push(value, Op::Transpose(x), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Stack matrices with equal column counts vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat_rows of nothing".into()))?;
        let cols = self.value(*first).dims2().1;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            let (r, c) = t.dims2();
            if c != cols {
                return Err(shape_err("concat_rows", self.value(*first), t));
            }
            rows += r;
            data.extend_from_slice(t.data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        let value = Tensor::new(&[rows, cols], data)?;
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Rows `start..start + len`.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        let (r, c) = t.dims2();
        if len == 0 || start + len > r {
            return Err(Error::Shape(format!(
                "slice_rows {start}..{} out of {:?}",
                start + len,
                t.shape()
            )));
        }
        let value = Tensor::new(&[len, c], t.data()[start * c..(start + len) * c].to_vec())?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::SliceRows(x, start), rg))
    }

    /// `r×c → r×1`.
    pub fn sum_rows(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let (r, c) = t.dims2();
        let data = t.data().chunks(c).map(|row| row.iter().sum()).collect();
        let value = Tensor::new(&[r, 1], data).expect("row sums");
        let rg = self.rg(x);
        self.push(value, Op::SumRows(x), rg)
    }

    /// `r×c → 1×c`.
    pub fn sum_cols(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let (_, c) = t.dims2();
        let mut data = vec![0.0; c];
        for row in t.data().chunks(c) {
            for (d, v) in data.iter_mut().zip(row) {
                *d += v;
            }
        }
        let value = Tensor::new(&[1, c], data).expect("column sums");
        let rg = self.rg(x);
        self.push(value, Op::SumCols(x), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// Row maxima `r×c → r×1`; ties go to the lowest column.
    pub fn max_rows(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let (r, c) = t.dims2();
        let mut arg = Vec::with_capacity(r);
        let mut data = Vec::with_capacity(r);
        for row in t.data().chunks(c) {
            let (mut bi, mut bv) = (0, row[0]);
            for (i, &v) in row.iter().enumerate().skip(1) {
                if v > bv {
                    bi = i;
                    bv = v;
                }
            }
            arg.push(bi);
            data.push(bv);
        }
        let value = Tensor::new(&[r, 1], data).expect("row maxima");
        let rg = self.rg(x);
        self.push(value, Op::MaxRows(x, arg), rg)
    }

    /// Expand a `1×1`, `r×1` or `1×c` array to `rows×cols`.
    pub fn broadcast(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let t = self.value(x);
        let (r, c) = t.dims2();
        if !((r == 1 || r == rows) && (c == 1 || c == cols)) {
            return Err(Error::Shape(format!(
                "cannot broadcast {:?} to [{rows}, {cols}]",
                t.shape()
            )));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(t.data()[(i % r) * c + (j % c)]);
            }
        }
        let value = Tensor::new(&[rows, cols], data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Broadcast(x), rg))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let (_, c) = t.dims2();
        let mut data = Vec::with_capacity(t.len());
        for row in t.data().chunks(c) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let start = data.len();
            data.extend(row.iter().map(|&v| (v - m).exp()));
            let s: f64 = data[start..].iter().sum();
            data[start..].iter_mut().for_each(|v| *v /= s);
        }
        let value = Tensor::new(t.shape(), data).expect("softmax shape");
        let rg = self.rg(x);
        self.push(value, Op::SoftmaxRows(x), rg)
    }

    /// Divide each row by its sum. A row whose sum is not strictly positive
    /// becomes uniform and passes no gradient.
    pub fn normalize_rows(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let (_, c) = t.dims2();
        let mut data = Vec::with_capacity(t.len());
        let mut fallback = Vec::new();
        for row in t.data().chunks(c) {
            let s: f64 = row.iter().sum();
            if s > 0.0 && s.is_finite() {
                data.extend(row.iter().map(|v| v / s));
                fallback.push(false);
            } else {
                data.extend(std::iter::repeat(1.0 / c as f64).take(c));
                fallback.push(true);
            }
        }
        let value = Tensor::new(t.shape(), data).expect("normalize shape");
        let rg = self.rg(x);
        self.push(value, Op::NormalizeRows(x, fallback), rg)
    }

    /// Kronecker product of two matrices.
    pub fn kron(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        let (p, q) = ta.dims2();
        let (r, s) = tb.dims2();
        let mut data = vec![0.0; p * r * q * s];
        let cols = q * s;
        for i in 0..p {
            for k in 0..r {
                let row = (i * r + k) * cols;
                for j in 0..q {
                    let av = ta.data()[i * q + j];
                    for l in 0..s {
                        data[row + j * s + l] = av * tb.data()[k * s + l];
                    }
                }
            }
        }
        let value = Tensor::new(&[p * r, cols], data).expect("kron shape");
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Kron(a, b), rg)
    }

    /// `out[i] = x[index[i]]`, or zero where `index[i]` is `None`.
    pub fn gather(&mut self, x: Var, index: &[Option<usize>], shape: &[usize]) -> Result<Var> {
        let n = self.value(x).len();
        let idx: Vec<usize> = index
            .iter()
            .map(|i| match *i {
                Some(i) if i < n => Ok(i),
                Some(i) => Err(Error::Shape(format!("gather index {i} out of {n} values"))),
                None => Ok(NO_SOURCE),
            })
            .collect::<Result<_>>()?;
        self.gather_prepared(x, idx.into(), shape)
    }

    /// [`Graph::gather`] with a validated, shareable index where
    /// `usize::MAX` marks zero padding.
    pub fn gather_prepared(&mut self, x: Var, idx: Rc<[usize]>, shape: &[usize]) -> Result<Var> {
        let src = self.value(x).data();
        let data = idx
            .iter()
            .map(|&i| if i == NO_SOURCE { 0.0 } else { src[i] })
            .collect();
        let value = Tensor::new(shape, data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Gather(x, idx), rg))
    }

    /// Gradients of the scalar `loss` with respect to every leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.finite_check()?;
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, delta: Vec<f64>) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(t) => t.data_mut().iter_mut().zip(delta).for_each(|(a, d)| *a += d),
            slot @ None => {
                *slot = Some(Tensor::new(self.value(v).shape(), delta).expect("gradient shape"))
            }
        }
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let y = &self.nodes[i].value;
        let gd = g.data();
        let ew = |f: &dyn Fn(usize) -> f64| -> Vec<f64> { (0..gd.len()).map(f).collect() };
        match &self.nodes[i].op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = ta.dims2();
                let n = tb.dims2().1;
                if self.rg(*a) {
                    let mut da = vec![0.0; m * k];
                    matmul_nt_into(gd, tb.data(), &mut da, m, n, k);
                    self.accumulate(grads, *a, da);
                }
                if self.rg(*b) {
                    let mut db = vec![0.0; k * n];
                    matmul_tn_into(ta.data(), gd, &mut db, k, m, n);
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, gd.to_vec());
                self.accumulate(grads, *b, gd.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, gd.to_vec());
                self.accumulate(grads, *b, gd.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (xa, xb) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, ew(&|k| gd[k] * xb[k]));
                self.accumulate(grads, *b, ew(&|k| gd[k] * xa[k]));
            }
            Op::Div(a, b) => {
                let (xa, xb) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, ew(&|k| gd[k] / xb[k]));
                self.accumulate(
                    grads,
                    *b,
                    ew(&|k| -gd[k] * xa[k] / (xb[k] * xb[k])),
                );
            }
            Op::Scale(x, s) => self.accumulate(grads, *x, gd.iter().map(|v| v * s).collect()),
            Op::AddScalar(x) | Op::Reshape(x) => self.accumulate(grads, *x, gd.to_vec()),
            Op::Tanh(x) => {
                let yd = y.data();
                self.accumulate(grads, *x, ew(&|k| gd[k] * (1.0 - yd[k] * yd[k])));
            }
            Op::Sigmoid(x) => {
                let yd = y.data();
                self.accumulate(grads, *x, ew(&|k| gd[k] * yd[k] * (1.0 - yd[k])));
            }
            Op::Exp(x) => {
                let yd = y.data();
                self.accumulate(grads, *x, ew(&|k| gd[k] * yd[k]));
            }
            Op::Log(x) => {
                let xd = self.value(*x).data();
                self.accumulate(grads, *x, ew(&|k| gd[k] / xd[k]));
            }
            Op::Relu(x) => {
                let xd = self.value(*x).data();
                self.accumulate(
                    grads,
                    *x,
                    ew(&|k| if xd[k] > 0.0 { gd[k] } else { 0.0 }),
                );
            }
            Op::Abs(x) => {
                let xd = self.value(*x).data();
                self.accumulate(
                    grads,
                    *x,
                    ew(&|k| {
                        if xd[k] > 0.0 {
                            gd[k]
                        } else if xd[k] < 0.0 {
                            -gd[k]
                        } else {
                            0.0
                        }
                    }),
                );
            }
            Op::ClampMin(x, lo) => {
                let xd = self.value(*x).data();
                self.accumulate(
                    grads,
                    *x,
                    ew(&|k| if xd[k] > *lo { gd[k] } else { 0.0 }),
                );
            }
            Op::Transpose(x) => self.accumulate(grads, *x, g.transpose().into_data()),
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = self.value(*p).len();
                    self.accumulate(grads, *p, gd[offset..offset + n].to_vec());
                    offset += n;
                }
            }
            Op::SliceRows(x, start) => {
                let t = self.value(*x);
                let c = t.dims2().1;
                let mut dx = vec![0.0; t.len()];
                dx[start * c..start * c + gd.len()].copy_from_slice(gd);
                self.accumulate(grads, *x, dx);
            }
            Op::SumRows(x) => {
                let c = self.value(*x).dims2().1;
                let dx = gd.iter().flat_map(|&v| std::iter::repeat(v).take(c)).collect();
                self.accumulate(grads, *x, dx);
            }
            Op::SumCols(x) => {
                let n = self.value(*x).len();
                let c = gd.len();
                self.accumulate(grads, *x, (0..n).map(|k| gd[k % c]).collect());
            }
            Op::Sum(x) => {
                let n = self.value(*x).len();
                self.accumulate(grads, *x, vec![gd[0]; n]);
            }
            Op::MaxRows(x, arg) => {
                let t = self.value(*x);
                let c = t.dims2().1;
                let mut dx = vec![0.0; t.len()];
                for (r, &a) in arg.iter().enumerate() {
                    dx[r * c + a] = gd[r];
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Broadcast(x) => {
                let t = self.value(*x);
                let (r, c) = t.dims2();
                let (_, cols) = y.dims2();
                let mut dx = vec![0.0; t.len()];
                for (k, &v) in gd.iter().enumerate() {
                    let (i, j) = (k / cols, k % cols);
                    dx[(i % r) * c + (j % c)] += v;
                }
                self.accumulate(grads, *x, dx);
            }
            Op::SoftmaxRows(x) => {
                let c = y.dims2().1;
                let mut dx = Vec::with_capacity(gd.len());
                for (yr, gr) in y.data().chunks(c).zip(gd.chunks(c)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    dx.extend(yr.iter().zip(gr).map(|(yv, gv)| yv * (gv - dot)));
                }
                self.accumulate(grads, *x, dx);
            }
            Op::NormalizeRows(x, fallback) => {
                let c = y.dims2().1;
                let xd = self.value(*x).data();
                let mut dx = Vec::with_capacity(gd.len());
                for (r, (yr, gr)) in y.data().chunks(c).zip(gd.chunks(c)).enumerate() {
                    if fallback[r] {
                        dx.extend(std::iter::repeat(0.0).take(c));
                        continue;
                    }
                    let s: f64 = xd[r * c..(r + 1) * c].iter().sum();
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    dx.extend(gr.iter().map(|gv| (gv - dot) / s));
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Kron(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (p, q) = ta.dims2();
                let (r, s) = tb.dims2();
                let cols = q * s;
                let mut da = vec![0.0; p * q];
                let mut db = vec![0.0; r * s];
                for i in 0..p {
                    for k in 0..r {
                        let row = (i * r + k) * cols;
                        for j in 0..q {
                            let av = ta.data()[i * q + j];
                            for l in 0..s {
                                let gv = gd[row + j * s + l];
                                da[i * q + j] += gv * tb.data()[k * s + l];
                                db[k * s + l] += gv * av;
                            }
                        }
                    }
                }
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
            Op::Gather(x, idx) => {
                let mut dx = vec![0.0; self.value(*x).len()];
                for (&src, &v) in idx.iter().zip(gd) {
                    if src != NO_SOURCE {
                        dx[src] += v;
                    }
                }
                self.accumulate(grads, *x, dx);
            }
        }
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
