use std::borrow::Cow;

use super::matrix::{gemm, Matrix};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Tensor(usize);

/// Reduction axis. `Rows` collapses the row dimension (m×n → 1×n),
/// `Cols` collapses the column dimension (m×n → m×1).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    All,
    Rows,
    Cols,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary {
    Neg,
    Tanh,
    Relu,
    Exp,
    Log,
    Sqrt,
    Square,
    Softplus,
    Sigmoid,
    Scale(f64),
    AddScalar(f64),
    Clamp(f64, f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
    Div,
    Min,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduce {
    Sum,
    Mean,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Tensor, Tensor),
    Unary(Unary, Tensor),
    Binary(Binary, Tensor, Tensor),
    Reduce(Reduce, Axis, Tensor),
    SliceCols(Tensor, usize),
    ConcatCols(Vec<Tensor>),
}

struct Node<'a> {
    value: Cow<'a, Matrix>,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run reverse-mode tape over dense matrices.
///
/// Nodes are appended in evaluation order, so the tape is already a
/// topological order; `backward` walks it in reverse exactly once.
/// Parameters may be borrowed for the lifetime of the graph, which keeps
/// inference passes free of weight copies.
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
    grads: Vec<Option<Matrix>>,
    backward_done: bool,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn broadcast_shape(
    op: &'static str,
    a: (usize, usize),
    b: (usize, usize),
) -> Result<(usize, usize)> {
    let dim = |x: usize, y: usize| {
        if x == y {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else if y == 1 {
            Some(x)
        } else {
            None
        }
    };
    match (dim(a.0, b.0), dim(a.1, b.1)) {
        (Some(r), Some(c)) => Ok((r, c)),
        _ => Err(Error::Shape { op, lhs: a, rhs: b }),
    }
}

/// Index into a possibly row/column-broadcast operand.
#[inline]
fn bidx(shape: (usize, usize), r: usize, c: usize) -> usize {
    let rr = if shape.0 == 1 { 0 } else { r };
    let cc = if shape.1 == 1 { 0 } else { c };
    rr * shape.1 + cc
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::with_capacity(64),
            grads: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, Matrix>, op: Op, requires_grad: bool) -> Tensor {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Tensor(self.nodes.len() - 1)
    }

    /// Borrowed leaf that receives a gradient.
    pub fn param(&mut self, m: &'a Matrix) -> Tensor {
        self.push(Cow::Borrowed(m), Op::Leaf, true)
    }

    /// Owned leaf that receives a gradient.
    pub fn variable(&mut self, m: Matrix) -> Tensor {
        self.push(Cow::Owned(m), Op::Leaf, true)
    }

    pub fn constant(&mut self, m: Matrix) -> Tensor {
        self.push(Cow::Owned(m), Op::Leaf, false)
    }

    pub fn constant_ref(&mut self, m: &'a Matrix) -> Tensor {
        self.push(Cow::Borrowed(m), Op::Leaf, false)
    }

    /// Copies the current value into a new gradient-free leaf.
    pub fn detach(&mut self, t: Tensor) -> Tensor {
        let v = self.value(t).clone();
        self.constant(v)
    }

    pub fn value(&self, t: Tensor) -> &Matrix {
        &self.nodes[t.0].value
    }

    pub fn shape(&self, t: Tensor) -> (usize, usize) {
        self.nodes[t.0].value.shape()
    }

    pub fn requires_grad(&self, t: Tensor) -> bool {
        self.nodes[t.0].requires_grad
    }

    pub fn matmul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(Cow::Owned(out), Op::MatMul(a, b), rg))
    }

    pub fn unary(&mut self, op: Unary, a: Tensor) -> Result<Tensor> {
        let x = self.value(a);
        let out = match op {
            Unary::Neg => x.map(|v| -v),
            Unary::Tanh => x.map(f64::tanh),
            Unary::Relu => x.map(|v| v.max(0.0)),
            Unary::Exp => x.map(f64::exp),
            Unary::Log => {
                if let Some(bad) = x.data().iter().find(|v| !(**v > 0.0)) {
                    return Err(Error::Domain {
                        op: "log",
                        detail: format!("non-positive input {bad}"),
                    });
                }
                x.map(f64::ln)
            }
            Unary::Sqrt => {
                if let Some(bad) = x.data().iter().find(|v| !(**v >= 0.0)) {
                    return Err(Error::Domain {
                        op: "sqrt",
                        detail: format!("negative input {bad}"),
                    });
                }
                x.map(f64::sqrt)
            }
            Unary::Square => x.map(|v| v * v),
            Unary::Softplus => x.map(softplus),
            Unary::Sigmoid => x.map(sigmoid),
            Unary::Scale(c) => x.map(|v| c * v),
            Unary::AddScalar(c) => x.map(|v| v + c),
            Unary::Clamp(lo, hi) => x.map(|v| v.clamp(lo, hi)),
        };
        let rg = self.requires_grad(a);
        Ok(self.push(Cow::Owned(out), Op::Unary(op, a), rg))
    }

    fn unary_ok(&mut self, op: Unary, a: Tensor) -> Tensor {
        self.unary(op, a).expect("total unary op")
    }

    pub fn neg(&mut self, a: Tensor) -> Tensor {
        self.unary_ok(Unary::Neg, a)
    }
    pub fn tanh(&mut self, a: Tensor) -> Tensor {
        self.unary_ok(Unary::Tanh, a)
    }
    pub fn relu(&mut self, a: Tensor) -> Tensor {
        self.unary_ok(Unary::Relu, a)
    }
    pub fn exp(&mut self, a: Tensor) -> Tensor {
        self.unary_ok(Unary::Exp, a)
    }
    pub fn log(&mut self, a: Tensor) -> Result<Tensor> {
        self.unary(Unary::Log, a)
    }
    pub fn sqrt(&mut self, a: Tensor) -> Result<Tensor> {
        self.unary(Unary::Sqrt, a)
    }
    pub fn square(&mut self, a: Tensor) -> Tensor {
        self.unary_ok(Unary::Square, a)
    }
    pub fn softplus(&mut self, a: Tensor) -> Tensor {
        self.unary_ok(Unary::Softplus, a)
    }
    pub fn sigmoid(&mut self, a: Tensor) -> Tensor {
        self.unary_ok(Unary::Sigmoid, a)
    }
    pub fn scale(&mut self, a: Tensor, c: f64) -> Tensor {
        self.unary_ok(Unary::Scale(c), a)
    }
    pub fn add_scalar(&mut self, a: Tensor, c: f64) -> Tensor {
        self.unary_ok(Unary::AddScalar(c), a)
    }
    /// Clamp with pass-through gradient inside `[lo, hi]` and zero outside.
    pub fn clamp(&mut self, a: Tensor, lo: f64, hi: f64) -> Tensor {
        self.unary_ok(Unary::Clamp(lo, hi), a)
    }

    /// Elementwise binary op. Either operand may be broadcast along rows
    /// or columns (a 1×n row, an m×1 column, or a 1×1 scalar).
    pub fn binary(&mut self, op: Binary, a: Tensor, b: Tensor) -> Result<Tensor> {
        let name = match op {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
            Binary::Min => "minimum",
        };
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (rows, cols) = broadcast_shape(name, sa, sb)?;
        let (x, y) = (self.value(a).data(), self.value(b).data());
        let f: fn(f64, f64) -> f64 = match op {
            Binary::Add => |p, q| p + q,
            Binary::Sub => |p, q| p - q,
            Binary::Mul => |p, q| p * q,
            Binary::Div => |p, q| p / q,
            Binary::Min => f64::min,
        };
        let mut out = Vec::with_capacity(rows * cols);
        if sa == sb {
            out.extend(x.iter().zip(y).map(|(&p, &q)| f(p, q)));
        } else {
            for r in 0..rows {
                for c in 0..cols {
                    out.push(f(x[bidx(sa, r, c)], y[bidx(sb, r, c)]));
                }
            }
        }
        if op == Binary::Div
            && out.iter().any(|v| !v.is_finite())
            && x.iter().chain(y).all(|v| v.is_finite())
        {
            return Err(Error::Domain {
                op: "div",
                detail: "division by zero".into(),
            });
        }
        let rg = self.requires_grad(a) || self.requires_grad(b);
        let m = Matrix::from_vec(rows, cols, out)?;
        Ok(self.push(Cow::Owned(m), Op::Binary(op, a, b), rg))
    }

    pub fn add(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        self.binary(Binary::Add, a, b)
    }
    pub fn sub(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        self.binary(Binary::Sub, a, b)
    }
    pub fn mul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        self.binary(Binary::Mul, a, b)
    }
    pub fn div(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        self.binary(Binary::Div, a, b)
    }
    pub fn minimum(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        self.binary(Binary::Min, a, b)
    }

    pub fn reduce(&mut self, op: Reduce, a: Tensor, axis: Axis) -> Tensor {
        let x = self.value(a);
        let (rows, cols) = x.shape();
        let mut out = match axis {
            Axis::All => Matrix::scalar(x.sum()),
            Axis::Rows => {
                let mut m = Matrix::zeros(1, cols);
                for r in 0..rows {
                    for (o, v) in m.data_mut().iter_mut().zip(x.row(r)) {
                        *o += v;
                    }
                }
                m
            }
            Axis::Cols => {
                let d: Vec<f64> = (0..rows).map(|r| x.row(r).iter().sum()).collect();
                Matrix::column_vector(&d)
            }
        };
        if op == Reduce::Mean {
            let n = match axis {
                Axis::All => rows * cols,
                Axis::Rows => rows,
                Axis::Cols => cols,
            };
            out.scale_in_place(1.0 / n as f64);
        }
        let rg = self.requires_grad(a);
        self.push(Cow::Owned(out), Op::Reduce(op, axis, a), rg)
    }

    pub fn sum(&mut self, a: Tensor, axis: Axis) -> Tensor {
        self.reduce(Reduce::Sum, a, axis)
    }

    pub fn mean(&mut self, a: Tensor, axis: Axis) -> Tensor {
        self.reduce(Reduce::Mean, a, axis)
    }

    pub fn slice_cols(&mut self, a: Tensor, start: usize, end: usize) -> Result<Tensor> {
        let x = self.value(a);
        if start > end || end > x.cols() {
            return Err(Error::Shape {
                op: "slice_cols",
                lhs: x.shape(),
                rhs: (start, end),
            });
        }
        let out = x.slice_cols(start, end);
        let rg = self.requires_grad(a);
        Ok(self.push(Cow::Owned(out), Op::SliceCols(a, start), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Tensor]) -> Result<Tensor> {
        let vals: Vec<&Matrix> = parts.iter().map(|&t| self.value(t)).collect();
        let out = Matrix::hstack(&vals)?;
        let rg = parts.iter().any(|&t| self.requires_grad(t));
        Ok(self.push(Cow::Owned(out), Op::ConcatCols(parts.to_vec()), rg))
    }

    /// `mu + exp(log_std) ⊙ noise`, differentiable in `mu` and `log_std`.
    pub fn reparam_gaussian(
        &mut self,
        mu: Tensor,
        log_std: Tensor,
        noise: Tensor,
    ) -> Result<Tensor> {
        let (sm, ss, sn) = (self.shape(mu), self.shape(log_std), self.shape(noise));
        if sm != ss || sm != sn {
            return Err(Error::Shape {
                op: "reparam_gaussian",
                lhs: sm,
                rhs: if sm != ss { ss } else { sn },
            });
        }
        let std = self.exp(log_std);
        let scaled = self.mul(std, noise)?;
        self.add(mu, scaled)
    }

    /// Populates gradients of `loss` with respect to every node that
    /// requires one. `loss` must be 1×1.
    pub fn backward(&mut self, loss: Tensor) -> Result<()> {
        if self.backward_done {
            return Err(Error::Backward(
                "backward already ran on this graph; call reset() first".into(),
            ));
        }
        if self.shape(loss) != (1, 1) {
            return Err(Error::Backward(format!(
                "root must be scalar, got {:?}",
                self.shape(loss)
            )));
        }
        self.backward_done = true;
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(Matrix::scalar(1.0));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(dy) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &dy);
            self.grads[i] = Some(dy);
        }
        Ok(())
    }

    fn propagate(&mut self, i: usize, dy: &Matrix) {
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    gemm(dy, false, &nodes[b.0].value, true, ga, 1.0);
                }
                if let Some(gb) = slot(nodes, grads, *b) {
                    gemm(&nodes[a.0].value, true, dy, false, gb, 1.0);
                }
            }
            Op::Unary(u, a) => {
                let u = *u;
                let x = nodes[a.0].value.data();
                let y = nodes[i].value.data();
                if let Some(ga) = slot(nodes, grads, *a) {
                    for (k, (o, &dv)) in ga.data_mut().iter_mut().zip(dy.data()).enumerate() {
                        let (xv, yv) = (x[k], y[k]);
                        *o += match u {
                            Unary::Neg => -dv,
                            Unary::Tanh => dv * (1.0 - yv * yv),
                            Unary::Relu => {
                                if xv > 0.0 {
                                    dv
                                } else {
                                    0.0
                                }
                            }
                            Unary::Exp => dv * yv,
                            Unary::Log => dv / xv,
                            Unary::Sqrt => dv * 0.5 / yv,
                            Unary::Square => 2.0 * xv * dv,
                            Unary::Softplus => dv * sigmoid(xv),
                            Unary::Sigmoid => dv * yv * (1.0 - yv),
                            Unary::Scale(c) => c * dv,
                            Unary::AddScalar(_) => dv,
                            Unary::Clamp(lo, hi) => {
                                if xv >= lo && xv <= hi {
                                    dv
                                } else {
                                    0.0
                                }
                            }
                        };
                    }
                }
            }
            Op::Binary(op, a, b) => propagate_binary(nodes, grads, *op, *a, *b, dy),
            Op::Reduce(op, axis, a) => {
                let (rows, cols) = nodes[a.0].value.shape();
                let n = match (op, axis) {
                    (Reduce::Sum, _) => 1.0,
                    (Reduce::Mean, Axis::All) => (rows * cols) as f64,
                    (Reduce::Mean, Axis::Rows) => rows as f64,
                    (Reduce::Mean, Axis::Cols) => cols as f64,
                };
                let ds = dy.shape();
                if let Some(ga) = slot(nodes, grads, *a) {
                    let inv = 1.0 / n;
                    let g = ga.data_mut();
                    for r in 0..rows {
                        for c in 0..cols {
                            g[r * cols + c] += dy.data()[bidx(ds, r, c)] * inv;
                        }
                    }
                }
            }
            Op::SliceCols(a, start) => {
                let (start, w) = (*start, dy.cols());
                if let Some(ga) = slot(nodes, grads, *a) {
                    for r in 0..dy.rows() {
                        let row = &mut ga.row_mut(r)[start..start + w];
                        for (o, v) in row.iter_mut().zip(dy.row(r)) {
                            *o += v;
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &t in parts {
                    let w = nodes[t.0].value.cols();
                    if let Some(g) = slot(nodes, grads, t) {
                        for r in 0..dy.rows() {
                            for (o, v) in g.row_mut(r).iter_mut().zip(&dy.row(r)[start..start + w])
                            {
                                *o += v;
                            }
                        }
                    }
                    start += w;
                }
            }
        }
    }

    pub fn grad(&self, t: Tensor) -> Option<&Matrix> {
        self.grads.get(t.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `t`, or zeros when nothing flowed into it.
    pub fn grad_or_zeros(&self, t: Tensor) -> Matrix {
        match self.grad(t) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shape(t);
                Matrix::zeros(r, c)
            }
        }
    }

    /// Clears gradients so that `backward` may run again.
    pub fn reset(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }
}

/// Gradient accumulator for `t`, allocated on first use; `None` when `t`
/// does not require a gradient.
fn slot<'g>(
    nodes: &[Node<'_>],
    grads: &'g mut [Option<Matrix>],
    t: Tensor,
) -> Option<&'g mut Matrix> {
    let node = &nodes[t.0];
    if !node.requires_grad {
        return None;
    }
    let (r, c) = node.value.shape();
    Some(grads[t.0].get_or_insert_with(|| Matrix::zeros(r, c)))
}

fn propagate_binary(
    nodes: &[Node<'_>],
    grads: &mut [Option<Matrix>],
    op: Binary,
    a: Tensor,
    b: Tensor,
    dy: &Matrix,
) {
    let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
    let (sa, sb) = (va.shape(), vb.shape());
    let (rows, cols) = dy.shape();
    let (x, y, d) = (va.data(), vb.data(), dy.data());
    // Local partials (∂out/∂a, ∂out/∂b).
    let partials = |p: f64, q: f64| -> (f64, f64) {
        match op {
            Binary::Add => (1.0, 1.0),
            Binary::Sub => (1.0, -1.0),
            Binary::Mul => (q, p),
            Binary::Div => (1.0 / q, -p / (q * q)),
            Binary::Min => {
                if p <= q {
                    (1.0, 0.0)
                } else {
                    (0.0, 1.0)
                }
            }
        }
    };
    let mut ga = nodes[a.0].requires_grad.then(|| vec![0.0; sa.0 * sa.1]);
    let mut gb = nodes[b.0].requires_grad.then(|| vec![0.0; sb.0 * sb.1]);
    for r in 0..rows {
        for c in 0..cols {
            let (ia, ib) = (bidx(sa, r, c), bidx(sb, r, c));
            let (pa, pb) = partials(x[ia], y[ib]);
            let dv = d[r * cols + c];
            if let Some(g) = ga.as_mut() {
                g[ia] += dv * pa;
            }
            if let Some(g) = gb.as_mut() {
                g[ib] += dv * pb;
            }
        }
    }
    for (t, g) in [(a, ga), (b, gb)] {
        if let (Some(g), Some(acc)) = (g, slot(nodes, grads, t)) {
            for (o, v) in acc.data_mut().iter_mut().zip(g) {
                *o += v;
            }
        }
    }
}
