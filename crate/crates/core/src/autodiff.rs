//! Dense-tensor reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation applied to its [`Tensor`]s during the
//! forward pass; [`Tensor::backward`] then walks the record in reverse and
//! accumulates gradients on every reachable leaf that was created with
//! gradient tracking. Tensors are row-major `f64` buffers of rank up to 3.
//! Broadcasting is limited to a `[1, n]` operand against `[m, n]` in the
//! elementwise binary ops, which is all the bias additions and gain
//! weightings here need.
//!
//! A tape and its tensors belong to one thread; independent tapes may run
//! in parallel.

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use std::cell::RefCell;
use std::rc::Rc;
use thiserror::Error;

pub type Shape = Vec<usize>;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Shape,
        rhs: Shape,
    },
    #[error("{op}: expected data of length {expected}, got {got}")]
    DataLength {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("backward requires a scalar, got shape {shape:?}")]
    NotScalar { shape: Shape },
    #[error("reparam_sample: variance must be nonnegative, found {value}")]
    NegativeVariance { value: f64 },
    #[error("slice [{start}, {end}) out of bounds for last axis of {shape:?}")]
    SliceOutOfBounds {
        start: usize,
        end: usize,
        shape: Shape,
    },
    #[error("reshape: cannot view {from:?} ({from_len} elements) as {to:?} ({to_len} elements)")]
    ReshapeMismatch {
        from: Shape,
        from_len: usize,
        to: Shape,
        to_len: usize,
    },
    #[error("tensors belong to different tapes")]
    TapeMismatch,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Splits a shape into (rows, last-axis columns): the view used by concat,
/// slice, and row broadcasting.
fn rows_cols(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        0 => (1, 1),
        _ => {
            let cols = shape[shape.len() - 1];
            (numel(shape) / cols.max(1), cols)
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    /// `a * x + b` with scalar constants.
    Affine(usize, f64, f64),
    Tanh(usize),
    Sigmoid(usize),
    Exp(usize),
    Log(usize),
    Square(usize),
    ClampMin(usize, f64),
    Concat(Vec<usize>),
    Slice {
        input: usize,
        start: usize,
        end: usize,
    },
    Reshape(usize),
    Sum(usize),
    Mean(usize),
    /// `mu + sqrt(var) * eps` with the drawn noise saved for the backward pass.
    Reparam {
        mu: usize,
        var: usize,
        eps: Vec<f64>,
    },
}

struct TapeInner {
    values: Vec<Vec<f64>>,
    shapes: Vec<Shape>,
    grads: Vec<Option<Vec<f64>>>,
    ops: Vec<Op>,
    requires: Vec<bool>,
}

impl TapeInner {
    fn push(&mut self, value: Vec<f64>, shape: Shape, op: Op, requires: bool) -> usize {
        let idx = self.values.len();
        self.values.push(value);
        self.shapes.push(shape);
        self.grads.push(None);
        self.ops.push(op);
        self.requires.push(requires);
        idx
    }
}

/// Shared recording surface for one computation graph.
#[derive(Clone)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            inner: Rc::new(RefCell::new(TapeInner {
                values: Vec::new(),
                shapes: Vec::new(),
                grads: Vec::new(),
                ops: Vec::new(),
                requires: Vec::new(),
            })),
        }
    }

    fn same_tape(&self, other: &Tape) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    /// Creates a gradient-tracked leaf.
    pub fn var(&self, shape: &[usize], data: Vec<f64>) -> Result<Tensor, TensorError> {
        self.leaf(shape, data, true)
    }

    /// Creates a leaf that never receives gradients.
    pub fn constant(&self, shape: &[usize], data: Vec<f64>) -> Result<Tensor, TensorError> {
        self.leaf(shape, data, false)
    }

    pub fn leaf(
        &self,
        shape: &[usize],
        data: Vec<f64>,
        requires_grad: bool,
    ) -> Result<Tensor, TensorError> {
        let n = numel(shape);
        if data.len() != n {
            return Err(TensorError::DataLength {
                op: "leaf",
                expected: n,
                got: data.len(),
            });
        }
        let idx = self
            .inner
            .borrow_mut()
            .push(data, shape.to_vec(), Op::Leaf, requires_grad);
        Ok(Tensor {
            tape: self.clone(),
            idx,
            shape: shape.to_vec(),
        })
    }

    pub fn zeros(&self, shape: &[usize], requires_grad: bool) -> Tensor {
        self.leaf(shape, vec![0.0; numel(shape)], requires_grad)
            .expect("length matches by construction")
    }

    pub fn scalar(&self, v: f64) -> Tensor {
        self.leaf(&[1], vec![v], false).expect("scalar leaf")
    }

    /// Drops all accumulated gradients.
    pub fn zero_grads(&self) {
        for g in self.inner.borrow_mut().grads.iter_mut() {
            *g = None;
        }
    }

    /// Number of recorded nodes (diagnostic).
    pub fn len(&self) -> usize {
        self.inner.borrow().values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Draws `mu + sqrt(var) * eps` with `eps ~ N(0, I)`. Gradients flow to
    /// `mu` and `var` but not to the noise. Where `var` is exactly zero the
    /// sample equals the mean and the derivative to `var` is taken as zero.
    pub fn reparam_sample(
        &self,
        mu: &Tensor,
        var: &Tensor,
        rng: &mut ChaCha12Rng,
    ) -> Result<Tensor, TensorError> {
        if !self.same_tape(&mu.tape) || !self.same_tape(&var.tape) {
            return Err(TensorError::TapeMismatch);
        }
        if mu.shape != var.shape {
            return Err(TensorError::ShapeMismatch {
                op: "reparam_sample",
                lhs: mu.shape.clone(),
                rhs: var.shape.clone(),
            });
        }
        let mut inner = self.inner.borrow_mut();
        if let Some(&bad) = inner.values[var.idx].iter().find(|v| **v < 0.0) {
            return Err(TensorError::NegativeVariance { value: bad });
        }
        let n = numel(&mu.shape);
        let eps: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let out: Vec<f64> = (0..n)
            .map(|i| inner.values[mu.idx][i] + inner.values[var.idx][i].sqrt() * eps[i])
            .collect();
        let requires = inner.requires[mu.idx] || inner.requires[var.idx];
        let idx = inner.push(
            out,
            mu.shape.clone(),
            Op::Reparam {
                mu: mu.idx,
                var: var.idx,
                eps,
            },
            requires,
        );
        Ok(Tensor {
            tape: self.clone(),
            idx,
            shape: mu.shape.clone(),
        })
    }
}

/// Handle onto one node of a [`Tape`].
#[derive(Clone)]
pub struct Tensor {
    tape: Tape,
    idx: usize,
    shape: Shape,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("idx", &self.idx)
            .field("shape", &self.shape)
            .finish()
    }
}

/// How a binary elementwise op pairs its operands.
enum BinKind {
    Equal,
    /// lhs is the broadcast `[1, n]` row.
    LhsRow,
    /// rhs is the broadcast `[1, n]` row.
    RhsRow,
}

fn bin_kind(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Result<BinKind, TensorError> {
    if lhs == rhs {
        return Ok(BinKind::Equal);
    }
    let (lr, lc) = rows_cols(lhs);
    let (rr, rc) = rows_cols(rhs);
    if lc == rc && rr == 1 && lr > 1 {
        return Ok(BinKind::RhsRow);
    }
    if lc == rc && lr == 1 && rr > 1 {
        return Ok(BinKind::LhsRow);
    }
    Err(TensorError::ShapeMismatch {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    })
}

impl Tensor {
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// The tape this tensor is recorded on.
    pub fn tape(&self) -> Tape {
        self.tape.clone()
    }

    pub fn numel(&self) -> usize {
        numel(&self.shape)
    }

    /// Copies the node's value out of the tape.
    pub fn value(&self) -> Vec<f64> {
        self.tape.inner.borrow().values[self.idx].clone()
    }

    pub fn scalar_value(&self) -> f64 {
        self.tape.inner.borrow().values[self.idx][0]
    }

    /// Accumulated gradient, if any backward pass reached this node.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.tape.inner.borrow().grads[self.idx].clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.inner.borrow().requires[self.idx]
    }

    fn unary(&self, op: Op, value: Vec<f64>, shape: Shape) -> Tensor {
        let requires = self.requires_grad();
        let idx = self.tape.inner.borrow_mut().push(value, shape.clone(), op, requires);
        Tensor {
            tape: self.tape.clone(),
            idx,
            shape,
        }
    }

    fn binary(
        &self,
        rhs: &Tensor,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        make_op: impl Fn(usize, usize) -> Op,
    ) -> Result<Tensor, TensorError> {
        if !self.tape.same_tape(&rhs.tape) {
            return Err(TensorError::TapeMismatch);
        }
        let kind = bin_kind(name, &self.shape, &rhs.shape)?;
        let mut inner = self.tape.inner.borrow_mut();
        let (a, b) = (&inner.values[self.idx], &inner.values[rhs.idx]);
        let (out, shape) = match kind {
            BinKind::Equal => {
                let out: Vec<f64> = a.iter().zip(b.iter()).map(|(&x, &y)| f(x, y)).collect();
                (out, self.shape.clone())
            }
            BinKind::RhsRow => {
                let (rows, cols) = rows_cols(&self.shape);
                let mut out = vec![0.0; rows * cols];
                for r in 0..rows {
                    for c in 0..cols {
                        out[r * cols + c] = f(a[r * cols + c], b[c]);
                    }
                }
                (out, self.shape.clone())
            }
            BinKind::LhsRow => {
                let (rows, cols) = rows_cols(&rhs.shape);
                let mut out = vec![0.0; rows * cols];
                for r in 0..rows {
                    for c in 0..cols {
                        out[r * cols + c] = f(a[c], b[r * cols + c]);
                    }
                }
                (out, rhs.shape.clone())
            }
        };
        let requires = inner.requires[self.idx] || inner.requires[rhs.idx];
        let idx = inner.push(out, shape.clone(), make_op(self.idx, rhs.idx), requires);
        Ok(Tensor {
            tape: self.tape.clone(),
            idx,
            shape,
        })
    }

    pub fn add(&self, rhs: &Tensor) -> Result<Tensor, TensorError> {
        self.binary(rhs, "add", |x, y| x + y, Op::Add)
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor, TensorError> {
        self.binary(rhs, "sub", |x, y| x - y, Op::Sub)
    }

    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor, TensorError> {
        self.binary(rhs, "mul", |x, y| x * y, Op::Mul)
    }

    pub fn div(&self, rhs: &Tensor) -> Result<Tensor, TensorError> {
        self.binary(rhs, "div", |x, y| x / y, Op::Div)
    }

    /// `a * self + b` elementwise with scalar constants.
    pub fn affine(&self, a: f64, b: f64) -> Tensor {
        let value = self.tape.inner.borrow().values[self.idx]
            .iter()
            .map(|&x| a * x + b)
            .collect();
        self.unary(Op::Affine(self.idx, a, b), value, self.shape.clone())
    }

    pub fn neg(&self) -> Tensor {
        self.affine(-1.0, 0.0)
    }

    pub fn tanh(&self) -> Tensor {
        let value = self.map_values(f64::tanh);
        self.unary(Op::Tanh(self.idx), value, self.shape.clone())
    }

    pub fn sigmoid(&self) -> Tensor {
        let value = self.map_values(|x| 1.0 / (1.0 + (-x).exp()));
        self.unary(Op::Sigmoid(self.idx), value, self.shape.clone())
    }

    pub fn exp(&self) -> Tensor {
        let value = self.map_values(f64::exp);
        self.unary(Op::Exp(self.idx), value, self.shape.clone())
    }

    pub fn log(&self) -> Tensor {
        let value = self.map_values(f64::ln);
        self.unary(Op::Log(self.idx), value, self.shape.clone())
    }

    pub fn square(&self) -> Tensor {
        let value = self.map_values(|x| x * x);
        self.unary(Op::Square(self.idx), value, self.shape.clone())
    }

    /// Elementwise `max(self, floor)`.
    pub fn clamp_min(&self, floor: f64) -> Tensor {
        let value = self.map_values(|x| x.max(floor));
        self.unary(Op::ClampMin(self.idx, floor), value, self.shape.clone())
    }

    fn map_values(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.tape.inner.borrow().values[self.idx].iter().map(|&x| f(x)).collect()
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor, TensorError> {
        if !self.tape.same_tape(&rhs.tape) {
            return Err(TensorError::TapeMismatch);
        }
        let mismatch = || TensorError::ShapeMismatch {
            op: "matmul",
            lhs: self.shape.clone(),
            rhs: rhs.shape.clone(),
        };
        if self.shape.len() != 2 || rhs.shape.len() != 2 || self.shape[1] != rhs.shape[0] {
            return Err(mismatch());
        }
        let (m, k, n) = (self.shape[0], self.shape[1], rhs.shape[1]);
        let mut inner = self.tape.inner.borrow_mut();
        let mut out = vec![0.0; m * n];
        matmul_nn(&inner.values[self.idx], &inner.values[rhs.idx], m, k, n, &mut out);
        let requires = inner.requires[self.idx] || inner.requires[rhs.idx];
        let idx = inner.push(out, vec![m, n], Op::Matmul(self.idx, rhs.idx), requires);
        Ok(Tensor {
            tape: self.tape.clone(),
            idx,
            shape: vec![m, n],
        })
    }

    /// Concatenates along the last axis. All leading dimensions must agree.
    pub fn concat(parts: &[&Tensor]) -> Result<Tensor, TensorError> {
        assert!(!parts.is_empty(), "concat of zero tensors");
        let first = parts[0];
        let (rows, _) = rows_cols(&first.shape);
        let lead = &first.shape[..first.shape.len() - 1];
        let mut total_cols = 0;
        for p in parts.iter() {
            if !first.tape.same_tape(&p.tape) {
                return Err(TensorError::TapeMismatch);
            }
            if p.shape.len() != first.shape.len() || &p.shape[..p.shape.len() - 1] != lead {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: first.shape.clone(),
                    rhs: p.shape.clone(),
                });
            }
            total_cols += p.shape[p.shape.len() - 1];
        }
        let mut shape = lead.to_vec();
        shape.push(total_cols);
        let mut inner = first.tape.inner.borrow_mut();
        let mut out = vec![0.0; rows * total_cols];
        let mut offset = 0;
        for p in parts.iter() {
            let cols = p.shape[p.shape.len() - 1];
            let data = &inner.values[p.idx];
            for r in 0..rows {
                out[r * total_cols + offset..r * total_cols + offset + cols]
                    .copy_from_slice(&data[r * cols..(r + 1) * cols]);
            }
            offset += cols;
        }
        let requires = parts.iter().any(|p| inner.requires[p.idx]);
        let indices: Vec<usize> = parts.iter().map(|p| p.idx).collect();
        let idx = inner.push(out, shape.clone(), Op::Concat(indices), requires);
        Ok(Tensor {
            tape: first.tape.clone(),
            idx,
            shape,
        })
    }

    /// Takes columns `[start, end)` of the last axis.
    pub fn slice(&self, start: usize, end: usize) -> Result<Tensor, TensorError> {
        let (rows, cols) = rows_cols(&self.shape);
        if start >= end || end > cols {
            return Err(TensorError::SliceOutOfBounds {
                start,
                end,
                shape: self.shape.clone(),
            });
        }
        let width = end - start;
        let mut shape = self.shape.clone();
        let last = shape.len() - 1;
        shape[last] = width;
        let mut inner = self.tape.inner.borrow_mut();
        let data = &inner.values[self.idx];
        let mut out = vec![0.0; rows * width];
        for r in 0..rows {
            out[r * width..(r + 1) * width]
                .copy_from_slice(&data[r * cols + start..r * cols + end]);
        }
        let requires = inner.requires[self.idx];
        let idx = inner.push(
            out,
            shape.clone(),
            Op::Slice {
                input: self.idx,
                start,
                end,
            },
            requires,
        );
        Ok(Tensor {
            tape: self.tape.clone(),
            idx,
            shape,
        })
    }

    /// Views the same elements under a different shape.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor, TensorError> {
        let from_len = self.numel();
        let to_len = numel(shape);
        if from_len != to_len {
            return Err(TensorError::ReshapeMismatch {
                from: self.shape.clone(),
                from_len,
                to: shape.to_vec(),
                to_len,
            });
        }
        let value = self.value();
        Ok(self.unary(Op::Reshape(self.idx), value, shape.to_vec()))
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&self) -> Tensor {
        let v: f64 = self.tape.inner.borrow().values[self.idx].iter().sum();
        self.unary(Op::Sum(self.idx), vec![v], vec![1])
    }

    /// Mean of all elements, as a `[1]` tensor.
    pub fn mean(&self) -> Tensor {
        let inner = self.tape.inner.borrow();
        let data = &inner.values[self.idx];
        let v: f64 = data.iter().sum::<f64>() / data.len() as f64;
        drop(inner);
        self.unary(Op::Mean(self.idx), vec![v], vec![1])
    }

    /// Backpropagates from this scalar, accumulating into leaf gradients.
    /// Repeated calls keep accumulating until [`Tape::zero_grads`].
    pub fn backward(&self) -> Result<(), TensorError> {
        if self.numel() != 1 {
            return Err(TensorError::NotScalar {
                shape: self.shape.clone(),
            });
        }
        let mut inner = self.tape.inner.borrow_mut();
        let inner = &mut *inner;
        // Seed; local seed buffer keeps this backward independent of any
        // previously accumulated gradient on the output node.
        let mut seeds: Vec<Option<Vec<f64>>> = vec![None; inner.values.len()];
        seeds[self.idx] = Some(vec![1.0]);

        for i in (0..=self.idx).rev() {
            let Some(go) = seeds[i].take() else { continue };
            if !inner.requires[i] {
                continue;
            }
            // Leaves bank their gradient; interior nodes push to parents.
            if let Op::Leaf = inner.ops[i] {
                let g = inner.grads[i].get_or_insert_with(|| vec![0.0; go.len()]);
                for (gi, goi) in g.iter_mut().zip(go.iter()) {
                    *gi += goi;
                }
                continue;
            }
            backward_op(inner, i, &go, &mut seeds);
        }
        Ok(())
    }
}

/// Pushes the output gradient `go` of node `i` into its parents' seed
/// buffers.
fn backward_op(inner: &mut TapeInner, i: usize, go: &[f64], seeds: &mut [Option<Vec<f64>>]) {
    let op = inner.ops[i].clone();
    let mut push = |inner: &TapeInner, parent: usize, contribution: &dyn Fn(&mut [f64])| {
        if !inner.requires[parent] {
            return;
        }
        let buf = seeds[parent].get_or_insert_with(|| vec![0.0; inner.values[parent].len()]);
        contribution(buf);
    };

    // Adds `go` (shaped like node i) into a parent that may be a broadcast
    // row, reducing over rows when needed.
    let accumulate_maybe_reduced = |buf: &mut [f64], go: &[f64]| {
        if buf.len() == go.len() {
            for (b, g) in buf.iter_mut().zip(go.iter()) {
                *b += g;
            }
        } else {
            let cols = buf.len();
            for (j, g) in go.iter().enumerate() {
                buf[j % cols] += g;
            }
        }
    };

    match op {
        Op::Leaf => unreachable!("leaves are handled by the caller"),
        Op::Matmul(a, b) => {
            let (m, k) = (inner.shapes[a][0], inner.shapes[a][1]);
            let n = inner.shapes[b][1];
            push(inner, a, &|buf| {
                matmul_nt(go, &inner.values[b], m, n, k, buf);
            });
            push(inner, b, &|buf| {
                matmul_tn(&inner.values[a], go, m, k, n, buf);
            });
        }
        Op::Add(a, b) => {
            push(inner, a, &|buf| accumulate_maybe_reduced(buf, go));
            push(inner, b, &|buf| accumulate_maybe_reduced(buf, go));
        }
        Op::Sub(a, b) => {
            push(inner, a, &|buf| accumulate_maybe_reduced(buf, go));
            push(inner, b, &|buf| {
                if buf.len() == go.len() {
                    for (x, g) in buf.iter_mut().zip(go.iter()) {
                        *x -= g;
                    }
                } else {
                    let cols = buf.len();
                    for (j, g) in go.iter().enumerate() {
                        buf[j % cols] -= g;
                    }
                }
            });
        }
        Op::Mul(a, b) => {
            let av = &inner.values[a];
            let bv = &inner.values[b];
            push(inner, a, &|buf| {
                accumulate_scaled(buf, go, |j| bcast(bv, j, go.len()));
            });
            push(inner, b, &|buf| {
                accumulate_scaled(buf, go, |j| bcast(av, j, go.len()));
            });
        }
        Op::Div(a, b) => {
            let av = &inner.values[a];
            let bv = &inner.values[b];
            push(inner, a, &|buf| {
                accumulate_scaled(buf, go, |j| 1.0 / bcast(bv, j, go.len()));
            });
            push(inner, b, &|buf| {
                accumulate_scaled(buf, go, |j| {
                    let bj = bcast(bv, j, go.len());
                    -bcast(av, j, go.len()) / (bj * bj)
                });
            });
        }
        Op::Affine(a, scale, _bias) => {
            push(inner, a, &|buf| {
                for (b, g) in buf.iter_mut().zip(go.iter()) {
                    *b += scale * g;
                }
            });
        }
        Op::Tanh(a) => {
            let out = &inner.values[i];
            push(inner, a, &|buf| {
                for j in 0..go.len() {
                    buf[j] += go[j] * (1.0 - out[j] * out[j]);
                }
            });
        }
        Op::Sigmoid(a) => {
            let out = &inner.values[i];
            push(inner, a, &|buf| {
                for j in 0..go.len() {
                    buf[j] += go[j] * out[j] * (1.0 - out[j]);
                }
            });
        }
        Op::Exp(a) => {
            let out = &inner.values[i];
            push(inner, a, &|buf| {
                for j in 0..go.len() {
                    buf[j] += go[j] * out[j];
                }
            });
        }
        Op::Log(a) => {
            let av = &inner.values[a];
            push(inner, a, &|buf| {
                for j in 0..go.len() {
                    buf[j] += go[j] / av[j];
                }
            });
        }
        Op::Square(a) => {
            let av = &inner.values[a];
            push(inner, a, &|buf| {
                for j in 0..go.len() {
                    buf[j] += go[j] * 2.0 * av[j];
                }
            });
        }
        Op::ClampMin(a, floor) => {
            let av = &inner.values[a];
            push(inner, a, &|buf| {
                for j in 0..go.len() {
                    if av[j] > floor {
                        buf[j] += go[j];
                    }
                }
            });
        }
        Op::Concat(parts) => {
            let (rows, total_cols) = rows_cols(&inner.shapes[i]);
            let mut offset = 0;
            for &p in parts.iter() {
                let cols = inner.shapes[p][inner.shapes[p].len() - 1];
                let off = offset;
                push(inner, p, &|buf| {
                    for r in 0..rows {
                        for c in 0..cols {
                            buf[r * cols + c] += go[r * total_cols + off + c];
                        }
                    }
                });
                offset += cols;
            }
        }
        Op::Slice { input, start, end } => {
            let (rows, cols) = rows_cols(&inner.shapes[input]);
            let width = end - start;
            push(inner, input, &|buf| {
                for r in 0..rows {
                    for c in 0..width {
                        buf[r * cols + start + c] += go[r * width + c];
                    }
                }
            });
        }
        Op::Reshape(a) => {
            push(inner, a, &|buf| {
                for (b, g) in buf.iter_mut().zip(go.iter()) {
                    *b += g;
                }
            });
        }
        Op::Sum(a) => {
            let g = go[0];
            push(inner, a, &|buf| {
                for b in buf.iter_mut() {
                    *b += g;
                }
            });
        }
        Op::Mean(a) => {
            let n = inner.values[a].len() as f64;
            let g = go[0] / n;
            push(inner, a, &|buf| {
                for b in buf.iter_mut() {
                    *b += g;
                }
            });
        }
        Op::Reparam { mu, var, eps } => {
            push(inner, mu, &|buf| {
                for (b, g) in buf.iter_mut().zip(go.iter()) {
                    *b += g;
                }
            });
            let vv = &inner.values[var];
            push(inner, var, &|buf| {
                for j in 0..go.len() {
                    if vv[j] > 0.0 {
                        buf[j] += go[j] * eps[j] / (2.0 * vv[j].sqrt());
                    }
                }
            });
        }
    }
}

/// Reads element `j` of a buffer that is either full-size or a broadcast
/// row against a buffer of `full` elements.
#[inline]
fn bcast(v: &[f64], j: usize, full: usize) -> f64 {
    if v.len() == full {
        v[j]
    } else {
        v[j % v.len()]
    }
}

/// `buf[j or j % cols] += go[j] * scale(j)`, reducing over rows when `buf`
/// is a broadcast row.
#[inline]
fn accumulate_scaled(buf: &mut [f64], go: &[f64], scale: impl Fn(usize) -> f64) {
    if buf.len() == go.len() {
        for (j, g) in go.iter().enumerate() {
            buf[j] += g * scale(j);
        }
    } else {
        let cols = buf.len();
        for (j, g) in go.iter().enumerate() {
            buf[j % cols] += g * scale(j);
        }
    }
}

/// `out += a[m,k] * b[k,n]`
fn matmul_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (l, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[l * n..(l + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
}

/// `out += a[m,n] * b[k,n]^T`, result `m x k` (rows of `a` dotted with rows of `b`).
fn matmul_nt(a: &[f64], b: &[f64], m: usize, n: usize, k: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        let orow = &mut out[i * k..(i + 1) * k];
        for j in 0..k {
            let brow = &b[j * n..(j + 1) * n];
            let mut acc = 0.0;
            for l in 0..n {
                acc += arow[l] * brow[l];
            }
            orow[j] += acc;
        }
    }
}

/// `out += a[m,k]^T * b[m,n]`, result `k x n`.
fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (j, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[j * n..(j + 1) * n];
            for l in 0..n {
                orow[l] += av * brow[l];
            }
        }
    }
}
