//! Tape-based reverse-mode differentiation over dense 2D tensors.
//!
//! Every value is an `m × n` matrix of `f64`; vectors are `1 × n` rows and
//! scalars are `1 × 1`. Operations append a node to the [`Graph`], which is
//! therefore always in topological order. [`Graph::backward`] walks the tape
//! once in reverse and returns a [`Gradients`] table for the tracked leaves.
//!
//! Binary elementwise operations broadcast an operand whose extent is 1 along
//! an axis. Nothing more general.

use std::borrow::Cow;
use std::ops::Range;

use ndarray::{Array2, Axis, Zip, s};

use crate::error::{Error, Result};

pub type Matrix = Array2<f64>;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Reduction axis. `Rows` collapses the row index (result `1 × n`),
/// `Cols` collapses the column index (result `m × 1`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduce {
    All,
    Rows,
    Cols,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Neg,
    Exp,
    Log,
    Square,
    Abs,
    Sigmoid,
    Relu,
    Tanh,
    Softplus,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Binary(Binary, Var, Var),
    Unary(Unary, Var),
    Affine { x: Var, scale: f64 },
    Sum(Var, Reduce),
    Mean(Var, Reduce),
    StdBessel(Var),
    Transpose(Var),
    Row(Var, usize),
    StackRows(Vec<Var>),
    ConcatCols(Var, Var),
    Conv1d { x: Var, kernel: Var, width: usize },
    SegmentMean { x: Var, segments: Vec<Range<usize>> },
}

#[derive(Debug)]
struct Node<'a> {
    value: Cow<'a, Matrix>,
    op: Op,
    tracked: bool,
}

/// A computation tape. Parameter leaves may borrow their values for `'a`.
#[derive(Debug, Default)]
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
    backward_done: bool,
}

/// Gradients of a scalar loss with respect to tracked nodes.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
    tracked: Vec<bool>,
}

impl Gradients {
    /// Gradient for `v`. Tracked leaves unreachable from the loss get zeros;
    /// untracked nodes return `None`.
    pub fn get(&self, v: Var) -> Option<Matrix> {
        if !self.tracked[v.0] {
            return None;
        }
        Some(match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Matrix::zeros(self.shapes[v.0]),
        })
    }
}

fn shape(m: &Matrix) -> (usize, usize) {
    m.dim()
}

fn broadcast_dim(op: &'static str, a: (usize, usize), b: (usize, usize)) -> Result<(usize, usize)> {
    fn one(x: usize, y: usize) -> Option<usize> {
        if x == y {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else if y == 1 {
            Some(x)
        } else {
            None
        }
    }
    match (one(a.0, b.0), one(a.1, b.1)) {
        (Some(r), Some(c)) => Ok((r, c)),
        _ => Err(Error::shape(op, format!("{a:?} vs {b:?}"))),
    }
}

/// Sum `g` down to `target` along broadcast axes.
fn reduce_to(g: Matrix, target: (usize, usize)) -> Matrix {
    let mut g = g;
    if target.0 == 1 && g.nrows() != 1 {
        g = g.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if target.1 == 1 && g.ncols() != 1 {
        g = g.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    g
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn unary_fwd(op: Unary, x: f64) -> f64 {
    match op {
        Unary::Neg => -x,
        Unary::Exp => x.exp(),
        Unary::Log => x.ln(),
        Unary::Square => x * x,
        Unary::Abs => x.abs(),
        Unary::Sigmoid => sigmoid(x),
        Unary::Relu => x.max(0.0),
        Unary::Tanh => x.tanh(),
        Unary::Softplus => softplus(x),
    }
}

/// Local derivative given input `x` and output `y`.
fn unary_deriv(op: Unary, x: f64, y: f64) -> f64 {
    match op {
        Unary::Neg => -1.0,
        Unary::Exp => y,
        Unary::Log => 1.0 / x,
        Unary::Square => 2.0 * x,
        Unary::Abs => {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        }
        Unary::Sigmoid => y * (1.0 - y),
        Unary::Relu => {
            if x > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Unary::Tanh => 1.0 - y * y,
        Unary::Softplus => sigmoid(x),
    }
}

fn unary_name(op: Unary) -> &'static str {
    match op {
        Unary::Neg => "neg",
        Unary::Exp => "exp",
        Unary::Log => "log",
        Unary::Square => "square",
        Unary::Abs => "abs",
        Unary::Sigmoid => "sigmoid",
        Unary::Relu => "relu",
        Unary::Tanh => "tanh",
        Unary::Softplus => "softplus",
    }
}

/// Running mean of rows `range` of `x`. For identical rows the result is
/// bit-identical to the row itself.
fn running_mean(x: &Matrix, range: Range<usize>) -> ndarray::Array1<f64> {
    let mut acc = ndarray::Array1::<f64>::zeros(x.ncols());
    for (k, i) in range.enumerate() {
        let n = (k + 1) as f64;
        Zip::from(&mut acc)
            .and(x.row(i))
            .for_each(|m, &v| *m += (v - *m) / n);
    }
    acc
}

/// Pad-preserving 1D cross-correlation. `x` is `C_in × T`, `kernel` is
/// `C_out × (C_in·K)` with tap `k` of input channel `c` at column `c·K + k`.
fn conv1d_fwd(x: &Matrix, kernel: &Matrix, width: usize) -> Matrix {
    let (c_in, t_len) = x.dim();
    let c_out = kernel.nrows();
    let pad = (width - 1) / 2;
    let mut out = Matrix::zeros((c_out, t_len));
    for o in 0..c_out {
        for c in 0..c_in {
            for k in 0..width {
                let w = kernel[[o, c * width + k]];
                if w == 0.0 {
                    continue;
                }
                // output t reads input t + k - pad
                let lo = pad.saturating_sub(k);
                let hi = (t_len + pad).saturating_sub(k).min(t_len);
                for t in lo..hi {
                    out[[o, t]] += w * x[[c, t + k - pad]];
                }
            }
        }
    }
    out
}

/// Whether every element is finite. `x·0` is zero for finite `x` and NaN
/// otherwise, so independent lane sums stay zero exactly when all are.
pub(crate) fn all_finite(m: &Matrix) -> bool {
    let Some(s) = m.as_slice_memory_order() else {
        return m.iter().all(|x| x.is_finite());
    };
    let mut acc = [0.0f64; 8];
    let chunks = s.chunks_exact(8);
    let rest = chunks.remainder();
    for c in chunks {
        for (a, x) in acc.iter_mut().zip(c) {
            *a += x * 0.0;
        }
    }
    acc.iter().all(|&a| a == 0.0) && rest.iter().all(|x| x.is_finite())
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn push(&mut self, op_name: &'static str, value: Matrix, op: Op, tracked: bool) -> Result<Var> {
        if !all_finite(&value) {
            return Err(Error::NonFinite { op: op_name });
        }
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            tracked,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn tracked(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].tracked)
    }

    /// Leaf that receives a gradient.
    pub fn variable(&mut self, value: Matrix) -> Result<Var> {
        self.push("variable", value, Op::Leaf, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Matrix) -> Result<Var> {
        self.push("constant", value, Op::Leaf, false)
    }

    /// Leaf for a model parameter. Skips the finiteness scan: a non-finite
    /// parameter surfaces at the first operation that reads it.
    pub(crate) fn parameter(&mut self, value: &'a Matrix, tracked: bool) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(value),
            op: Op::Leaf,
            tracked,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn scalar_constant(&mut self, x: f64) -> Result<Var> {
        self.constant(Matrix::from_elem((1, 1), x))
    }

    /// Copy of `v` with the gradient path cut.
    pub fn detach(&mut self, v: Var) -> Result<Var> {
        let value = self.nodes[v.0].value.clone().into_owned();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (&*self.nodes[a.0].value, &*self.nodes[b.0].value);
        if av.ncols() != bv.nrows() {
            return Err(Error::shape(
                "matmul",
                format!("{:?} · {:?}", av.dim(), bv.dim()),
            ));
        }
        let value = av.dot(bv);
        let tracked = self.tracked(&[a, b]);
        self.push("matmul", value, Op::MatMul(a, b), tracked)
    }

    pub fn binary(&mut self, op: Binary, a: Var, b: Var) -> Result<Var> {
        let name = match op {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
        };
        let (av, bv) = (&*self.nodes[a.0].value, &*self.nodes[b.0].value);
        broadcast_dim(name, av.dim(), bv.dim())?;
        let value = match op {
            Binary::Add => av + bv,
            Binary::Sub => av - bv,
            Binary::Mul => av * bv,
            Binary::Div => av / bv,
        };
        let tracked = self.tracked(&[a, b]);
        self.push(name, value, Op::Binary(op, a, b), tracked)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Div, a, b)
    }

    pub fn unary(&mut self, op: Unary, x: Var) -> Result<Var> {
        let value = self.nodes[x.0].value.mapv(|v| unary_fwd(op, v));
        let tracked = self.tracked(&[x]);
        self.push(unary_name(op), value, Op::Unary(op, x), tracked)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Neg, x)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Exp, x)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Log, x)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Square, x)
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Abs, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Sigmoid, x)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Relu, x)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Tanh, x)
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Softplus, x)
    }

    /// `scale · x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var> {
        let value = self.nodes[x.0].value.mapv(|v| scale * v + shift);
        let tracked = self.tracked(&[x]);
        self.push("affine", value, Op::Affine { x, scale }, tracked)
    }

    pub fn sum(&mut self, x: Var, axis: Reduce) -> Result<Var> {
        let xv = &*self.nodes[x.0].value;
        let value = match axis {
            Reduce::All => Matrix::from_elem((1, 1), xv.sum()),
            Reduce::Rows => xv.sum_axis(Axis(0)).insert_axis(Axis(0)),
            Reduce::Cols => xv.sum_axis(Axis(1)).insert_axis(Axis(1)),
        };
        let tracked = self.tracked(&[x]);
        self.push("sum", value, Op::Sum(x, axis), tracked)
    }

    pub fn mean(&mut self, x: Var, axis: Reduce) -> Result<Var> {
        let xv = &*self.nodes[x.0].value;
        let (m, n) = xv.dim();
        if m == 0 || n == 0 {
            return Err(Error::shape("mean", "empty tensor"));
        }
        let value = match axis {
            Reduce::All => Matrix::from_elem((1, 1), xv.sum() / (m * n) as f64),
            Reduce::Rows => running_mean(xv, 0..m).insert_axis(Axis(0)),
            Reduce::Cols => {
                let t = xv.t().to_owned();
                running_mean(&t, 0..n).insert_axis(Axis(1))
            }
        };
        let tracked = self.tracked(&[x]);
        self.push("mean", value, Op::Mean(x, axis), tracked)
    }

    /// Per-column standard deviation over rows with denominator `T − 1`.
    pub fn std_bessel(&mut self, x: Var) -> Result<Var> {
        let xv = &*self.nodes[x.0].value;
        let t_len = xv.nrows();
        if t_len < 2 {
            return Err(Error::DegenerateAxis {
                op: "std_bessel",
                extent: t_len,
            });
        }
        let mean = running_mean(xv, 0..t_len);
        let mut var = ndarray::Array1::<f64>::zeros(xv.ncols());
        for row in xv.rows() {
            Zip::from(&mut var)
                .and(row)
                .and(&mean)
                .for_each(|acc, &v, &m| *acc += (v - m) * (v - m));
        }
        let denom = (t_len - 1) as f64;
        let value = var.mapv(|s| (s / denom).sqrt()).insert_axis(Axis(0));
        let tracked = self.tracked(&[x]);
        self.push("std_bessel", value, Op::StdBessel(x), tracked)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let value = self.nodes[x.0].value.t().to_owned();
        let tracked = self.tracked(&[x]);
        self.push("transpose", value, Op::Transpose(x), tracked)
    }

    /// Row `i` as a `1 × n` tensor.
    pub fn row(&mut self, x: Var, i: usize) -> Result<Var> {
        let xv = &*self.nodes[x.0].value;
        if i >= xv.nrows() {
            return Err(Error::shape("row", format!("row {i} of {:?}", xv.dim())));
        }
        let value = xv.slice(s![i..i + 1, ..]).to_owned();
        let tracked = self.tracked(&[x]);
        self.push("row", value, Op::Row(x, i), tracked)
    }

    /// Stack `1 × n` rows into a `k × n` tensor.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let Some(first) = rows.first() else {
            return Err(Error::shape("stack_rows", "no rows"));
        };
        let n = self.nodes[first.0].value.ncols();
        let mut value = Matrix::zeros((rows.len(), n));
        for (i, r) in rows.iter().enumerate() {
            let rv = &*self.nodes[r.0].value;
            if rv.dim() != (1, n) {
                return Err(Error::shape("stack_rows", format!("row {i} is {:?}", rv.dim())));
            }
            value.row_mut(i).assign(&rv.row(0));
        }
        let tracked = self.tracked(rows);
        self.push("stack_rows", value, Op::StackRows(rows.to_vec()), tracked)
    }

    /// `[a | b]` along columns.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (&*self.nodes[a.0].value, &*self.nodes[b.0].value);
        if av.nrows() != bv.nrows() {
            return Err(Error::shape(
                "concat_cols",
                format!("{:?} | {:?}", av.dim(), bv.dim()),
            ));
        }
        let value = ndarray::concatenate(Axis(1), &[av.view(), bv.view()])
            .map_err(|e| Error::shape("concat_cols", e.to_string()))?;
        let tracked = self.tracked(&[a, b]);
        self.push("concat_cols", value, Op::ConcatCols(a, b), tracked)
    }

    /// Stride-1 convolution with symmetric zero padding `(K − 1)/2`, so the
    /// output keeps the temporal extent of `x` (`C_in × T` in, `C_out × T` out).
    pub fn conv1d(&mut self, x: Var, kernel: Var, width: usize) -> Result<Var> {
        if width.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "conv1d kernel width must be odd, got {width}"
            )));
        }
        let (xv, kv) = (&*self.nodes[x.0].value, &*self.nodes[kernel.0].value);
        if kv.ncols() != xv.nrows() * width {
            return Err(Error::shape(
                "conv1d",
                format!(
                    "kernel {:?} for {} input channels of width {width}",
                    kv.dim(),
                    xv.nrows()
                ),
            ));
        }
        if xv.ncols() == 0 {
            return Err(Error::shape("conv1d", "empty sequence"));
        }
        let value = conv1d_fwd(xv, kv, width);
        let tracked = self.tracked(&[x, kernel]);
        self.push("conv1d", value, Op::Conv1d { x, kernel, width }, tracked)
    }

    /// Mean of each row range of `x`, one output row per segment.
    pub fn segment_mean(&mut self, x: Var, segments: Vec<Range<usize>>) -> Result<Var> {
        let xv = &*self.nodes[x.0].value;
        let mut value = Matrix::zeros((segments.len(), xv.ncols()));
        for (s, seg) in segments.iter().enumerate() {
            if seg.is_empty() || seg.end > xv.nrows() {
                return Err(Error::shape(
                    "segment_mean",
                    format!("segment {seg:?} of {} rows", xv.nrows()),
                ));
            }
            value.row_mut(s).assign(&running_mean(xv, seg.clone()));
        }
        let tracked = self.tracked(&[x]);
        self.push("segment_mean", value, Op::SegmentMean { x, segments }, tracked)
    }

    /// Reverse pass from a `1 × 1` loss. A tape may be differentiated once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.backward_done {
            return Err(Error::Backward("tape already differentiated"));
        }
        if self.nodes[loss.0].value.dim() != (1, 1) {
            return Err(Error::Backward("loss must be a 1 × 1 tensor"));
        }
        self.backward_done = true;

        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::ones((1, 1)));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            if !self.nodes[idx].tracked {
                continue;
            }
            let node = &self.nodes[idx];
            let send = |v: Var, d: Matrix, grads: &mut Vec<Option<Matrix>>| {
                if !self.nodes[v.0].tracked {
                    return;
                }
                match &mut grads[v.0] {
                    Some(acc) => *acc += &d,
                    slot @ None => *slot = Some(d),
                }
            };
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (&*self.nodes[a.0].value, &*self.nodes[b.0].value);
                    if self.nodes[a.0].tracked {
                        send(*a, g.dot(&bv.t()), &mut grads);
                    }
                    if self.nodes[b.0].tracked {
                        send(*b, av.t().dot(&g), &mut grads);
                    }
                }
                Op::Binary(op, a, b) => {
                    let (av, bv) = (&*self.nodes[a.0].value, &*self.nodes[b.0].value);
                    let (sa, sb) = (shape(av), shape(bv));
                    match op {
                        Binary::Add => {
                            send(*a, reduce_to(g.clone(), sa), &mut grads);
                            send(*b, reduce_to(g, sb), &mut grads);
                        }
                        Binary::Sub => {
                            send(*a, reduce_to(g.clone(), sa), &mut grads);
                            send(*b, reduce_to(-g, sb), &mut grads);
                        }
                        Binary::Mul => {
                            if self.nodes[a.0].tracked {
                                send(*a, reduce_to(&g * bv, sa), &mut grads);
                            }
                            if self.nodes[b.0].tracked {
                                send(*b, reduce_to(&g * av, sb), &mut grads);
                            }
                        }
                        Binary::Div => {
                            if self.nodes[a.0].tracked {
                                send(*a, reduce_to(&g / bv, sa), &mut grads);
                            }
                            if self.nodes[b.0].tracked {
                                let d = -(&g * &*node.value) / bv;
                                send(*b, reduce_to(d, sb), &mut grads);
                            }
                        }
                    }
                }
                Op::Unary(op, x) => {
                    let xv = &*self.nodes[x.0].value;
                    let mut d = g;
                    Zip::from(&mut d)
                        .and(xv)
                        .and(&*node.value)
                        .for_each(|d, &xi, &yi| *d *= unary_deriv(*op, xi, yi));
                    send(*x, d, &mut grads);
                }
                Op::Affine { x, scale } => send(*x, g * *scale, &mut grads),
                Op::Sum(x, axis) | Op::Mean(x, axis) => {
                    let dim = shape(&self.nodes[x.0].value);
                    let count = match (axis, &node.op) {
                        (_, Op::Sum(..)) => 1.0,
                        (Reduce::All, _) => (dim.0 * dim.1) as f64,
                        (Reduce::Rows, _) => dim.0 as f64,
                        (Reduce::Cols, _) => dim.1 as f64,
                    };
                    let d = g
                        .broadcast(dim)
                        .expect("reduced gradient broadcasts back")
                        .mapv(|v| v / count);
                    send(*x, d, &mut grads);
                }
                Op::StdBessel(x) => {
                    let xv = &*self.nodes[x.0].value;
                    let t_len = xv.nrows();
                    let mean = running_mean(xv, 0..t_len);
                    let denom = (t_len - 1) as f64;
                    let mut d = Matrix::zeros(xv.dim());
                    for c in 0..xv.ncols() {
                        let sd = node.value[[0, c]];
                        if sd == 0.0 {
                            continue;
                        }
                        let scale = g[[0, c]] / (denom * sd);
                        for i in 0..t_len {
                            d[[i, c]] = scale * (xv[[i, c]] - mean[c]);
                        }
                    }
                    send(*x, d, &mut grads);
                }
                Op::Transpose(x) => send(*x, g.t().to_owned(), &mut grads),
                Op::Row(x, i) => {
                    let mut d = Matrix::zeros(shape(&self.nodes[x.0].value));
                    d.row_mut(*i).assign(&g.row(0));
                    send(*x, d, &mut grads);
                }
                Op::StackRows(rows) => {
                    for (i, r) in rows.iter().enumerate() {
                        send(*r, g.slice(s![i..i + 1, ..]).to_owned(), &mut grads);
                    }
                }
                Op::ConcatCols(a, b) => {
                    let na = self.nodes[a.0].value.ncols();
                    send(*a, g.slice(s![.., ..na]).to_owned(), &mut grads);
                    send(*b, g.slice(s![.., na..]).to_owned(), &mut grads);
                }
                Op::Conv1d { x, kernel, width } => {
                    let (xv, kv) = (&*self.nodes[x.0].value, &*self.nodes[kernel.0].value);
                    let (c_in, t_len) = xv.dim();
                    let c_out = kv.nrows();
                    let pad = (width - 1) / 2;
                    let mut dx = Matrix::zeros(xv.dim());
                    let mut dk = Matrix::zeros(kv.dim());
                    for o in 0..c_out {
                        for c in 0..c_in {
                            for k in 0..*width {
                                let col = c * width + k;
                                let w = kv[[o, col]];
                                let lo = pad.saturating_sub(k);
                                let hi = (t_len + pad).saturating_sub(k).min(t_len);
                                let mut acc = 0.0;
                                for t in lo..hi {
                                    let src = t + k - pad;
                                    acc += g[[o, t]] * xv[[c, src]];
                                    dx[[c, src]] += g[[o, t]] * w;
                                }
                                dk[[o, col]] += acc;
                            }
                        }
                    }
                    send(*x, dx, &mut grads);
                    send(*kernel, dk, &mut grads);
                }
                Op::SegmentMean { x, segments } => {
                    let mut d = Matrix::zeros(shape(&self.nodes[x.0].value));
                    for (s, seg) in segments.iter().enumerate() {
                        let inv = 1.0 / seg.len() as f64;
                        for i in seg.clone() {
                            Zip::from(d.row_mut(i))
                                .and(g.row(s))
                                .for_each(|di, &gi| *di += gi * inv);
                        }
                    }
                    send(*x, d, &mut grads);
                }
            }
        }

        if grads.iter().flatten().any(|g| !all_finite(g)) {
            return Err(Error::NonFinite { op: "backward" });
        }

        Ok(Gradients {
            shapes: self.nodes.iter().map(|n| n.value.dim()).collect(),
            tracked: self
                .nodes
                .iter()
                .map(|n| n.tracked && matches!(n.op, Op::Leaf))
                .collect(),
            grads,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn matmul_identity_and_dot() {
        let mut g = Graph::new();
        let i = g.constant(array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let v = g.constant(array![[3.0], [4.0]]).unwrap();
        let out = g.matmul(i, v).unwrap();
        assert_eq!(g.value(out), &array![[3.0], [4.0]]);

        let a = g.constant(array![[1.0, 2.0]]).unwrap();
        let out = g.matmul(a, v).unwrap();
        assert_eq!(g.scalar(out), 11.0);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let mut g = Graph::new();
        let a = g.constant(Matrix::zeros((2, 3))).unwrap();
        let b = g.constant(Matrix::zeros((2, 3))).unwrap();
        assert!(matches!(g.matmul(a, b), Err(Error::Shape { .. })));
    }

    #[test]
    fn elementwise_values() {
        let mut g = Graph::new();
        let a = g.constant(array![[2.0, 3.0]]).unwrap();
        let b = g.constant(array![[4.0, 5.0]]).unwrap();
        let p = g.mul(a, b).unwrap();
        assert_eq!(g.value(p), &array![[8.0, 15.0]]);
        let z = g.scalar_constant(0.0).unwrap();
        let e = g.exp(z).unwrap();
        assert_eq!(g.scalar(e), 1.0);
        let bad = g.constant(Matrix::zeros((3, 3))).unwrap();
        assert!(g.add(a, bad).is_err());
    }

    #[test]
    fn activation_values() {
        let mut g = Graph::new();
        let x = g.constant(array![[0.0, -2.5]]).unwrap();
        let t = g.tanh(x).unwrap();
        let s = g.sigmoid(x).unwrap();
        let r = g.relu(x).unwrap();
        assert_eq!(g.value(t)[[0, 0]], 0.0);
        assert_eq!(g.value(s)[[0, 0]], 0.5);
        assert_eq!(g.value(r)[[0, 1]], 0.0);
    }

    #[test]
    fn reductions() {
        let mut g = Graph::new();
        let c = g.constant(array![[5.0], [5.0], [5.0]]).unwrap();
        let sd = g.std_bessel(c).unwrap();
        assert_eq!(g.scalar(sd), 0.0);
        let r = g.constant(array![[1.0, 2.0, 3.0]]).unwrap();
        let m = g.mean(r, Reduce::All).unwrap();
        assert_eq!(g.scalar(m), 2.0);
        let two = g.constant(array![[1.0], [3.0]]).unwrap();
        let sd = g.std_bessel(two).unwrap();
        assert!((g.scalar(sd) - 2f64.sqrt()).abs() < 1e-15);
        let one = g.constant(array![[1.0, 2.0]]).unwrap();
        assert!(matches!(
            g.std_bessel(one),
            Err(Error::DegenerateAxis { extent: 1, .. })
        ));
    }

    #[test]
    fn std_bessel_zero_variance_has_zero_gradient() {
        let mut g = Graph::new();
        let x = g.variable(array![[2.0, 1.0], [2.0, 4.0]]).unwrap();
        let sd = g.std_bessel(x).unwrap();
        let l = g.sum(sd, Reduce::All).unwrap();
        let grads = g.backward(l).unwrap();
        let dx = grads.get(x).unwrap();
        assert_eq!(dx.column(0).to_vec(), vec![0.0, 0.0]);
        assert!(dx[[0, 1]] < 0.0 && dx[[1, 1]] > 0.0);
    }

    #[test]
    fn conv1d_identity_and_average() {
        let mut g = Graph::new();
        let x = g.constant(array![[0.0, 3.0, 0.0]]).unwrap();
        let id = g.constant(array![[1.0]]).unwrap();
        let y = g.conv1d(x, id, 1).unwrap();
        assert_eq!(g.value(y), g.value(x));
        let avg = g.constant(array![[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]]).unwrap();
        let y = g.conv1d(x, avg, 3).unwrap();
        assert!((g.value(y)[[0, 1]] - 1.0).abs() < 1e-15);
        assert_eq!(g.shape(y), (1, 3));
        let even = g.constant(array![[0.5, 0.5]]).unwrap();
        assert!(matches!(g.conv1d(x, even, 2), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn backward_basics() {
        let mut g = Graph::new();
        let x = g.variable(array![[2.0]]).unwrap();
        let y = g.square(x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap()[[0, 0]], 4.0);
        assert!(matches!(g.backward(y), Err(Error::Backward(_))));

        let mut g = Graph::new();
        let x = g.variable(array![[2.0, 3.0]]).unwrap();
        let c = g.scalar_constant(7.0).unwrap();
        let grads = g.backward(c).unwrap();
        assert_eq!(grads.get(x).unwrap(), Matrix::zeros((1, 2)));
        assert!(grads.get(c).is_none());

        let mut g = Graph::new();
        let x = g.variable(array![[2.0, 3.0]]).unwrap();
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn fan_out_accumulates() {
        let mut g = Graph::new();
        let x = g.variable(array![[3.0]]).unwrap();
        let y = g.mul(x, x).unwrap();
        let z = g.add(y, x).unwrap();
        let grads = g.backward(z).unwrap();
        assert_eq!(grads.get(x).unwrap()[[0, 0]], 7.0);
    }

    #[test]
    fn nonfinite_is_an_error() {
        let mut g = Graph::new();
        let x = g.constant(array![[0.0]]).unwrap();
        assert!(matches!(g.log(x), Err(Error::NonFinite { op: "log" })));
    }

    #[test]
    fn constant_mean_is_exact() {
        let v = 0.1 + 0.2;
        let mut g = Graph::new();
        for t in [1, 3, 7, 64, 1000] {
            let x = g.constant(Matrix::from_elem((t, 2), v)).unwrap();
            let m = g.mean(x, Reduce::Rows).unwrap();
            assert!(g.value(m).iter().all(|&e| e == v));
        }
    }
}
