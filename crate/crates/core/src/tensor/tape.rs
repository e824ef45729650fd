use std::cell::RefCell;
use std::fmt;
use std::ops;
use std::rc::Rc;

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::{self, Scalar};

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, T),
    AddScalar(usize),
    AddRow(usize, usize),
    MulRow(usize, usize),
    MatMul(usize, usize),
    Transpose(usize),
    Tanh(usize),
    Sigmoid(usize),
    Softplus(usize),
    Exp(usize),
    Log(usize),
    Square(usize),
    Sum(usize),
    SumRows(usize),
    SumCols(usize),
    SliceRows(usize, usize),
    SliceCols(usize, usize),
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
    GatherRows(usize, Vec<usize>),
    GatherCols(usize, Vec<usize>),
    GaussianLogPdf(usize, usize, usize),
    LogAddExp(usize, usize),
    GatedScan(usize, usize, usize),
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Neg(..) => "neg",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::AddRow(..) => "add_row",
            Op::MulRow(..) => "mul_row",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::Softplus(..) => "softplus",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Square(..) => "square",
            Op::Sum(..) => "sum",
            Op::SumRows(..) => "sum_rows",
            Op::SumCols(..) => "sum_cols",
            Op::SliceRows(..) => "slice_rows",
            Op::SliceCols(..) => "slice_cols",
            Op::ConcatRows(..) => "concat_rows",
            Op::ConcatCols(..) => "concat_cols",
            Op::GatherRows(..) => "gather_rows",
            Op::GatherCols(..) => "gather_cols",
            Op::GaussianLogPdf(..) => "gaussian_logpdf",
            Op::LogAddExp(..) => "log_add_exp",
            Op::GatedScan(..) => "gated_scan",
        }
    }
}

struct Node<T> {
    value: Rc<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Define-by-run record of tensor operations. Node ids are assigned in
/// creation order, which is a topological order of the graph.
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a node on a [`Tape`].
pub struct Var<'t, T> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}
impl<T> Copy for Var<'_, T> {}

impl<T: Scalar> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var(#{} {:?})", self.id, self.shape())
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var<'_, T> {
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

    /// A leaf that receives gradients.
    pub fn param(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf without gradients.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, false)
    }

    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        self.push(value, Op::Leaf, requires_grad)
    }

    fn value(&self, id: usize) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    pub fn concat_rows(&self, parts: &[Var<'_, T>]) -> Var<'_, T> {
        assert!(!parts.is_empty(), "concat of nothing");
        let cols = parts[0].shape()[1];
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let v = p.value();
            assert_eq!(v.cols(), cols, "concat_rows column mismatch");
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let rg = parts.iter().any(|p| p.requires_grad());
        self.push(
            Tensor::new(rows, cols, data),
            Op::ConcatRows(parts.iter().map(|p| p.id).collect()),
            rg,
        )
    }

    pub fn concat_cols(&self, parts: &[Var<'_, T>]) -> Var<'_, T> {
        assert!(!parts.is_empty(), "concat of nothing");
        let rows = parts[0].shape()[0];
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let cols: usize = values
            .iter()
            .map(|v| {
                assert_eq!(v.rows(), rows, "concat_cols row mismatch");
                v.cols()
            })
            .sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for v in &values {
                data.extend_from_slice(v.row_slice(r));
            }
        }
        let rg = parts.iter().any(|p| p.requires_grad());
        self.push(
            Tensor::new(rows, cols, data),
            Op::ConcatCols(parts.iter().map(|p| p.id).collect()),
            rg,
        )
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> [usize; 2] {
        self.tape.nodes.borrow()[self.id].value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    /// Scalar value of a `1 x 1` node.
    pub fn item(&self) -> T {
        self.value().item()
    }

    fn unary(self, op: Op<T>, value: Tensor<T>) -> Var<'t, T> {
        let rg = self.requires_grad();
        self.tape.push(value, op, rg)
    }

    fn binary(self, other: Var<'t, T>, op: Op<T>, value: Tensor<T>) -> Var<'t, T> {
        debug_assert!(std::ptr::eq(self.tape, other.tape), "vars on different tapes");
        let rg = self.requires_grad() || other.requires_grad();
        self.tape.push(value, op, rg)
    }

    pub fn div(self, other: Var<'t, T>) -> Var<'t, T> {
        let v = self.value().zip_map(&other.value(), |a, b| a / b);
        self.binary(other, Op::Div(self.id, other.id), v)
    }

    pub fn scale(self, c: T) -> Var<'t, T> {
        let v = self.value().map(|x| x * c);
        self.unary(Op::Scale(self.id, c), v)
    }

    pub fn add_scalar(self, c: T) -> Var<'t, T> {
        let v = self.value().map(|x| x + c);
        self.unary(Op::AddScalar(self.id), v)
    }

    /// Adds a `1 x C` row to every row of an `R x C` matrix.
    pub fn add_row(self, row: Var<'t, T>) -> Var<'t, T> {
        let a = self.value();
        let r = row.value();
        assert_eq!(r.rows(), 1, "add_row expects a row vector");
        assert_eq!(a.cols(), r.cols(), "add_row column mismatch");
        let mut out = (*a).clone();
        for i in 0..a.rows() {
            for (o, &b) in out.row_slice_mut(i).iter_mut().zip(r.data()) {
                *o = *o + b;
            }
        }
        self.binary(row, Op::AddRow(self.id, row.id), out)
    }

    /// Multiplies every row of an `R x C` matrix elementwise by a `1 x C` row.
    pub fn mul_row(self, row: Var<'t, T>) -> Var<'t, T> {
        let a = self.value();
        let r = row.value();
        assert_eq!(r.rows(), 1, "mul_row expects a row vector");
        assert_eq!(a.cols(), r.cols(), "mul_row column mismatch");
        let mut out = (*a).clone();
        for i in 0..a.rows() {
            for (o, &b) in out.row_slice_mut(i).iter_mut().zip(r.data()) {
                *o = *o * b;
            }
        }
        self.binary(row, Op::MulRow(self.id, row.id), out)
    }

    pub fn matmul(self, other: Var<'t, T>) -> Var<'t, T> {
        let v = self.value().matmul(&other.value());
        self.binary(other, Op::MatMul(self.id, other.id), v)
    }

    pub fn transpose(self) -> Var<'t, T> {
        let v = self.value().transpose();
        self.unary(Op::Transpose(self.id), v)
    }

    pub fn tanh(self) -> Var<'t, T> {
        let v = self.value().map(|x| x.tanh());
        self.unary(Op::Tanh(self.id), v)
    }

    pub fn sigmoid(self) -> Var<'t, T> {
        let v = self.value().map(scalar::sigmoid);
        self.unary(Op::Sigmoid(self.id), v)
    }

    pub fn softplus(self) -> Var<'t, T> {
        let v = self.value().map(scalar::softplus);
        self.unary(Op::Softplus(self.id), v)
    }

    pub fn exp(self) -> Var<'t, T> {
        let v = self.value().map(|x| x.exp());
        self.unary(Op::Exp(self.id), v)
    }

    pub fn ln(self) -> Var<'t, T> {
        let v = self.value().map(|x| x.ln());
        self.unary(Op::Log(self.id), v)
    }

    pub fn square(self) -> Var<'t, T> {
        let v = self.value().map(|x| x * x);
        self.unary(Op::Square(self.id), v)
    }

    /// Sum of all entries as a `1 x 1` node.
    pub fn sum(self) -> Var<'t, T> {
        let v = Tensor::scalar(self.value().sum());
        self.unary(Op::Sum(self.id), v)
    }

    /// Column sums: `R x C -> 1 x C`.
    pub fn sum_rows(self) -> Var<'t, T> {
        let a = self.value();
        let mut out = vec![T::zero(); a.cols()];
        for r in 0..a.rows() {
            for (o, &x) in out.iter_mut().zip(a.row_slice(r)) {
                *o = *o + x;
            }
        }
        self.unary(Op::SumRows(self.id), Tensor::row(out))
    }

    /// Row sums: `R x C -> R x 1`.
    pub fn sum_cols(self) -> Var<'t, T> {
        let a = self.value();
        let out = (0..a.rows()).map(|r| a.row_slice(r).iter().copied().sum()).collect();
        self.unary(Op::SumCols(self.id), Tensor::column(out))
    }

    pub fn slice_rows(self, start: usize, len: usize) -> Var<'t, T> {
        let a = self.value();
        assert!(len > 0 && start + len <= a.rows(), "slice_rows out of range");
        let data = a.data()[start * a.cols()..(start + len) * a.cols()].to_vec();
        self.unary(Op::SliceRows(self.id, start), Tensor::new(len, a.cols(), data))
    }

    pub fn slice_cols(self, start: usize, len: usize) -> Var<'t, T> {
        let a = self.value();
        assert!(len > 0 && start + len <= a.cols(), "slice_cols out of range");
        let mut data = Vec::with_capacity(a.rows() * len);
        for r in 0..a.rows() {
            data.extend_from_slice(&a.row_slice(r)[start..start + len]);
        }
        self.unary(Op::SliceCols(self.id, start), Tensor::new(a.rows(), len, data))
    }

    /// Output row `j` is input row `idx[j]`.
    pub fn gather_rows(self, idx: &[usize]) -> Var<'t, T> {
        let a = self.value();
        let mut data = Vec::with_capacity(idx.len() * a.cols());
        for &i in idx {
            data.extend_from_slice(a.row_slice(i));
        }
        self.unary(
            Op::GatherRows(self.id, idx.to_vec()),
            Tensor::new(idx.len(), a.cols(), data),
        )
    }

    /// Repeats a `1 x C` row `n` times.
    pub fn broadcast_rows(self, n: usize) -> Var<'t, T> {
        assert_eq!(self.shape()[0], 1, "broadcast_rows expects a row vector");
        self.gather_rows(&vec![0; n])
    }

    /// Output column `j` is input column `idx[j]`.
    pub fn gather_cols(self, idx: &[usize]) -> Var<'t, T> {
        let a = self.value();
        let mut data = Vec::with_capacity(a.rows() * idx.len());
        for r in 0..a.rows() {
            let row = a.row_slice(r);
            data.extend(idx.iter().map(|&j| row[j]));
        }
        self.unary(
            Op::GatherCols(self.id, idx.to_vec()),
            Tensor::new(a.rows(), idx.len(), data),
        )
    }

    /// Elementwise `log N(self; mean, std^2)`.
    pub fn gaussian_logpdf(self, mean: Var<'t, T>, std: Var<'t, T>) -> Var<'t, T> {
        let y = self.value();
        let m = mean.value();
        let s = std.value();
        assert_eq!(y.shape(), m.shape(), "logpdf mean shape");
        assert_eq!(y.shape(), s.shape(), "logpdf std shape");
        let data = y
            .data()
            .iter()
            .zip(m.data())
            .zip(s.data())
            .map(|((&y, &m), &s)| scalar::normal_logpdf(y, m, s))
            .collect();
        let rg = self.requires_grad() || mean.requires_grad() || std.requires_grad();
        self.tape.push(
            Tensor::new(y.rows(), y.cols(), data),
            Op::GaussianLogPdf(self.id, mean.id, std.id),
            rg,
        )
    }

    /// Elementwise `log(exp(self) + exp(other))`.
    pub fn log_add_exp(self, other: Var<'t, T>) -> Var<'t, T> {
        let v = self.value().zip_map(&other.value(), scalar::log_add_exp);
        self.binary(other, Op::LogAddExp(self.id, other.id), v)
    }

    /// Linear recurrence over rows. `self` is the `1 x F` initial state,
    /// `gate` and `drive` are `N x F`; the `(N+1) x F` output has row 0
    /// equal to the initial state and row `t+1 = gate[t] * row t + drive[t]`.
    pub fn gated_scan(self, gate: Var<'t, T>, drive: Var<'t, T>) -> Var<'t, T> {
        let init = self.value();
        let g = gate.value();
        let d = drive.value();
        assert_eq!(init.rows(), 1, "gated_scan init must be a row");
        assert_eq!(g.shape(), d.shape(), "gated_scan gate/drive shape");
        assert_eq!(g.cols(), init.cols(), "gated_scan width");
        let (n, f) = (g.rows(), g.cols());
        let mut out = Vec::with_capacity((n + 1) * f);
        out.extend_from_slice(init.data());
        for t in 0..n {
            for j in 0..f {
                let prev = out[t * f + j];
                out.push(g.get(t, j) * prev + d.get(t, j));
            }
        }
        let rg = self.requires_grad() || gate.requires_grad() || drive.requires_grad();
        self.tape.push(
            Tensor::new(n + 1, f, out),
            Op::GatedScan(self.id, gate.id, drive.id),
            rg,
        )
    }
}

impl<'t, T: Scalar> ops::Add for Var<'t, T> {
    type Output = Var<'t, T>;
    fn add(self, rhs: Self) -> Self::Output {
        let v = self.value().zip_map(&rhs.value(), |a, b| a + b);
        self.binary(rhs, Op::Add(self.id, rhs.id), v)
    }
}

impl<'t, T: Scalar> ops::Sub for Var<'t, T> {
    type Output = Var<'t, T>;
    fn sub(self, rhs: Self) -> Self::Output {
        let v = self.value().zip_map(&rhs.value(), |a, b| a - b);
        self.binary(rhs, Op::Sub(self.id, rhs.id), v)
    }
}

impl<'t, T: Scalar> ops::Mul for Var<'t, T> {
    type Output = Var<'t, T>;
    fn mul(self, rhs: Self) -> Self::Output {
        let v = self.value().zip_map(&rhs.value(), |a, b| a * b);
        self.binary(rhs, Op::Mul(self.id, rhs.id), v)
    }
}

impl<'t, T: Scalar> ops::Neg for Var<'t, T> {
    type Output = Var<'t, T>;
    fn neg(self) -> Self::Output {
        let v = self.value().map(|x| -x);
        self.unary(Op::Neg(self.id), v)
    }
}

/// Gradients of a scalar loss with respect to every node of a tape.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<[usize; 2]>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to `var`; zeros when `var` did not influence
    /// the loss.
    pub fn wrt(&self, var: &Var<'_, T>) -> Tensor<T> {
        self.get(var.id)
    }

    pub fn get(&self, id: usize) -> Tensor<T> {
        match &self.grads[id] {
            Some(g) => g.clone(),
            None => {
                let [r, c] = self.shapes[id];
                Tensor::zeros(r, c)
            }
        }
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, shape: [usize; 2], f: impl FnOnce(&mut Tensor<T>)) {
    let g = slot.get_or_insert_with(|| Tensor::zeros(shape[0], shape[1]));
    f(g);
}

/// Reverse pass from a scalar `loss`.
///
/// Fails when `loss` is not `1 x 1`, or when any forward value or
/// gradient on the path is non-finite (the error names the first offending
/// node).
pub fn backward<T: Scalar>(tape: &Tape<T>, loss: Var<'_, T>) -> Result<Gradients<T>> {
    let nodes = tape.nodes.borrow();
    if nodes[loss.id].value.shape() != [1, 1] {
        return Err(Error::contract(format!(
            "backward requires a scalar loss, got shape {:?}",
            nodes[loss.id].value.shape()
        )));
    }
    for (id, n) in nodes.iter().enumerate().take(loss.id + 1) {
        if !n.value.is_finite() {
            return Err(Error::Numerical {
                node: id,
                op: n.op.name(),
                detail: "non-finite forward value".into(),
            });
        }
    }
    let shapes: Vec<[usize; 2]> = nodes.iter().map(|n| n.value.shape()).collect();
    let mut grads: Vec<Option<Tensor<T>>> = vec![None; nodes.len()];
    grads[loss.id] = Some(Tensor::scalar(T::one()));

    for id in (0..=loss.id).rev() {
        let Some(g) = grads[id].take() else { continue };
        let node = &nodes[id];
        if !g.is_finite() {
            return Err(Error::Numerical {
                node: id,
                op: node.op.name(),
                detail: "non-finite gradient".into(),
            });
        }
        if !node.requires_grad {
            grads[id] = Some(g);
            continue;
        }
        let val = |i: usize| -> &Tensor<T> { &nodes[i].value };
        let wants = |i: usize| nodes[i].requires_grad;
        macro_rules! acc {
            ($i:expr, |$t:ident| $body:expr) => {
                if wants($i) {
                    let i = $i;
                    accumulate(&mut grads[i], shapes[i], |$t| $body);
                }
            };
        }
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc!(*a, |t| t.add_assign(&g));
                acc!(*b, |t| t.add_assign(&g));
            }
            Op::Sub(a, b) => {
                acc!(*a, |t| t.add_assign(&g));
                acc!(*b, |t| zip_acc(t, &g, |_, gi| -gi));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                acc!(*a, |t| zip3_acc(t, &g, vb, |gi, x| gi * x));
                acc!(*b, |t| zip3_acc(t, &g, va, |gi, x| gi * x));
            }
            Op::Div(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                acc!(*a, |t| zip3_acc(t, &g, vb, |gi, x| gi / x));
                if wants(*b) {
                    let gb: Vec<T> = g
                        .data()
                        .iter()
                        .zip(va.data())
                        .zip(vb.data())
                        .map(|((&gi, &x), &y)| -gi * x / (y * y))
                        .collect();
                    accumulate(&mut grads[*b], shapes[*b], |t| {
                        for (o, d) in t.data_mut().iter_mut().zip(gb) {
                            *o = *o + d;
                        }
                    });
                }
            }
            Op::Neg(a) => acc!(*a, |t| zip_acc(t, &g, |_, gi| -gi)),
            Op::Scale(a, c) => {
                let c = *c;
                acc!(*a, |t| zip_acc(t, &g, |_, gi| gi * c))
            }
            Op::AddScalar(a) => acc!(*a, |t| t.add_assign(&g)),
            Op::AddRow(a, r) => {
                acc!(*a, |t| t.add_assign(&g));
                acc!(*r, |t| add_col_sums(t, &g));
            }
            Op::MulRow(a, r) => {
                let (va, vr) = (val(*a), val(*r));
                if wants(*a) {
                    let mut ga = g.clone();
                    for i in 0..ga.rows() {
                        for (o, &x) in ga.row_slice_mut(i).iter_mut().zip(vr.data()) {
                            *o = *o * x;
                        }
                    }
                    accumulate(&mut grads[*a], shapes[*a], |t| t.add_assign(&ga));
                }
                if wants(*r) {
                    let prod = g.zip_map(va, |gi, x| gi * x);
                    accumulate(&mut grads[*r], shapes[*r], |t| add_col_sums(t, &prod));
                }
            }
            Op::MatMul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                if wants(*a) {
                    let ga = g.matmul(&vb.transpose());
                    accumulate(&mut grads[*a], shapes[*a], |t| t.add_assign(&ga));
                }
                if wants(*b) {
                    let gb = va.transpose().matmul(&g);
                    accumulate(&mut grads[*b], shapes[*b], |t| t.add_assign(&gb));
                }
            }
            Op::Transpose(a) => {
                let gt = g.transpose();
                acc!(*a, |t| t.add_assign(&gt));
            }
            Op::Tanh(a) => {
                let y = &node.value;
                acc!(*a, |t| zip3_acc(t, &g, y, |gi, y| gi * (T::one() - y * y)));
            }
            Op::Sigmoid(a) => {
                let y = &node.value;
                acc!(*a, |t| zip3_acc(t, &g, y, |gi, y| gi * y * (T::one() - y)));
            }
            Op::Softplus(a) => {
                let x = val(*a);
                acc!(*a, |t| zip3_acc(t, &g, x, |gi, x| gi * scalar::sigmoid(x)));
            }
            Op::Exp(a) => {
                let y = &node.value;
                acc!(*a, |t| zip3_acc(t, &g, y, |gi, y| gi * y));
            }
            Op::Log(a) => {
                let x = val(*a);
                acc!(*a, |t| zip3_acc(t, &g, x, |gi, x| gi / x));
            }
            Op::Square(a) => {
                let x = val(*a);
                acc!(*a, |t| zip3_acc(t, &g, x, |gi, x| T::c(2.0) * gi * x));
            }
            Op::Sum(a) => {
                let gi = g.item();
                acc!(*a, |t| zip_acc(t, &g_full(shapes[*a], gi), |_, v| v));
            }
            Op::SumRows(a) => acc!(*a, |t| {
                for r in 0..t.rows() {
                    for (o, &x) in t.row_slice_mut(r).iter_mut().zip(g.data()) {
                        *o = *o + x;
                    }
                }
            }),
            Op::SumCols(a) => acc!(*a, |t| {
                for r in 0..t.rows() {
                    let gi = g.get(r, 0);
                    for o in t.row_slice_mut(r) {
                        *o = *o + gi;
                    }
                }
            }),
            Op::SliceRows(a, start) => {
                let start = *start;
                acc!(*a, |t| {
                    let c = t.cols();
                    for (o, &x) in t.data_mut()[start * c..].iter_mut().zip(g.data()) {
                        *o = *o + x;
                    }
                })
            }
            Op::SliceCols(a, start) => {
                let start = *start;
                acc!(*a, |t| {
                    for r in 0..g.rows() {
                        let dst = &mut t.row_slice_mut(r)[start..start + g.cols()];
                        for (o, &x) in dst.iter_mut().zip(g.row_slice(r)) {
                            *o = *o + x;
                        }
                    }
                })
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let rows = shapes[p][0];
                    let c = shapes[p][1];
                    let chunk = &g.data()[offset * c..(offset + rows) * c];
                    acc!(p, |t| {
                        for (o, &x) in t.data_mut().iter_mut().zip(chunk) {
                            *o = *o + x;
                        }
                    });
                    offset += rows;
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = shapes[p][1];
                    acc!(p, |t| {
                        for r in 0..g.rows() {
                            let src = &g.row_slice(r)[offset..offset + w];
                            for (o, &x) in t.row_slice_mut(r).iter_mut().zip(src) {
                                *o = *o + x;
                            }
                        }
                    });
                    offset += w;
                }
            }
            Op::GatherRows(a, idx) => acc!(*a, |t| {
                for (j, &i) in idx.iter().enumerate() {
                    for (o, &x) in t.row_slice_mut(i).iter_mut().zip(g.row_slice(j)) {
                        *o = *o + x;
                    }
                }
            }),
            Op::GatherCols(a, idx) => acc!(*a, |t| {
                for r in 0..g.rows() {
                    let src = g.row_slice(r);
                    let dst = t.row_slice_mut(r);
                    for (j, &i) in idx.iter().enumerate() {
                        dst[i] = dst[i] + src[j];
                    }
                }
            }),
            Op::GaussianLogPdf(y, m, s) => {
                let (vy, vm, vs) = (val(*y), val(*m), val(*s));
                let n = g.len();
                let mut dy = Vec::with_capacity(n);
                let mut ds = Vec::with_capacity(n);
                for k in 0..n {
                    let sd = vs.data()[k];
                    let r = (vy.data()[k] - vm.data()[k]) / sd;
                    let gi = g.data()[k];
                    dy.push(-gi * r / sd);
                    ds.push(gi * (r * r - T::one()) / sd);
                }
                acc!(*y, |t| add_vec(t, &dy));
                acc!(*m, |t| {
                    for (o, &d) in t.data_mut().iter_mut().zip(&dy) {
                        *o = *o - d;
                    }
                });
                acc!(*s, |t| add_vec(t, &ds));
            }
            Op::LogAddExp(a, b) => {
                let out = &node.value;
                let (va, vb) = (val(*a), val(*b));
                let weight = |x: T, o: T| {
                    if o == T::neg_infinity() {
                        T::zero()
                    } else {
                        (x - o).exp()
                    }
                };
                if wants(*a) {
                    let d: Vec<T> = (0..g.len())
                        .map(|k| g.data()[k] * weight(va.data()[k], out.data()[k]))
                        .collect();
                    accumulate(&mut grads[*a], shapes[*a], |t| add_vec(t, &d));
                }
                if wants(*b) {
                    let d: Vec<T> = (0..g.len())
                        .map(|k| g.data()[k] * weight(vb.data()[k], out.data()[k]))
                        .collect();
                    accumulate(&mut grads[*b], shapes[*b], |t| add_vec(t, &d));
                }
            }
            Op::GatedScan(init, gate, drive) => {
                let out = &node.value;
                let vg = val(*gate);
                let (n, f) = (vg.rows(), vg.cols());
                let mut dg = vec![T::zero(); n * f];
                let mut dd = vec![T::zero(); n * f];
                let mut carry: Vec<T> = g.row_slice(n).to_vec();
                for t in (0..n).rev() {
                    for j in 0..f {
                        dg[t * f + j] = carry[j] * out.get(t, j);
                        dd[t * f + j] = carry[j];
                        carry[j] = g.get(t, j) + carry[j] * vg.get(t, j);
                    }
                }
                acc!(*gate, |t| add_vec(t, &dg));
                acc!(*drive, |t| add_vec(t, &dd));
                acc!(*init, |t| add_vec(t, &carry));
            }
        }
        grads[id] = Some(g);
    }
    Ok(Gradients { grads, shapes })
}

fn g_full<T: Scalar>(shape: [usize; 2], v: T) -> Tensor<T> {
    Tensor::full(shape[0], shape[1], v)
}

fn zip_acc<T: Scalar>(t: &mut Tensor<T>, g: &Tensor<T>, f: impl Fn(T, T) -> T) {
    for (o, &gi) in t.data_mut().iter_mut().zip(g.data()) {
        *o = *o + f(*o, gi);
    }
}

fn zip3_acc<T: Scalar>(t: &mut Tensor<T>, g: &Tensor<T>, x: &Tensor<T>, f: impl Fn(T, T) -> T) {
    for ((o, &gi), &xi) in t.data_mut().iter_mut().zip(g.data()).zip(x.data()) {
        *o = *o + f(gi, xi);
    }
}

fn add_vec<T: Scalar>(t: &mut Tensor<T>, d: &[T]) {
    for (o, &x) in t.data_mut().iter_mut().zip(d) {
        *o = *o + x;
    }
}

fn add_col_sums<T: Scalar>(t: &mut Tensor<T>, g: &Tensor<T>) {
    for r in 0..g.rows() {
        for (o, &x) in t.data_mut().iter_mut().zip(g.row_slice(r)) {
            *o = *o + x;
        }
    }
}
