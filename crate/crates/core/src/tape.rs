// SPDX-License-Identifier: MIT OR Apache-2.0

//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation as a node holding its value, a
//! zero-initialised gradient of the same shape and the operands it was built
//! from. Nodes are appended in evaluation order, so walking the tape
//! backwards is a valid topological order. Gradients accumulate with sum
//! semantics; a second [`Tape::backward`] without [`Tape::zero_grad`] is
//! rejected.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::{gemm, softmax_in_place, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Entrywise operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unary {
    Tanh,
    Relu,
    Sigmoid,
    Exp,
    Log,
    Neg,
    Square,
    /// Subgradient 0 at 0.
    Abs,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Unary(Unary, Var),
    Sum(Var),
    RowSum(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    Pick(Var, Vec<usize>),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    Unfold { x: Var, stride: usize, width: usize },
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    grad: Matrix,
    op: Op,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
}

fn dim_err(op: &'static str, a: &Matrix, b: &Matrix) -> Error {
    Error::Dimension {
        op,
        left: a.shape(),
        right: b.shape(),
    }
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + libm::exp(-v))
    } else {
        let e = libm::exp(v);
        e / (1.0 + e)
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

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        let grad = Matrix::zeros(value.rows(), value.cols());
        self.nodes.push(Node { value, grad, op });
        Var(self.nodes.len() - 1)
    }

    /// Input or parameter node.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].grad
    }

    /// Scalar value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.get(0, 0)
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad.as_mut_slice().fill(0.0);
        }
        self.backward_done = false;
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self
            .value(a)
            .add(self.value(b))
            .map_err(|_| dim_err("add", self.value(a), self.value(b)))?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self
            .value(a)
            .sub(self.value(b))
            .map_err(|_| dim_err("sub", self.value(a), self.value(b)))?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    /// Entrywise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self
            .value(a)
            .hadamard(self.value(b))
            .map_err(|_| dim_err("mul", self.value(a), self.value(b)))?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    /// Broadcast a `1 x c` row over every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let v = self.value(a).add_row(self.value(bias))?;
        Ok(self.push(v, Op::AddRow(a, bias)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).scale(s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn unary(&mut self, op: Unary, a: Var) -> Result<Var> {
        let x = self.value(a);
        let v = match op {
            Unary::Tanh => x.map(libm::tanh),
            Unary::Relu => x.map(|v| v.max(0.0)),
            Unary::Sigmoid => x.map(sigmoid),
            Unary::Exp => x.map(libm::exp),
            Unary::Log => {
                if let Some(&bad) = x.as_slice().iter().find(|&&v| !(v > 0.0)) {
                    return Err(Error::Domain {
                        op: "log",
                        value: bad,
                    });
                }
                x.map(libm::log)
            }
            Unary::Neg => x.map(|v| -v),
            Unary::Square => x.map(|v| v * v),
            Unary::Abs => x.map(f64::abs),
        };
        Ok(self.push(v, Op::Unary(op, a)))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(Unary::Tanh, a).expect("tanh is total")
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(Unary::Relu, a).expect("relu is total")
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(Unary::Sigmoid, a).expect("sigmoid is total")
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(Unary::Exp, a).expect("exp is total")
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Log, a)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(Unary::Neg, a).expect("neg is total")
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(Unary::Square, a).expect("square is total")
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(Unary::Abs, a).expect("abs is total")
    }

    /// Sum of all entries, `1 x 1`.
    pub fn sum(&mut self, a: Var) -> Var {
        let v = Matrix::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Per-row sums, `n x 1`.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let v = Matrix::from_fn(x.rows(), 1, |r, _| x.row(r).iter().sum());
        self.push(v, Op::RowSum(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let v = self.value(a).softmax_rows();
        self.push(v, Op::SoftmaxRows(a))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for r in 0..v.rows() {
            let row = v.row_mut(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + libm::log(row.iter().map(|x| libm::exp(x - max)).sum::<f64>());
            for x in row.iter_mut() {
                *x -= lse;
            }
        }
        self.push(v, Op::LogSoftmaxRows(a))
    }

    /// Select column `idx[r]` of row `r`, giving `n x 1`.
    pub fn pick(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let x = self.value(a);
        if idx.len() != x.rows() || idx.iter().any(|&c| c >= x.cols()) {
            return Err(Error::Argument(format!(
                "pick: {} indices for {}x{} matrix",
                idx.len(),
                x.rows(),
                x.cols()
            )));
        }
        let v = Matrix::from_fn(x.rows(), 1, |r, _| x.get(r, idx[r]));
        Ok(self.push(v, Op::Pick(a, idx.to_vec())))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let x = self.value(a);
        if start + len > x.cols() {
            return Err(Error::Argument(format!(
                "slice_cols {start}..{} of {} columns",
                start + len,
                x.cols()
            )));
        }
        let v = Matrix::from_fn(x.rows(), len, |r, c| x.get(r, start + c));
        Ok(self.push(v, Op::SliceCols(a, start)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map_or(0, |p| self.value(*p).rows());
        let mut cols = 0;
        for p in parts {
            let x = self.value(*p);
            if x.rows() != rows {
                return Err(dim_err("concat_cols", self.value(parts[0]), x));
            }
            cols += x.cols();
        }
        let mut v = Matrix::zeros(rows, cols);
        let mut off = 0;
        for p in parts {
            let x = self.value(*p);
            for r in 0..rows {
                v.row_mut(r)[off..off + x.cols()].copy_from_slice(x.row(r));
            }
            off += x.cols();
        }
        Ok(self.push(v, Op::ConcatCols(parts.to_vec())))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let x = self.value(a);
        if start + len > x.rows() {
            return Err(Error::Argument(format!(
                "slice_rows {start}..{} of {} rows",
                start + len,
                x.rows()
            )));
        }
        let idx: Vec<usize> = (start..start + len).collect();
        let v = x.select_rows(&idx);
        Ok(self.push(v, Op::SliceRows(a, start)))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let mats: Vec<&Matrix> = parts.iter().map(|p| self.value(*p)).collect();
        let v = Matrix::vstack(&mats)?;
        Ok(self.push(v, Op::ConcatRows(parts.to_vec())))
    }

    /// Rows `idx[i]` of `a`; the backward pass scatter-adds.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let x = self.value(a);
        if idx.iter().any(|&i| i >= x.rows()) {
            return Err(Error::Argument("gather_rows: index out of range".into()));
        }
        let v = x.select_rows(idx);
        Ok(self.push(v, Op::GatherRows(a, idx.to_vec())))
    }

    /// Sliding-window unfold for 1-D convolution over time-major batches.
    ///
    /// Row `t * stride + b` holds step `t` of sequence `b`. The output row
    /// concatenates the rows at steps `t - width/2 ..= t + width/2` of the same
    /// sequence, zero-filled past either end. `width` must be odd.
    pub fn unfold(&mut self, a: Var, stride: usize, width: usize) -> Result<Var> {
        let x = self.value(a);
        if width.is_multiple_of(2) || stride == 0 || !x.rows().is_multiple_of(stride) {
            return Err(Error::Argument(format!(
                "unfold: width {width}, stride {stride}, rows {}",
                x.rows()
            )));
        }
        let c = x.cols();
        let half = (width / 2) as isize;
        let rows = x.rows() as isize;
        let mut v = Matrix::zeros(x.rows(), c * width);
        for r in 0..x.rows() {
            for k in 0..width {
                let src = r as isize + (k as isize - half) * stride as isize;
                if (0..rows).contains(&src) {
                    v.row_mut(r)[k * c..(k + 1) * c].copy_from_slice(x.row(src as usize));
                }
            }
        }
        Ok(self.push(
            v,
            Op::Unfold {
                x: a,
                stride,
                width,
            },
        ))
    }

    /// Accumulate gradients of the scalar `root` into every reachable node.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let shape = self.value(root).shape();
        if shape != (1, 1) {
            return Err(Error::Contract(format!(
                "backward root must be 1x1, got {}x{}",
                shape.0, shape.1
            )));
        }
        if self.backward_done {
            return Err(Error::Contract(
                "backward already ran on this tape; call zero_grad first".into(),
            ));
        }
        self.backward_done = true;
        self.nodes[root.0].grad.as_mut_slice()[0] += 1.0;
        for i in (0..=root.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            if matches!(node.op, Op::Leaf) || node.grad.as_slice().iter().all(|&g| g == 0.0) {
                continue;
            }
            propagate(before, node)?;
        }
        Ok(())
    }
}

fn accumulate(nodes: &mut [Node], v: Var, g: &Matrix) {
    for (a, b) in nodes[v.0].grad.as_mut_slice().iter_mut().zip(g.as_slice()) {
        *a += b;
    }
}

fn propagate(nodes: &mut [Node], node: &Node) -> Result<()> {
    let g = &node.grad;
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let ga = gemm(g, false, &nodes[b.0].value, true)?;
            let gb = gemm(&nodes[a.0].value, true, g, false)?;
            accumulate(nodes, *a, &ga);
            accumulate(nodes, *b, &gb);
        }
        Op::Add(a, b) => {
            accumulate(nodes, *a, g);
            accumulate(nodes, *b, g);
        }
        Op::Sub(a, b) => {
            accumulate(nodes, *a, g);
            accumulate(nodes, *b, &g.scale(-1.0));
        }
        Op::Mul(a, b) => {
            let ga = g.hadamard(&nodes[b.0].value)?;
            let gb = g.hadamard(&nodes[a.0].value)?;
            accumulate(nodes, *a, &ga);
            accumulate(nodes, *b, &gb);
        }
        Op::AddRow(a, bias) => {
            accumulate(nodes, *a, g);
            let cols = g.cols();
            let gb = nodes[bias.0].grad.as_mut_slice();
            for r in 0..g.rows() {
                for c in 0..cols {
                    gb[c] += g.get(r, c);
                }
            }
        }
        Op::Scale(a, s) => accumulate(nodes, *a, &g.scale(*s)),
        Op::Unary(op, a) => {
            let x = &nodes[a.0].value;
            let y = &node.value;
            let local = match op {
                Unary::Tanh => y.map(|t| 1.0 - t * t),
                Unary::Relu => x.map(|v| if v > 0.0 { 1.0 } else { 0.0 }),
                Unary::Sigmoid => y.map(|s| s * (1.0 - s)),
                Unary::Exp => y.clone(),
                Unary::Log => x.map(|v| 1.0 / v),
                Unary::Neg => x.map(|_| -1.0),
                Unary::Square => x.map(|v| 2.0 * v),
                Unary::Abs => x.map(|v| {
                    if v > 0.0 {
                        1.0
                    } else if v < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                }),
            };
            let ga = g.hadamard(&local)?;
            accumulate(nodes, *a, &ga);
        }
        Op::Sum(a) => {
            let s = g.get(0, 0);
            for v in nodes[a.0].grad.as_mut_slice() {
                *v += s;
            }
        }
        Op::RowSum(a) => {
            let ga = &mut nodes[a.0].grad;
            let cols = ga.cols();
            for r in 0..ga.rows() {
                let s = g.get(r, 0);
                for c in 0..cols {
                    ga.as_mut_slice()[r * cols + c] += s;
                }
            }
        }
        Op::SoftmaxRows(a) => {
            let y = &node.value;
            let mut ga = Matrix::zeros(y.rows(), y.cols());
            for r in 0..y.rows() {
                let dot: f64 = y.row(r).iter().zip(g.row(r)).map(|(p, d)| p * d).sum();
                for c in 0..y.cols() {
                    ga.set(r, c, y.get(r, c) * (g.get(r, c) - dot));
                }
            }
            accumulate(nodes, *a, &ga);
        }
        Op::LogSoftmaxRows(a) => {
            let mut p = nodes[a.0].value.clone();
            let mut ga = Matrix::zeros(p.rows(), p.cols());
            for r in 0..p.rows() {
                softmax_in_place(p.row_mut(r));
                let total: f64 = g.row(r).iter().sum();
                for c in 0..p.cols() {
                    ga.set(r, c, g.get(r, c) - p.get(r, c) * total);
                }
            }
            accumulate(nodes, *a, &ga);
        }
        Op::Pick(a, idx) => {
            let ga = &mut nodes[a.0].grad;
            for (r, &c) in idx.iter().enumerate() {
                let v = ga.get(r, c) + g.get(r, 0);
                ga.set(r, c, v);
            }
        }
        Op::SliceCols(a, start) => {
            let ga = &mut nodes[a.0].grad;
            for r in 0..g.rows() {
                for c in 0..g.cols() {
                    let v = ga.get(r, start + c) + g.get(r, c);
                    ga.set(r, start + c, v);
                }
            }
        }
        Op::ConcatCols(parts) => {
            let mut off = 0;
            for p in parts {
                let ga = &mut nodes[p.0].grad;
                let w = ga.cols();
                for r in 0..g.rows() {
                    for (dst, src) in ga.row_mut(r).iter_mut().zip(&g.row(r)[off..off + w]) {
                        *dst += src;
                    }
                }
                off += w;
            }
        }
        Op::SliceRows(a, start) => {
            let ga = &mut nodes[a.0].grad;
            for r in 0..g.rows() {
                for (dst, src) in ga.row_mut(start + r).iter_mut().zip(g.row(r)) {
                    *dst += src;
                }
            }
        }
        Op::ConcatRows(parts) => {
            let mut off = 0;
            for p in parts {
                let ga = &mut nodes[p.0].grad;
                let h = ga.rows();
                for r in 0..h {
                    for (dst, src) in ga.row_mut(r).iter_mut().zip(g.row(off + r)) {
                        *dst += src;
                    }
                }
                off += h;
            }
        }
        Op::GatherRows(a, idx) => {
            let ga = &mut nodes[a.0].grad;
            for (r, &i) in idx.iter().enumerate() {
                for (dst, src) in ga.row_mut(i).iter_mut().zip(g.row(r)) {
                    *dst += src;
                }
            }
        }
        Op::Unfold { x, stride, width } => {
            let ga = &mut nodes[x.0].grad;
            let c = ga.cols();
            let half = (*width / 2) as isize;
            let rows = ga.rows() as isize;
            for r in 0..g.rows() {
                for k in 0..*width {
                    let src = r as isize + (k as isize - half) * *stride as isize;
                    if (0..rows).contains(&src) {
                        let block = &g.row(r)[k * c..(k + 1) * c];
                        for (dst, s) in ga.row_mut(src as usize).iter_mut().zip(block) {
                            *dst += s;
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

/// Max relative error between an analytic gradient and central differences.
///
/// Per entry: `|analytic - numeric| / (|analytic| + |numeric| + 1e-12)`.
pub fn grad_check_with(
    f: impl Fn(&Matrix) -> f64,
    analytic: &Matrix,
    x: &Matrix,
    h: f64,
) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::Argument("grad_check step must be positive".into()));
    }
    if analytic.shape() != x.shape() {
        return Err(dim_err("grad_check", analytic, x));
    }
    let mut worst: f64 = 0.0;
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.as_slice()[i];
        probe.as_mut_slice()[i] = orig + h;
        let up = f(&probe);
        probe.as_mut_slice()[i] = orig - h;
        let down = f(&probe);
        probe.as_mut_slice()[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic.as_slice()[i];
        worst = worst.max((a - numeric).abs() / (a.abs() + numeric.abs() + 1e-12));
    }
    Ok(worst)
}

/// [`grad_check_with`] where the analytic gradient comes from a tape built by `f`.
pub fn grad_check<F>(f: F, x: &Matrix, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let input = tape.leaf(x.clone());
    let out = f(&mut tape, input)?;
    tape.backward(out)?;
    let analytic = tape.grad(input).clone();
    let eval = |m: &Matrix| {
        let mut t = Tape::new();
        let i = t.leaf(m.clone());
        match f(&mut t, i) {
            Ok(o) => t.scalar(o),
            Err(_) => f64::NAN,
        }
    };
    grad_check_with(eval, &analytic, x, h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn elementwise_values() {
        let mut t = Tape::new();
        let z = t.leaf(Matrix::zeros(2, 2));
        let th = t.tanh(z);
        assert_eq!(t.value(th), &Matrix::zeros(2, 2));
        let x = t.leaf(Matrix::row_vector(&[-1.0, 2.0]));
        let r = t.relu(x);
        assert_eq!(t.value(r).as_slice(), &[0.0, 2.0]);
    }

    #[test]
    fn log_of_non_positive_is_domain_error() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::row_vector(&[1.0, 0.0]));
        assert_eq!(
            t.log(x),
            Err(Error::Domain {
                op: "log",
                value: 0.0
            })
        );
    }

    #[test]
    fn tanh_derivative_matches_central_difference() {
        let x = Matrix::scalar(0.3);
        let err = grad_check(
            |t, v| {
                let y = t.tanh(v);
                Ok(t.sum(y))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn linear_gradient_is_weight_vector() {
        let w = Matrix::from_rows(&[[0.5], [-2.0], [3.0]]).unwrap();
        let mut t = Tape::new();
        let x = t.leaf(Matrix::row_vector(&[1.0, 2.0, 3.0]));
        let wv = t.leaf(w.clone());
        let y = t.matmul(x, wv).unwrap();
        t.backward(y).unwrap();
        assert_eq!(t.grad(x).as_slice(), w.as_slice());
    }

    #[test]
    fn constant_node_has_zero_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::row_vector(&[1.0, 2.0]));
        let c = t.leaf(Matrix::row_vector(&[4.0, 5.0]));
        let s = t.sum(x);
        t.backward(s).unwrap();
        assert_eq!(t.grad(c), &Matrix::zeros(1, 2));
    }

    #[test]
    fn backward_contracts() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::zeros(1, 2));
        assert!(matches!(t.backward(x), Err(Error::Contract(_))));
        let s = t.sum(x);
        t.backward(s).unwrap();
        assert!(matches!(t.backward(s), Err(Error::Contract(_))));
        t.zero_grad();
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).as_slice(), &[1.0, 1.0]);
    }

    #[test]
    fn linear_function_grad_check_is_exact() {
        let mut rng = Rng::new(5);
        let w = rng.normal_matrix(4, 1, 1.0);
        let x = rng.normal_matrix(1, 4, 1.0);
        let err = grad_check(
            |t, v| {
                let wv = t.leaf(w.clone());
                t.matmul(v, wv)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let x = Matrix::row_vector(&[0.7, -1.3, 2.0]);
        let f = |m: &Matrix| m.sq_norm();
        let doubled = x.scale(2.0).scale(2.0);
        let err = grad_check_with(f, &doubled, &x, 1e-5).unwrap();
        assert!((err - 1.0 / 3.0).abs() < 1e-6, "{err}");
    }

    #[test]
    fn softmax_cross_entropy_head() {
        let mut rng = Rng::new(9);
        let w = rng.normal_matrix(5, 4, 0.5);
        let x = rng.normal_matrix(3, 5, 1.0);
        let labels = [0usize, 3, 1];
        let err = grad_check(
            |t, v| {
                let wv = t.leaf(w.clone());
                let logits = t.matmul(v, wv)?;
                let lp = t.log_softmax_rows(logits);
                let picked = t.pick(lp, &labels)?;
                let s = t.mean(picked);
                Ok(t.neg(s))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn structural_ops_pass_grad_check() {
        let mut rng = Rng::new(21);
        let x = rng.normal_matrix(6, 3, 1.0);
        let k = rng.normal_matrix(9, 2, 1.0);
        let err = grad_check(
            |t, v| {
                let u = t.unfold(v, 2, 3)?;
                let kv = t.leaf(k.clone());
                let h = t.matmul(u, kv)?;
                let a = t.slice_cols(h, 1, 1)?;
                let b = t.slice_rows(v, 2, 3)?;
                let g = t.gather_rows(v, &[0, 0, 5])?;
                let c = t.concat_rows(&[b, g])?;
                let s1 = t.sigmoid(c);
                let p = t.softmax_rows(s1);
                let q = t.row_sum(p);
                let cc = t.concat_cols(&[a, a])?;
                let sq = t.square(cc);
                let e = t.exp(q);
                let s2 = t.sum(sq);
                let s3 = t.sum(e);
                t.add(s2, s3)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn unfold_zero_pads_sequence_ends() {
        let mut t = Tape::new();
        // two sequences interleaved, three steps, one channel
        let x = t.leaf(Matrix::from_rows(&[[1.0], [10.0], [2.0], [20.0], [3.0], [30.0]]).unwrap());
        let u = t.unfold(x, 2, 3).unwrap();
        let v = t.value(u);
        assert_eq!(v.row(0), &[0.0, 1.0, 2.0]);
        assert_eq!(v.row(3), &[10.0, 20.0, 30.0]);
        assert_eq!(v.row(5), &[20.0, 30.0, 0.0]);
    }
}
