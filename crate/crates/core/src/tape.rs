//! Define-by-run reverse-mode differentiation over dense tensors.
//!
//! Every forward operation appends a node holding its value and the indices of
//! its parents, so tape order is a topological order. [`Tape::grad`] walks the
//! nodes once in reverse, accumulating adjoints only along paths that reach a
//! trainable leaf.
//!
//! ```
//! use rsae_core::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]));
//! let sq = tape.square(x).unwrap();
//! let loss = tape.sum(sq).unwrap();
//! let g = tape.grad(loss, &[x]).unwrap();
//! assert_eq!(g[0].data(), &[2.0, 4.0, 6.0]);
//! ```

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::activation::Activation;
use crate::error::{bail, Error, Result};
use crate::tensor::{gemm_nt, gemm_tn, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Componentwise unary operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unary {
    Sin,
    Abs,
    Square,
    /// The `order`-th derivative of an activation (order 0 is the activation itself).
    Act(Activation, u8),
}

impl Unary {
    fn eval(self, x: f64) -> f64 {
        match self {
            Unary::Sin => libm::sin(x),
            Unary::Abs => x.abs(),
            Unary::Square => x * x,
            Unary::Act(a, k) => a.derivative(x, k),
        }
    }

    fn slope(self, x: f64) -> f64 {
        match self {
            Unary::Sin => libm::cos(x),
            Unary::Abs => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Unary::Square => 2.0 * x,
            Unary::Act(a, k) => a.derivative(x, k + 1),
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    AddBias(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    ScaleRows(usize, Arc<Vec<f64>>, f64),
    Unary(usize, Unary),
    Sum(usize),
    Mean(usize),
    SliceRows(usize, usize),
    ConcatCols(Vec<usize>),
    Monomials(usize, Arc<Vec<Vec<usize>>>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A single-use computation record. Build one per loss evaluation.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
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

    /// A trainable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// An input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push_raw(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[usize], what: &str) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite(format!("{what} (tape node {})", self.nodes.len())));
        }
        let requires_grad = parents.iter().any(|&p| self.nodes[p].requires_grad);
        Ok(self.push_raw(value, op, requires_grad))
    }

    fn val(&self, i: usize) -> &Tensor {
        &self.nodes[i].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.val(a.0).matmul(self.val(b.0))?;
        self.push(out, Op::MatMul(a.0, b.0), &[a.0, b.0], "matmul")
    }

    /// Adds a bias vector to every row of a matrix.
    pub fn add_bias(&mut self, m: Var, bias: Var) -> Result<Var> {
        let (mv, bv) = (self.val(m.0), self.val(bias.0));
        let cols = mv.cols();
        if !mv.is_matrix() || bv.len() != cols || bv.shape().len() > 2 || bv.rows() != 1 {
            bail!(Dimension, "add_bias: bias {:?} does not fit matrix {:?}", bv.shape(), mv.shape());
        }
        let mut out = mv.clone();
        for row in out.data_mut().chunks_exact_mut(cols) {
            for (o, b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        self.push(out, Op::AddBias(m.0, bias.0), &[m.0, bias.0], "add_bias")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.val(a.0).zip_map(self.val(b.0), |x, y| x + y)?;
        self.push(out, Op::Add(a.0, b.0), &[a.0, b.0], "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.val(a.0).zip_map(self.val(b.0), |x, y| x - y)?;
        self.push(out, Op::Sub(a.0, b.0), &[a.0, b.0], "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.val(a.0).zip_map(self.val(b.0), |x, y| x * y)?;
        self.push(out, Op::Mul(a.0, b.0), &[a.0, b.0], "mul")
    }

    /// Multiplication by a constant.
    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.val(a.0).map(|x| c * x);
        self.push(out, Op::Scale(a.0, c), &[a.0], "scale")
    }

    /// Multiplies row `i` of a matrix by `coef * factors[i]`.
    pub fn scale_rows(&mut self, a: Var, factors: &Arc<Vec<f64>>, coef: f64) -> Result<Var> {
        let av = self.val(a.0);
        if !av.is_matrix() || av.rows() != factors.len() {
            bail!(
                Dimension,
                "scale_rows: {} factors for matrix {:?}",
                factors.len(),
                av.shape()
            );
        }
        let cols = av.cols();
        let mut out = av.clone();
        for (row, &f) in out.data_mut().chunks_exact_mut(cols).zip(factors.iter()) {
            let s = coef * f;
            row.iter_mut().for_each(|v| *v *= s);
        }
        self.push(out, Op::ScaleRows(a.0, factors.clone(), coef), &[a.0], "scale_rows")
    }

    pub fn unary(&mut self, a: Var, op: Unary) -> Result<Var> {
        if let Unary::Act(_, k) = op {
            if k > 2 {
                bail!(Contract, "activation derivatives above order 2 cannot be recorded");
            }
        }
        let out = self.val(a.0).map(|x| op.eval(x));
        self.push(out, Op::Unary(a.0, op), &[a.0], "unary")
    }

    pub fn activation(&mut self, a: Var, act: Activation) -> Result<Var> {
        self.unary(a, Unary::Act(act, 0))
    }

    pub fn elu(&mut self, a: Var) -> Result<Var> {
        self.activation(a, Activation::Elu)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.activation(a, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.activation(a, Activation::Tanh)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.activation(a, Activation::Relu)
    }

    pub fn sin(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Sin)
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Abs)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Square)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        if self.val(a.0).is_empty() {
            bail!(Domain, "sum of an empty tensor");
        }
        let s = self.val(a.0).sum();
        self.push(Tensor::scalar(s), Op::Sum(a.0), &[a.0], "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.val(a.0).len();
        if n == 0 {
            bail!(Domain, "mean of an empty tensor");
        }
        let s = self.val(a.0).sum() / n as f64;
        self.push(Tensor::scalar(s), Op::Mean(a.0), &[a.0], "mean")
    }

    /// `mean((a - b)²)`.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let sq = self.square(d)?;
        self.mean(sq)
    }

    /// `sum((a - b)²)`.
    pub fn sse(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let sq = self.square(d)?;
        self.sum(sq)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let out = self.val(a.0).slice_rows(start, len)?;
        self.push(out, Op::SliceRows(a.0, start), &[a.0], "slice_rows")
    }

    /// Joins matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(first) = parts.first() else {
            bail!(Dimension, "concat_cols of nothing");
        };
        let rows = self.val(first.0).rows();
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let v = self.val(p.0);
            if !v.is_matrix() || v.rows() != rows {
                bail!(Dimension, "concat_cols: part {:?} does not have {} rows", v.shape(), rows);
            }
            widths.push(v.cols());
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; rows * total];
        let mut offset = 0;
        for (p, &w) in parts.iter().zip(&widths) {
            let src = self.val(p.0).data();
            for r in 0..rows {
                out[r * total + offset..r * total + offset + w]
                    .copy_from_slice(&src[r * w..(r + 1) * w]);
            }
            offset += w;
        }
        let idx: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let out = Tensor::matrix(rows, total, out)?;
        self.push(out, Op::ConcatCols(idx.clone()), &idx, "concat_cols")
    }

    /// Column `k` of the output is the product of the input columns listed in
    /// `terms[k]` (an empty list yields a column of ones).
    pub fn monomials(&mut self, a: Var, terms: &Arc<Vec<Vec<usize>>>) -> Result<Var> {
        let av = self.val(a.0);
        if !av.is_matrix() {
            bail!(Dimension, "monomials needs a matrix, got {:?}", av.shape());
        }
        let (rows, cols) = (av.rows(), av.cols());
        if let Some(bad) = terms.iter().flatten().find(|&&i| i >= cols) {
            bail!(Dimension, "monomial factor {} out of range for {} columns", bad, cols);
        }
        let p = terms.len();
        let mut out = vec![1.0; rows * p];
        for r in 0..rows {
            let src = av.row(r);
            for (k, term) in terms.iter().enumerate() {
                out[r * p + k] = term.iter().map(|&i| src[i]).product();
            }
        }
        let out = Tensor::matrix(rows, p, out)?;
        self.push(out, Op::Monomials(a.0, terms.clone()), &[a.0], "monomials")
    }

    /// Reverse-mode gradients of the scalar `loss` with respect to `wrt`.
    ///
    /// Inputs not connected to `loss` receive zero gradients.
    pub fn grad(&self, loss: Var, wrt: &[Var]) -> Result<Vec<Tensor>> {
        if !self.val(loss.0).is_scalar() {
            bail!(
                Contract,
                "gradient requires a scalar loss, got shape {:?}",
                self.val(loss.0).shape()
            );
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Tensor::filled(self.val(loss.0).shape(), 1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                adj[i] = Some(g);
                continue;
            }
            self.backward_node(i, &g, &mut adj)?;
        }
        Ok(wrt
            .iter()
            .map(|v| match adj.get(v.0).and_then(|a| a.clone()) {
                Some(g) => g,
                None => Tensor::zeros(self.val(v.0).shape()),
            })
            .collect())
    }

    fn wants(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    fn backward_node(&self, i: usize, g: &Tensor, adj: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if self.wants(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm_nt(m, n, k, g.data(), bv.data(), &mut da);
                    accumulate(adj, *a, Tensor::matrix(m, k, da)?)?;
                }
                if self.wants(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm_tn(m, k, n, av.data(), g.data(), &mut db);
                    accumulate(adj, *b, Tensor::matrix(k, n, db)?)?;
                }
            }
            Op::AddBias(m, b) => {
                if self.wants(*m) {
                    accumulate(adj, *m, g.clone())?;
                }
                if self.wants(*b) {
                    let bv = self.val(*b);
                    let cols = bv.len();
                    let mut db = vec![0.0; cols];
                    for row in g.data().chunks_exact(cols) {
                        for (d, x) in db.iter_mut().zip(row) {
                            *d += x;
                        }
                    }
                    accumulate(adj, *b, Tensor::new(bv.shape().to_vec(), db)?)?;
                }
            }
            Op::Add(a, b) => {
                if self.wants(*a) {
                    accumulate(adj, *a, g.clone())?;
                }
                if self.wants(*b) {
                    accumulate(adj, *b, g.clone())?;
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    accumulate(adj, *a, g.clone())?;
                }
                if self.wants(*b) {
                    accumulate(adj, *b, g.map(|x| -x))?;
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    accumulate(adj, *a, g.zip_map(self.val(*b), |x, y| x * y)?)?;
                }
                if self.wants(*b) {
                    accumulate(adj, *b, g.zip_map(self.val(*a), |x, y| x * y)?)?;
                }
            }
            Op::Scale(a, c) => {
                let c = *c;
                accumulate(adj, *a, g.map(|x| c * x))?;
            }
            Op::ScaleRows(a, factors, coef) => {
                let cols = g.cols();
                let mut d = g.clone();
                for (row, &f) in d.data_mut().chunks_exact_mut(cols).zip(factors.iter()) {
                    let s = coef * f;
                    row.iter_mut().for_each(|v| *v *= s);
                }
                accumulate(adj, *a, d)?;
            }
            Op::Unary(a, op) => {
                let op = *op;
                let d = g.zip_map(self.val(*a), |gx, x| gx * op.slope(x))?;
                accumulate(adj, *a, d)?;
            }
            Op::Sum(a) => {
                accumulate(adj, *a, Tensor::filled(self.val(*a).shape(), g.item()))?;
            }
            Op::Mean(a) => {
                let av = self.val(*a);
                let s = g.item() / av.len() as f64;
                accumulate(adj, *a, Tensor::filled(av.shape(), s))?;
            }
            Op::SliceRows(a, start) => {
                let av = self.val(*a);
                let cols = av.cols();
                let mut d = Tensor::zeros(av.shape());
                d.data_mut()[start * cols..start * cols + g.len()].copy_from_slice(g.data());
                accumulate(adj, *a, d)?;
            }
            Op::ConcatCols(parts) => {
                let total = g.cols();
                let rows = g.rows();
                let mut offset = 0;
                for &p in parts {
                    let w = self.val(p).cols();
                    if self.wants(p) {
                        let mut d = vec![0.0; rows * w];
                        for r in 0..rows {
                            d[r * w..(r + 1) * w].copy_from_slice(
                                &g.data()[r * total + offset..r * total + offset + w],
                            );
                        }
                        accumulate(adj, p, Tensor::matrix(rows, w, d)?)?;
                    }
                    offset += w;
                }
            }
            Op::Monomials(a, terms) => {
                let av = self.val(*a);
                let (rows, cols) = (av.rows(), av.cols());
                let p = terms.len();
                let mut d = vec![0.0; rows * cols];
                for r in 0..rows {
                    let src = av.row(r);
                    let grow = &g.data()[r * p..(r + 1) * p];
                    let drow = &mut d[r * cols..(r + 1) * cols];
                    for (term, &gk) in terms.iter().zip(grow) {
                        if gk == 0.0 {
                            continue;
                        }
                        for skip in 0..term.len() {
                            let mut prod = gk;
                            for (q, &f) in term.iter().enumerate() {
                                if q != skip {
                                    prod *= src[f];
                                }
                            }
                            drow[term[skip]] += prod;
                        }
                    }
                }
                accumulate(adj, *a, Tensor::matrix(rows, cols, d)?)?;
            }
        }
        Ok(())
    }
}

fn accumulate(adj: &mut [Option<Tensor>], i: usize, g: Tensor) -> Result<()> {
    match &mut adj[i] {
        Some(existing) => {
            existing.check_same_shape(&g, "gradient accumulation")?;
            for (e, x) in existing.data_mut().iter_mut().zip(g.data()) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(g),
    }
    Ok(())
}
