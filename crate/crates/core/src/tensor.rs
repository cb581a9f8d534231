//! Dense 2-D tensors with tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation of one forward pass; [`Graph::backward`]
//! walks the tape in reverse and accumulates gradients into the
//! [`ParamStore`] entries that were bound with [`Graph::param`].
//! Everything is row-major `f64`; scalars are `1x1` matrices.

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Guard added inside `ln(|x| + eps)`.
pub const LOG_EPS: f64 = 1e-7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss((usize, usize)),
    #[error("unknown parameter {0:?}")]
    UnknownParam(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length for {rows}x{cols}");
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::from_vec(rows.len(), cols, data)
    }

    pub fn scalar(x: f64) -> Self {
        Self::from_vec(1, 1, vec![x])
    }

    pub fn column(values: Vec<f64>) -> Self {
        let n = values.len();
        Self::from_vec(n, 1, values)
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Uniform entries in `[-bound, bound]`.
    pub fn uniform<R: Rng>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        Self::from_vec(rows, cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn item(&self) -> f64 {
        assert_eq!(self.shape(), (1, 1), "item() on non-scalar");
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_vec(self.rows, self.cols, self.data.iter().map(|&x| f(x)).collect())
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    fn add_assign(&mut self, other: &Matrix) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Compressed sparse row matrix; constant with respect to differentiation.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from `(row, col, value)` triplets; duplicates are summed and
    /// exact zeros after summation are dropped.
    pub fn from_triplets(rows: usize, cols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0; rows + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(r < rows && c < cols, "triplet ({r},{c}) outside {rows}x{cols}");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                values.push(v);
                indptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..rows {
            indptr[r + 1] += indptr[r];
        }
        let mut m = Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        };
        m.drop_zeros();
        m
    }

    fn drop_zeros(&mut self) {
        if self.values.iter().all(|&v| v != 0.0) {
            return;
        }
        let mut indptr = vec![0; self.rows + 1];
        let mut indices = Vec::with_capacity(self.indices.len());
        let mut values = Vec::with_capacity(self.values.len());
        for r in 0..self.rows {
            for k in self.indptr[r]..self.indptr[r + 1] {
                if self.values[k] != 0.0 {
                    indices.push(self.indices[k]);
                    values.push(self.values[k]);
                }
            }
            indptr[r + 1] = indices.len();
        }
        self.indptr = indptr;
        self.indices = indices;
        self.values = values;
    }

    pub fn identity(n: usize) -> Self {
        Self::from_triplets(n, n, (0..n).map(|i| (i, i, 1.0)).collect())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Iterates `(row, col, value)` in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows).flat_map(move |r| {
            (self.indptr[r]..self.indptr[r + 1]).map(move |k| (r, self.indices[k], self.values[k]))
        })
    }

    pub fn row_entries(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.indptr[r]..self.indptr[r + 1]).map(move |k| (self.indices[k], self.values[k]))
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let span = &self.indices[self.indptr[r]..self.indptr[r + 1]];
        span.binary_search(&c)
            .map_or(0.0, |k| self.values[self.indptr[r] + k])
    }

    pub fn transpose(&self) -> Self {
        Self::from_triplets(self.cols, self.rows, self.iter().map(|(r, c, v)| (c, r, v)).collect())
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows)
            .map(|r| self.values[self.indptr[r]..self.indptr[r + 1]].iter().sum())
            .collect()
    }

    /// `self + c * I`.
    pub fn add_identity(&self, c: f64) -> Self {
        assert_eq!(self.rows, self.cols);
        let mut t: Vec<_> = self.iter().collect();
        t.extend((0..self.rows).map(|i| (i, i, c)));
        Self::from_triplets(self.rows, self.cols, t)
    }

    /// `diag(left) * self * diag(right)`.
    pub fn scale(&self, left: &[f64], right: &[f64]) -> Self {
        let mut out = self.clone();
        for r in 0..self.rows {
            for k in self.indptr[r]..self.indptr[r + 1] {
                out.values[k] *= left[r] * right[self.indices[k]];
            }
        }
        out
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.rows, self.cols);
        for (r, c, v) in self.iter() {
            m.data[r * self.cols + c] += v;
        }
        m
    }

    pub fn matmul_dense(&self, x: &Matrix) -> Result<Matrix> {
        if self.cols != x.rows {
            return Err(TensorError::ShapeMismatch {
                op: "spmm",
                left: (self.rows, self.cols),
                right: x.shape(),
            });
        }
        let mut out = Matrix::zeros(self.rows, x.cols);
        for r in 0..self.rows {
            let orow = &mut out.data[r * x.cols..(r + 1) * x.cols];
            for k in self.indptr[r]..self.indptr[r + 1] {
                let a = self.values[k];
                let xrow = x.row(self.indices[k]);
                for (o, &b) in orow.iter_mut().zip(xrow) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }
}

/// A sparse operator together with its transpose, shared by forward and
/// backward passes.
#[derive(Debug, Clone)]
pub struct SparseOp {
    forward: Arc<SparseMatrix>,
    backward: Arc<SparseMatrix>,
}

impl SparseOp {
    pub fn new(m: SparseMatrix) -> Self {
        let t = m.transpose();
        Self {
            forward: Arc::new(m),
            backward: Arc::new(t),
        }
    }

    /// For matrices known to be symmetric.
    pub fn symmetric(m: SparseMatrix) -> Self {
        let m = Arc::new(m);
        Self {
            forward: m.clone(),
            backward: m,
        }
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.forward
    }
}

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    SpMM(SparseOp, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    ScaleBy(Var, Var),
    RowScale(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    Concat(Vec<Var>),
    SliceCols(Var, usize),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    LogAbs(Var),
    Abs(Var),
    LeakyRelu(Var, f64),
    Softplus(Var),
    Gather(Var, Arc<Vec<usize>>),
    SegmentSum(Var, Arc<Vec<usize>>),
    SegmentSoftmax(Var, Arc<Vec<usize>>, usize),
    Mean(Var),
    Sum(Var),
}

struct Node {
    value: Matrix,
    op: Op,
}

/// Forward tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn mismatch(op: &'static str, a: &Matrix, b: &Matrix) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: a.shape(),
        right: b.shape(),
    }
}

impl Graph {
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
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Constant input.
    pub fn constant(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Leaf)
    }

    /// Binds a named parameter; its gradient flows back into `store`.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let idx = store.index_of(name)?;
        Ok(self.push(store.params[idx].value.clone(), Op::Param(idx)))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    pub fn spmm(&mut self, s: &SparseOp, x: Var) -> Result<Var> {
        let v = s.forward.matmul_dense(self.value(x))?;
        Ok(self.push(v, Op::SpMM(s.clone(), x)))
    }

    fn zip_with(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(mismatch(name, x, y));
        }
        Ok(Matrix::from_vec(
            x.rows,
            x.cols,
            x.data.iter().zip(&y.data).map(|(&p, &q)| f(p, q)).collect(),
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_with(a, b, "add", |p, q| p + q)?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_with(a, b, "sub", |p, q| p - q)?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_with(a, b, "mul", |p, q| p * q)?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    /// Adds the `1 x cols` row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (x, b) = (self.value(a), self.value(bias));
        if b.rows != 1 || b.cols != x.cols {
            return Err(mismatch("add_row", x, b));
        }
        let mut v = x.clone();
        for r in 0..v.rows {
            for (o, &bb) in v.data[r * v.cols..(r + 1) * v.cols].iter_mut().zip(&b.data) {
                *o += bb;
            }
        }
        Ok(self.push(v, Op::AddRow(a, bias)))
    }

    /// Multiplies `a` by the `1 x 1` value `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        let (x, k) = (self.value(a), self.value(s));
        if k.shape() != (1, 1) {
            return Err(mismatch("scale_by", x, k));
        }
        let k = k.data[0];
        let v = x.map(|e| e * k);
        Ok(self.push(v, Op::ScaleBy(a, s)))
    }

    /// Multiplies row `i` of `a` by `s[i, 0]`.
    pub fn row_scale(&mut self, a: Var, s: Var) -> Result<Var> {
        let (x, k) = (self.value(a), self.value(s));
        if k.cols != 1 || k.rows != x.rows {
            return Err(mismatch("row_scale", x, k));
        }
        let mut v = x.clone();
        for r in 0..v.rows {
            let f = k.data[r];
            v.data[r * v.cols..(r + 1) * v.cols].iter_mut().for_each(|e| *e *= f);
        }
        Ok(self.push(v, Op::RowScale(a, s)))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).map(|e| e * k);
        self.push(v, Op::Scale(a, k))
    }

    pub fn add_const(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).map(|e| e + k);
        self.push(v, Op::AddConst(a))
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows;
        for &p in parts {
            if self.value(p).rows != rows {
                return Err(mismatch("concat", self.value(parts[0]), self.value(p)));
            }
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut v = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let m = self.value(p);
                v.data[r * cols + off..r * cols + off + m.cols].copy_from_slice(m.row(r));
                off += m.cols;
            }
        }
        Ok(self.push(v, Op::Concat(parts.to_vec())))
    }

    /// Columns `start..end` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let x = self.value(a);
        if start > end || end > x.cols {
            return Err(TensorError::ShapeMismatch {
                op: "slice_cols",
                left: x.shape(),
                right: (start, end),
            });
        }
        let w = end - start;
        let mut v = Matrix::zeros(x.rows, w);
        for r in 0..x.rows {
            v.data[r * w..(r + 1) * w].copy_from_slice(&x.row(r)[start..end]);
        }
        Ok(self.push(v, Op::SliceCols(a, start)))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        self.push(v, Op::Exp(a))
    }

    /// `ln(|x| + LOG_EPS)`.
    pub fn log_abs(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| (x.abs() + LOG_EPS).ln());
        self.push(v, Op::LogAbs(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::abs);
        self.push(v, Op::Abs(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.push(v, Op::LeakyRelu(a, slope))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).map(softplus);
        self.push(v, Op::Softplus(a))
    }

    /// Row `i` of the output is row `index[i]` of `a`.
    pub fn gather_rows(&mut self, a: Var, index: Arc<Vec<usize>>) -> Result<Var> {
        let x = self.value(a);
        if let Some(&bad) = index.iter().find(|&&i| i >= x.rows) {
            return Err(TensorError::ShapeMismatch {
                op: "gather_rows",
                left: x.shape(),
                right: (bad, 0),
            });
        }
        let mut v = Matrix::zeros(index.len(), x.cols);
        for (o, &i) in index.iter().enumerate() {
            v.data[o * x.cols..(o + 1) * x.cols].copy_from_slice(x.row(i));
        }
        Ok(self.push(v, Op::Gather(a, index)))
    }

    /// Sums the rows of `a` into `n_segments` rows; row `i` goes to `segment[i]`.
    pub fn segment_sum(&mut self, a: Var, segment: Arc<Vec<usize>>, n_segments: usize) -> Result<Var> {
        let x = self.value(a);
        if segment.len() != x.rows || segment.iter().any(|&s| s >= n_segments) {
            return Err(TensorError::ShapeMismatch {
                op: "segment_sum",
                left: x.shape(),
                right: (segment.len(), n_segments),
            });
        }
        let mut v = Matrix::zeros(n_segments, x.cols);
        for (i, &s) in segment.iter().enumerate() {
            for (o, &e) in v.data[s * x.cols..(s + 1) * x.cols].iter_mut().zip(x.row(i)) {
                *o += e;
            }
        }
        Ok(self.push(v, Op::SegmentSum(a, segment)))
    }

    /// Segment sums divided by segment sizes (empty segments stay zero).
    pub fn segment_mean(&mut self, a: Var, segment: Arc<Vec<usize>>, n_segments: usize) -> Result<Var> {
        let mut counts = vec![0.0; n_segments];
        for &s in segment.iter() {
            if s < n_segments {
                counts[s] += 1.0;
            }
        }
        let sum = self.segment_sum(a, segment, n_segments)?;
        let inv = Matrix::column(counts.iter().map(|&c| if c > 0.0 { 1.0 / c } else { 0.0 }).collect());
        let inv = self.constant(inv);
        self.row_scale(sum, inv)
    }

    /// Softmax of each column within each segment of rows.
    pub fn segment_softmax(&mut self, a: Var, segment: Arc<Vec<usize>>, n_segments: usize) -> Result<Var> {
        let x = self.value(a);
        if segment.len() != x.rows || segment.iter().any(|&s| s >= n_segments) {
            return Err(TensorError::ShapeMismatch {
                op: "segment_softmax",
                left: x.shape(),
                right: (segment.len(), n_segments),
            });
        }
        let cols = x.cols;
        let mut max = vec![f64::NEG_INFINITY; n_segments * cols];
        for (i, &s) in segment.iter().enumerate() {
            for c in 0..cols {
                let m = &mut max[s * cols + c];
                *m = m.max(x.data[i * cols + c]);
            }
        }
        let mut v = Matrix::zeros(x.rows, cols);
        let mut total = vec![0.0; n_segments * cols];
        for (i, &s) in segment.iter().enumerate() {
            for c in 0..cols {
                let e = (x.data[i * cols + c] - max[s * cols + c]).exp();
                v.data[i * cols + c] = e;
                total[s * cols + c] += e;
            }
        }
        for (i, &s) in segment.iter().enumerate() {
            for c in 0..cols {
                v.data[i * cols + c] /= total[s * cols + c];
            }
        }
        Ok(self.push(v, Op::SegmentSoftmax(a, segment, n_segments)))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let n = x.data.len().max(1) as f64;
        let v = Matrix::scalar(x.sum() / n);
        self.push(v, Op::Mean(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Matrix::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    /// Reverse pass from the scalar `loss`; parameter gradients are added to
    /// `store`. Returns the gradient of every tape entry.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<Vec<Option<Matrix>>> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(TensorError::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads);
            if let Op::Param(p) = node.op {
                store.params[p].grad.add_assign(&g);
            }
            grads[idx] = Some(g);
        }
        Ok(grads)
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let mut acc = |v: Var, d: Matrix| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&d),
            slot => *slot = Some(d),
        };
        let val = |v: Var| &self.nodes[v.0].value;
        let y = &node.value;
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                acc(*a, matmul_nt(g, val(*b)));
                acc(*b, matmul_tn(val(*a), g));
            }
            Op::SpMM(s, x) => {
                acc(*x, s.backward.matmul_dense(g).expect("shapes checked forward"));
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|e| -e));
            }
            Op::Mul(a, b) => {
                acc(*a, hadamard(g, val(*b)));
                acc(*b, hadamard(g, val(*a)));
            }
            Op::AddRow(a, bias) => {
                let mut db = Matrix::zeros(1, g.cols);
                for r in 0..g.rows {
                    for (o, &e) in db.data.iter_mut().zip(g.row(r)) {
                        *o += e;
                    }
                }
                acc(*a, g.clone());
                acc(*bias, db);
            }
            Op::ScaleBy(a, s) => {
                let k = val(*s).data[0];
                let ds: f64 = g.data.iter().zip(&val(*a).data).map(|(p, q)| p * q).sum();
                acc(*a, g.map(|e| e * k));
                acc(*s, Matrix::scalar(ds));
            }
            Op::RowScale(a, s) => {
                let (x, k) = (val(*a), val(*s));
                let mut da = g.clone();
                let mut dk = Matrix::zeros(k.rows, 1);
                for r in 0..g.rows {
                    let f = k.data[r];
                    let mut dot = 0.0;
                    for c in 0..g.cols {
                        dot += g.data[r * g.cols + c] * x.data[r * g.cols + c];
                        da.data[r * g.cols + c] *= f;
                    }
                    dk.data[r] = dot;
                }
                acc(*a, da);
                acc(*s, dk);
            }
            Op::Scale(a, k) => acc(*a, g.map(|e| e * k)),
            Op::AddConst(a) => acc(*a, g.clone()),
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = val(p).cols;
                    let mut d = Matrix::zeros(g.rows, w);
                    for r in 0..g.rows {
                        d.data[r * w..(r + 1) * w]
                            .copy_from_slice(&g.data[r * g.cols + off..r * g.cols + off + w]);
                    }
                    acc(p, d);
                    off += w;
                }
            }
            Op::SliceCols(a, start) => {
                let x = val(*a);
                let mut d = Matrix::zeros(x.rows, x.cols);
                for r in 0..x.rows {
                    d.data[r * x.cols + start..r * x.cols + start + g.cols]
                        .copy_from_slice(g.row(r));
                }
                acc(*a, d);
            }
            Op::Tanh(a) => acc(*a, zip(g, y, |g, y| g * (1.0 - y * y))),
            Op::Sigmoid(a) => acc(*a, zip(g, y, |g, y| g * y * (1.0 - y))),
            Op::Exp(a) => acc(*a, zip(g, y, |g, y| g * y)),
            Op::LogAbs(a) => acc(
                *a,
                zip(g, val(*a), |g, x| {
                    if x == 0.0 {
                        0.0
                    } else {
                        g * x.signum() / (x.abs() + LOG_EPS)
                    }
                }),
            ),
            Op::Abs(a) => acc(
                *a,
                zip(g, val(*a), |g, x| if x == 0.0 { 0.0 } else { g * x.signum() }),
            ),
            Op::LeakyRelu(a, slope) => {
                acc(*a, zip(g, val(*a), |g, x| if x > 0.0 { g } else { g * slope }))
            }
            Op::Softplus(a) => acc(*a, zip(g, val(*a), |g, x| g * sigmoid(x))),
            Op::Gather(a, index) => {
                let x = val(*a);
                let mut d = Matrix::zeros(x.rows, x.cols);
                for (o, &i) in index.iter().enumerate() {
                    for (e, &ge) in d.data[i * x.cols..(i + 1) * x.cols].iter_mut().zip(g.row(o)) {
                        *e += ge;
                    }
                }
                acc(*a, d);
            }
            Op::SegmentSum(a, segment) => {
                let x = val(*a);
                let mut d = Matrix::zeros(x.rows, x.cols);
                for (i, &s) in segment.iter().enumerate() {
                    d.data[i * x.cols..(i + 1) * x.cols].copy_from_slice(g.row(s));
                }
                acc(*a, d);
            }
            Op::SegmentSoftmax(a, segment, n_segments) => {
                let cols = y.cols;
                let mut dot = vec![0.0; n_segments * cols];
                for (i, &s) in segment.iter().enumerate() {
                    for c in 0..cols {
                        dot[s * cols + c] += g.data[i * cols + c] * y.data[i * cols + c];
                    }
                }
                let mut d = Matrix::zeros(y.rows, cols);
                for (i, &s) in segment.iter().enumerate() {
                    for c in 0..cols {
                        let k = i * cols + c;
                        d.data[k] = y.data[k] * (g.data[k] - dot[s * cols + c]);
                    }
                }
                acc(*a, d);
            }
            Op::Mean(a) => {
                let x = val(*a);
                let k = g.data[0] / x.data.len().max(1) as f64;
                acc(*a, Matrix::from_vec(x.rows, x.cols, vec![k; x.data.len()]));
            }
            Op::Sum(a) => {
                let x = val(*a);
                acc(*a, Matrix::from_vec(x.rows, x.cols, vec![g.data[0]; x.data.len()]));
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn zip(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    Matrix::from_vec(
        a.rows,
        a.cols,
        a.data.iter().zip(&b.data).map(|(&p, &q)| f(p, q)).collect(),
    )
}

fn hadamard(a: &Matrix, b: &Matrix) -> Matrix {
    zip(a, b, |p, q| p * q)
}

/// `a * b^T`
fn matmul_nt(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let arow = a.row(i);
        for j in 0..b.rows {
            out.data[i * b.rows + j] = arow.iter().zip(b.row(j)).map(|(p, q)| p * q).sum();
        }
    }
    out
}

/// `a^T * b`
fn matmul_tn(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(a.cols, b.cols);
    for r in 0..a.rows {
        let brow = b.row(r);
        for i in 0..a.cols {
            let x = a.data[r * a.cols + i];
            if x == 0.0 {
                continue;
            }
            for (o, &e) in out.data[i * b.cols..(i + 1) * b.cols].iter_mut().zip(brow) {
                *o += x * e;
            }
        }
    }
    out
}

/// A trainable tensor with its gradient and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Matrix,
    pub grad: Matrix,
    pub trainable: bool,
    m: Matrix,
    v: Matrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Rescale the joint gradient to this L2 norm when it is larger.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: None,
        }
    }
}

/// Named parameters in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, usize>,
    step: u64,
}

#[derive(Serialize, Deserialize)]
struct CheckpointParam {
    name: String,
    shape: (usize, usize),
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    config_hash: String,
    params: Vec<CheckpointParam>,
}

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Reads only the config hash of a checkpoint document.
pub fn checkpoint_config_hash(text: &str) -> Result<String> {
    #[derive(Deserialize)]
    struct Header {
        config_hash: String,
    }
    let header: Header = serde_json::from_str(text).map_err(|e| TensorError::Checkpoint(e.to_string()))?;
    Ok(header.config_hash)
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Panics on a duplicate name.
    pub fn insert(&mut self, name: &str, value: Matrix, trainable: bool) {
        assert!(!self.index.contains_key(name), "duplicate parameter {name}");
        let (r, c) = value.shape();
        self.index.insert(name.to_string(), self.params.len());
        self.params.push(Param {
            name: name.to_string(),
            grad: Matrix::zeros(r, c),
            m: Matrix::zeros(r, c),
            v: Matrix::zeros(r, c),
            value,
            trainable,
        });
    }

    fn index_of(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        Ok(&self.params[self.index_of(name)?])
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Matrix> {
        let i = self.index_of(name)?;
        Ok(&mut self.params[i].value)
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data.fill(0.0);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .flat_map(|p| p.grad.data.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn grads_finite(&self) -> bool {
        self.params.iter().all(|p| p.grad.is_finite())
    }

    /// One bias-corrected Adam update of every trainable parameter.
    pub fn adam_step(&mut self, cfg: &AdamConfig) {
        self.step += 1;
        let t = self.step as i32;
        let scale = match cfg.clip_norm {
            Some(limit) => {
                let norm = self.grad_norm();
                if norm > limit {
                    limit / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for p in self.params.iter_mut().filter(|p| p.trainable) {
            for i in 0..p.value.data.len() {
                let g = p.grad.data[i] * scale;
                p.m.data[i] = cfg.beta1 * p.m.data[i] + (1.0 - cfg.beta1) * g;
                p.v.data[i] = cfg.beta2 * p.v.data[i] + (1.0 - cfg.beta2) * g * g;
                let m_hat = p.m.data[i] / c1;
                let v_hat = p.v.data[i] / c2;
                p.value.data[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
    }

    /// Parameter values only (moments are not persisted).
    pub fn to_checkpoint(&self, config_hash: &str) -> String {
        let file = CheckpointFile {
            format_version: CHECKPOINT_FORMAT_VERSION,
            config_hash: config_hash.to_string(),
            params: self
                .params
                .iter()
                .map(|p| CheckpointParam {
                    name: p.name.clone(),
                    shape: p.value.shape(),
                    values: p.value.data.clone(),
                })
                .collect(),
        };
        serde_json::to_string(&file).expect("checkpoint serializes")
    }

    /// Loads values into an already-initialized store with the same layout.
    /// Returns the stored config hash.
    pub fn load_checkpoint(&mut self, text: &str) -> Result<String> {
        let file: CheckpointFile =
            serde_json::from_str(text).map_err(|e| TensorError::Checkpoint(e.to_string()))?;
        if file.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(TensorError::Checkpoint(format!(
                "unsupported format_version {}",
                file.format_version
            )));
        }
        for cp in file.params {
            let i = self.index_of(&cp.name)?;
            let p = &mut self.params[i];
            if p.value.shape() != cp.shape || cp.values.len() != cp.shape.0 * cp.shape.1 {
                return Err(TensorError::Checkpoint(format!(
                    "parameter {} has shape {:?}, checkpoint says {:?}",
                    cp.name,
                    p.value.shape(),
                    cp.shape
                )));
            }
            p.value.data = cp.values;
        }
        Ok(file.config_hash)
    }
}
