//! Reverse-mode automatic differentiation over a recorded operation list.
//!
//! A [`Tape`] owns every intermediate value. Operations append a node whose
//! parents are earlier nodes, so the node list is always topologically
//! ordered and `backward` is a single reverse sweep.

use std::rc::Rc;

use super::{matmul_into, Tensor};
use crate::error::{KaaError, Result};
use crate::kan::BSplineGrid;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Pointwise nonlinearities. Kinks (relu, abs, leaky relu at 0) get subgradient 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Abs,
    Neg,
    Silu,
    Elu,
    Exp,
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu(s) => {
                if x > 0.0 {
                    x
                } else {
                    s * x
                }
            }
            Activation::Abs => x.abs(),
            Activation::Neg => -x,
            Activation::Silu => x * sigmoid(x),
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Activation::Exp => x.exp(),
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(s) => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    s
                } else {
                    0.0
                }
            }
            Activation::Abs => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Activation::Neg => -1.0,
            Activation::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    x.exp()
                }
            }
            Activation::Exp => x.exp(),
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Assignment of entries to segments (e.g. edges to destination nodes).
#[derive(Debug, Clone, PartialEq)]
pub struct Segments {
    ids: Vec<usize>,
    count: usize,
}

impl Segments {
    /// Every id in `0..count` must be referenced at least once.
    pub fn new(ids: Vec<usize>, count: usize) -> Result<Self> {
        let mut seen = vec![false; count];
        for &id in &ids {
            if id >= count {
                return Err(KaaError::Contract(format!(
                    "segment id {id} out of range for {count} segments"
                )));
            }
            seen[id] = true;
        }
        if let Some(empty) = seen.iter().position(|s| !s) {
            return Err(KaaError::Contract(format!("segment {empty} is empty")));
        }
        Ok(Self { ids, count })
    }

    /// Like [`Segments::new`] but allows segments with no entries.
    pub fn allow_empty(ids: Vec<usize>, count: usize) -> Result<Self> {
        if let Some(&bad) = ids.iter().find(|&&id| id >= count) {
            return Err(KaaError::Contract(format!(
                "segment id {bad} out of range for {count} segments"
            )));
        }
        Ok(Self { ids, count })
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.count];
        for &id in &self.ids {
            s[id] += 1;
        }
        s
    }
}

/// Sparse per-entry basis context saved by the KAN op: for each scalar input,
/// the first active basis index plus `order + 1` values and derivatives.
#[derive(Debug)]
struct SplineCache {
    start: Vec<usize>,
    values: Vec<f64>,
    derivs: Vec<f64>,
    width: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRowBias(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MulConst(Var, Rc<Vec<f64>>),
    Act(Var, Activation),
    Sum(Var),
    Mean(Var),
    SumSquares(Var),
    RowDot(Var, Var),
    CosineRows {
        a: Var,
        b: Var,
        norms_a: Vec<f64>,
        norms_b: Vec<f64>,
    },
    GatherRows(Var, Rc<Vec<usize>>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
    SliceRows(Var, usize, usize),
    SegmentSoftmax(Var, Rc<Segments>),
    SegmentWeightedSum {
        weights: Var,
        values: Var,
        segments: Rc<Segments>,
    },
    SegmentMean(Var, Rc<Segments>),
    Kan {
        x: Var,
        coef: Var,
        n_in: usize,
        n_out: usize,
        n_basis: usize,
        grid: BSplineGrid,
        cache: SplineCache,
    },
    CrossEntropy {
        logits: Var,
        rows: Rc<Vec<usize>>,
        labels: Rc<Vec<usize>>,
        probs: Vec<f64>,
    },
    BceWithLogits {
        logits: Var,
        targets: Rc<Vec<f64>>,
    },
    MeanOfScalars(Vec<Var>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Gradient of a scalar loss with respect to every tape node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of `shape` if `v` did not influence the loss.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

/// Single-owner computation record.
#[derive(Debug, Default)]
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Smallest distance from any recorded input to a point where its op is
    /// not smooth: zero for relu, leaky relu and abs, the knots and range ends
    /// for splines. Infinite when no such op was recorded.
    pub fn kink_margin(&self) -> f64 {
        let mut margin = f64::INFINITY;
        for node in &self.nodes {
            match &node.op {
                Op::Act(x, Activation::Relu | Activation::LeakyRelu(_) | Activation::Abs) => {
                    for v in self.value(*x).data() {
                        margin = margin.min(v.abs());
                    }
                }
                Op::Kan { x, grid, .. } => {
                    let h = grid.spacing();
                    for &v in self.value(*x).data() {
                        let cell = ((v - grid.range_min()) / h).round();
                        let cell = cell.clamp(0.0, grid.grid_size() as f64);
                        margin = margin.min((v - grid.range_min() - cell * h).abs());
                    }
                }
                _ => {}
            }
        }
        margin
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Records an input or parameter.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(KaaError::shape("matmul", sa, sb));
        }
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(KaaError::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// `x[m×n] + bias[n]` broadcast over rows.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let n = self.value(x).cols();
        if self.value(bias).len() != n || self.shape(x).len() != 2 {
            return Err(KaaError::shape(
                "add_row_bias",
                self.shape(x),
                self.shape(bias),
            ));
        }
        let b = self.value(bias).data().to_vec();
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(n) {
            for (o, bv) in row.iter_mut().zip(&b) {
                *o += bv;
            }
        }
        Ok(self.push(out, Op::AddRowBias(x, bias)))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v * c);
        self.push(out, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v + c);
        self.push(out, Op::AddScalar(x))
    }

    /// Elementwise product with a constant mask (used by dropout).
    pub fn mul_const(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        if mask.len() != self.value(x).len() {
            return Err(KaaError::shape("mul_const", self.shape(x), &[mask.len()]));
        }
        let mut out = self.value(x).clone();
        for (o, m) in out.data_mut().iter_mut().zip(&mask) {
            *o *= m;
        }
        Ok(self.push(out, Op::MulConst(x, Rc::new(mask))))
    }

    pub fn activation(&mut self, x: Var, act: Activation) -> Var {
        let out = self.value(x).map(|v| act.apply(v));
        self.push(out, Op::Act(x, act))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Relu)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.activation(x, Activation::LeakyRelu(slope))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Abs)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Neg)
    }

    pub fn silu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Silu)
    }

    pub fn elu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Elu)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.sum() / t.len().max(1) as f64;
        self.push(Tensor::scalar(s), Op::Mean(x))
    }

    /// `Σ x²`, i.e. `xᵀx` for a vector.
    pub fn sum_squares(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().map(|v| v * v).sum();
        self.push(Tensor::scalar(s), Op::SumSquares(x))
    }

    /// Mean of several scalar nodes.
    pub fn mean_of(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(KaaError::Contract("mean of zero scalars".into()));
        }
        let mut s = 0.0;
        for &x in xs {
            s += self.value(x).item()?;
        }
        Ok(self.push(
            Tensor::scalar(s / xs.len() as f64),
            Op::MeanOfScalars(xs.to_vec()),
        ))
    }

    /// Row-wise dot product of two `[m×n]` matrices, giving `[m]`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("row_dot", a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let m = ta.rows();
        let out: Vec<f64> = (0..m)
            .map(|i| ta.row(i).iter().zip(tb.row(i)).map(|(x, y)| x * y).sum())
            .collect();
        Ok(self.push(Tensor::vector(out), Op::RowDot(a, b)))
    }

    /// Row-wise cosine similarity of two `[m×n]` matrices, giving `[m]`.
    pub fn cosine_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("cosine_rows", a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let m = ta.rows();
        let mut norms_a = Vec::with_capacity(m);
        let mut norms_b = Vec::with_capacity(m);
        let mut out = Vec::with_capacity(m);
        for i in 0..m {
            let na = ta.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            let nb = tb.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            if na == 0.0 || nb == 0.0 {
                return Err(KaaError::Degenerate(format!("cosine of zero-norm row {i}")));
            }
            let dot: f64 = ta.row(i).iter().zip(tb.row(i)).map(|(x, y)| x * y).sum();
            norms_a.push(na);
            norms_b.push(nb);
            out.push(dot / (na * nb));
        }
        Ok(self.push(
            Tensor::vector(out),
            Op::CosineRows {
                a,
                b,
                norms_a,
                norms_b,
            },
        ))
    }

    /// Selects rows by index (repeats allowed).
    pub fn gather_rows(&mut self, x: Var, idx: Rc<Vec<usize>>) -> Result<Var> {
        let t = self.value(x);
        let (m, n) = (t.rows(), t.cols());
        if let Some(&bad) = idx.iter().find(|&&i| i >= m) {
            return Err(KaaError::Contract(format!(
                "gather index {bad} out of range for {m} rows"
            )));
        }
        let mut out = Vec::with_capacity(idx.len() * n);
        for &i in idx.iter() {
            out.extend_from_slice(t.row(i));
        }
        let out = Tensor::new(&[idx.len(), n], out)?;
        Ok(self.push(out, Op::GatherRows(x, idx)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let m = self.value(parts[0]).rows();
        for &p in parts {
            if self.value(p).rows() != m || self.shape(p).len() != 2 {
                return Err(KaaError::shape(
                    "concat_cols",
                    self.shape(parts[0]),
                    self.shape(p),
                ));
            }
        }
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        let out = Tensor::new(&[m, total], out)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(x);
        if t.rank() != 2 || start >= end || end > t.cols() {
            return Err(KaaError::shape("slice_cols", t.shape(), &[start, end]));
        }
        let m = t.rows();
        let mut out = Vec::with_capacity(m * (end - start));
        for i in 0..m {
            out.extend_from_slice(&t.row(i)[start..end]);
        }
        let out = Tensor::new(&[m, end - start], out)?;
        Ok(self.push(out, Op::SliceCols(x, start, end)))
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(x);
        if t.rank() != 2 || start >= end || end > t.rows() {
            return Err(KaaError::shape("slice_rows", t.shape(), &[start, end]));
        }
        let n = t.cols();
        let out = Tensor::new(&[end - start, n], t.data()[start * n..end * n].to_vec())?;
        Ok(self.push(out, Op::SliceRows(x, start, end)))
    }

    /// Softmax within each segment, with per-segment max subtraction.
    pub fn segment_softmax(&mut self, scores: Var, segments: Rc<Segments>) -> Result<Var> {
        let out = segment_softmax_values(self.value(scores), &segments)?;
        Ok(self.push(out, Op::SegmentSoftmax(scores, segments)))
    }

    /// `out[s] = Σ_{e in s} w[e] · values[e]`, shape `[segments × d]`.
    pub fn segment_weighted_sum(
        &mut self,
        weights: Var,
        values: Var,
        segments: Rc<Segments>,
    ) -> Result<Var> {
        let (w, v) = (self.value(weights), self.value(values));
        if w.len() != segments.len() || v.rows() != segments.len() {
            return Err(KaaError::shape(
                "segment_weighted_sum",
                w.shape(),
                v.shape(),
            ));
        }
        let d = v.cols();
        let mut out = vec![0.0; segments.count() * d];
        for (e, &s) in segments.ids().iter().enumerate() {
            let we = w.data()[e];
            let orow = &mut out[s * d..(s + 1) * d];
            for (o, x) in orow.iter_mut().zip(v.row(e)) {
                *o += we * x;
            }
        }
        let out = Tensor::new(&[segments.count(), d], out)?;
        Ok(self.push(
            out,
            Op::SegmentWeightedSum {
                weights,
                values,
                segments,
            },
        ))
    }

    /// Mean of the rows in each segment (empty segments give zero rows).
    pub fn segment_mean(&mut self, x: Var, segments: Rc<Segments>) -> Result<Var> {
        let v = self.value(x);
        if v.rows() != segments.len() {
            return Err(KaaError::shape(
                "segment_mean",
                v.shape(),
                &[segments.len()],
            ));
        }
        let d = v.cols();
        let sizes = segments.sizes();
        let mut out = vec![0.0; segments.count() * d];
        for (e, &s) in segments.ids().iter().enumerate() {
            let inv = 1.0 / sizes[s] as f64;
            for (o, x) in out[s * d..(s + 1) * d].iter_mut().zip(v.row(e)) {
                *o += inv * x;
            }
        }
        let out = Tensor::new(&[segments.count(), d], out)?;
        Ok(self.push(out, Op::SegmentMean(x, segments)))
    }

    /// Spline layer: `out[b, j] = Σ_i Σ_k B_k(x[b, i]) · coef[i, j, k]`.
    ///
    /// `coef` has shape `[n_in, n_out, n_basis]`; inputs are clamped into the
    /// grid range, and the gradient with respect to a clamped input is zero.
    pub fn kan(&mut self, x: Var, coef: Var, grid: &BSplineGrid) -> Result<Var> {
        let tx = self.value(x);
        let tc = self.value(coef);
        let n_basis = grid.num_basis();
        if tc.rank() != 3 || tc.shape()[2] != n_basis {
            return Err(KaaError::shape("kan", tc.shape(), &[0, 0, n_basis]));
        }
        let (n_in, n_out) = (tc.shape()[0], tc.shape()[1]);
        if tx.rank() != 2 || tx.cols() != n_in {
            return Err(KaaError::shape("kan", tx.shape(), tc.shape()));
        }
        let batch = tx.rows();
        let width = grid.order() + 1;
        let mut cache = SplineCache {
            start: Vec::with_capacity(batch * n_in),
            values: Vec::with_capacity(batch * n_in * width),
            derivs: Vec::with_capacity(batch * n_in * width),
            width,
        };
        let mut vals = vec![0.0; width];
        let mut ders = vec![0.0; width];
        for &xv in tx.data() {
            let start = grid.local_basis(xv, &mut vals, &mut ders);
            cache.start.push(start);
            cache.values.extend_from_slice(&vals);
            cache.derivs.extend_from_slice(&ders);
        }
        let c = tc.data();
        let mut out = vec![0.0; batch * n_out];
        for b in 0..batch {
            let orow = &mut out[b * n_out..(b + 1) * n_out];
            for i in 0..n_in {
                let slot = b * n_in + i;
                let s = cache.start[slot];
                let v = &cache.values[slot * width..(slot + 1) * width];
                for (j, o) in orow.iter_mut().enumerate() {
                    let base = (i * n_out + j) * n_basis + s;
                    let mut acc = 0.0;
                    for t in 0..width {
                        acc += v[t] * c[base + t];
                    }
                    *o += acc;
                }
            }
        }
        let out = Tensor::new(&[batch, n_out], out)?;
        Ok(self.push(
            out,
            Op::Kan {
                x,
                coef,
                n_in,
                n_out,
                n_basis,
                grid: *grid,
                cache,
            },
        ))
    }

    /// Mean softmax cross-entropy over the selected `rows` of `logits`.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        rows: Rc<Vec<usize>>,
        labels: Rc<Vec<usize>>,
    ) -> Result<Var> {
        let t = self.value(logits);
        if rows.len() != labels.len() || rows.is_empty() {
            return Err(KaaError::Contract(format!(
                "cross_entropy: {} rows vs {} labels",
                rows.len(),
                labels.len()
            )));
        }
        let c = t.cols();
        let mut probs = Vec::with_capacity(rows.len() * c);
        let mut loss = 0.0;
        for (&r, &y) in rows.iter().zip(labels.iter()) {
            if r >= t.rows() || y >= c {
                return Err(KaaError::Contract(format!(
                    "cross_entropy: row {r} / label {y} out of range"
                )));
            }
            let row = t.row(r);
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - mx).exp()).sum();
            loss += z.ln() + mx - row[y];
            probs.extend(row.iter().map(|v| (v - mx).exp() / z));
        }
        let n = rows.len() as f64;
        Ok(self.push(
            Tensor::scalar(loss / n),
            Op::CrossEntropy {
                logits,
                rows,
                labels,
                probs,
            },
        ))
    }

    /// Mean binary cross-entropy with logits.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Rc<Vec<f64>>) -> Result<Var> {
        let t = self.value(logits);
        if t.len() != targets.len() || targets.is_empty() {
            return Err(KaaError::shape(
                "bce_with_logits",
                t.shape(),
                &[targets.len()],
            ));
        }
        let mut loss = 0.0;
        for (&z, &y) in t.data().iter().zip(targets.iter()) {
            // max(z,0) - z*y + ln(1 + e^{-|z|})
            loss += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
        }
        let loss = loss / targets.len() as f64;
        Ok(self.push(Tensor::scalar(loss), Op::BceWithLogits { logits, targets }))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(KaaError::shape("backward", lv.shape(), &[1]));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::new(lv.shape(), vec![1.0])?);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                // dA = G·Bᵀ, dB = Aᵀ·G
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    for p in 0..k {
                        let mut acc = 0.0;
                        for j in 0..n {
                            acc += gd[i * n + j] * tb.data()[p * n + j];
                        }
                        da[i * k + p] = acc;
                    }
                }
                let mut db = vec![0.0; k * n];
                let at = ta.transpose()?;
                matmul_into(at.data(), gd, &mut db, k, m, n);
                accumulate(grads, *a, Tensor::new(&[m, k], da)?)?;
                accumulate(grads, *b, Tensor::new(&[k, n], db)?)?;
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone())?;
                accumulate(grads, *b, g.clone())?;
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone())?;
                accumulate(grads, *b, g.map(|v| -v))?;
            }
            Op::Mul(a, b) => {
                accumulate(grads, *a, g.zip_map(self.value(*b), |x, y| x * y)?)?;
                accumulate(grads, *b, g.zip_map(self.value(*a), |x, y| x * y)?)?;
            }
            Op::AddRowBias(x, bias) => {
                accumulate(grads, *x, g.clone())?;
                let n = self.value(*bias).len();
                let mut db = vec![0.0; n];
                for row in gd.chunks(n) {
                    for (d, v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                accumulate(grads, *bias, Tensor::new(self.shape(*bias), db)?)?;
            }
            Op::Scale(x, c) => accumulate(grads, *x, g.map(|v| v * c))?,
            Op::AddScalar(x) => accumulate(grads, *x, g.clone())?,
            Op::MulConst(x, mask) => {
                let mut d = g.clone();
                for (o, m) in d.data_mut().iter_mut().zip(mask.iter()) {
                    *o *= m;
                }
                accumulate(grads, *x, d)?;
            }
            Op::Act(x, act) => {
                let d = g.zip_map(self.value(*x), |gv, xv| gv * act.derivative(xv))?;
                accumulate(grads, *x, d)?;
            }
            Op::Sum(x) => {
                let s = self.shape(*x).to_vec();
                accumulate(grads, *x, Tensor::full(&s, gd[0]))?;
            }
            Op::Mean(x) => {
                let t = self.value(*x);
                let s = t.shape().to_vec();
                accumulate(grads, *x, Tensor::full(&s, gd[0] / t.len().max(1) as f64))?;
            }
            Op::SumSquares(x) => {
                let d = self.value(*x).map(|v| 2.0 * v * gd[0]);
                accumulate(grads, *x, d)?;
            }
            Op::MeanOfScalars(xs) => {
                let share = gd[0] / xs.len() as f64;
                for &x in xs {
                    let s = self.shape(x).to_vec();
                    accumulate(grads, x, Tensor::full(&s, share))?;
                }
            }
            Op::RowDot(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let n = ta.cols();
                let mut da = ta.clone();
                let mut db = tb.clone();
                for i in 0..ta.rows() {
                    for j in 0..n {
                        da.data_mut()[i * n + j] = gd[i] * tb.data()[i * n + j];
                        db.data_mut()[i * n + j] = gd[i] * ta.data()[i * n + j];
                    }
                }
                accumulate(grads, *a, da)?;
                accumulate(grads, *b, db)?;
            }
            Op::CosineRows {
                a,
                b,
                norms_a,
                norms_b,
            } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let n = ta.cols();
                let cos = node.value.data();
                let mut da = ta.clone();
                let mut db = tb.clone();
                for i in 0..ta.rows() {
                    let (na, nb) = (norms_a[i], norms_b[i]);
                    for j in 0..n {
                        let x = ta.data()[i * n + j];
                        let y = tb.data()[i * n + j];
                        // ∂cos/∂x = y/(|x||y|) - cos·x/|x|²
                        da.data_mut()[i * n + j] = gd[i] * (y / (na * nb) - cos[i] * x / (na * na));
                        db.data_mut()[i * n + j] = gd[i] * (x / (na * nb) - cos[i] * y / (nb * nb));
                    }
                }
                accumulate(grads, *a, da)?;
                accumulate(grads, *b, db)?;
            }
            Op::GatherRows(x, idx) => {
                let t = self.value(*x);
                let n = t.cols();
                let mut d = Tensor::zeros(t.shape());
                for (r, &i) in idx.iter().enumerate() {
                    for j in 0..n {
                        d.data_mut()[i * n + j] += gd[r * n + j];
                    }
                }
                accumulate(grads, *x, d)?;
            }
            Op::ConcatCols(parts) => {
                let total = g.cols();
                let m = g.rows();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    let mut d = Vec::with_capacity(m * w);
                    for i in 0..m {
                        d.extend_from_slice(&gd[i * total + offset..i * total + offset + w]);
                    }
                    accumulate(grads, p, Tensor::new(self.shape(p), d)?)?;
                    offset += w;
                }
            }
            Op::SliceCols(x, start, end) => {
                let t = self.value(*x);
                let n = t.cols();
                let w = end - start;
                let mut d = Tensor::zeros(t.shape());
                for i in 0..t.rows() {
                    d.data_mut()[i * n + start..i * n + end]
                        .copy_from_slice(&gd[i * w..(i + 1) * w]);
                }
                accumulate(grads, *x, d)?;
            }
            Op::SliceRows(x, start, end) => {
                let t = self.value(*x);
                let n = t.cols();
                let mut d = Tensor::zeros(t.shape());
                d.data_mut()[start * n..end * n].copy_from_slice(gd);
                accumulate(grads, *x, d)?;
            }
            Op::SegmentSoftmax(x, seg) => {
                let y = node.value.data();
                // dx_e = y_e (g_e - Σ_{e' in seg} g_e' y_e')
                let mut dots = vec![0.0; seg.count()];
                for (e, &s) in seg.ids().iter().enumerate() {
                    dots[s] += gd[e] * y[e];
                }
                let d: Vec<f64> = seg
                    .ids()
                    .iter()
                    .enumerate()
                    .map(|(e, &s)| y[e] * (gd[e] - dots[s]))
                    .collect();
                accumulate(grads, *x, Tensor::new(self.shape(*x), d)?)?;
            }
            Op::SegmentWeightedSum {
                weights,
                values,
                segments,
            } => {
                let (w, v) = (self.value(*weights), self.value(*values));
                let dcols = v.cols();
                let mut dw = vec![0.0; w.len()];
                let mut dv = vec![0.0; v.len()];
                for (e, &s) in segments.ids().iter().enumerate() {
                    let grow = &gd[s * dcols..(s + 1) * dcols];
                    let vrow = v.row(e);
                    dw[e] = grow.iter().zip(vrow).map(|(a, b)| a * b).sum();
                    let we = w.data()[e];
                    for (o, gv) in dv[e * dcols..(e + 1) * dcols].iter_mut().zip(grow) {
                        *o = we * gv;
                    }
                }
                accumulate(grads, *weights, Tensor::new(w.shape(), dw)?)?;
                accumulate(grads, *values, Tensor::new(v.shape(), dv)?)?;
            }
            Op::SegmentMean(x, segments) => {
                let t = self.value(*x);
                let d = t.cols();
                let sizes = segments.sizes();
                let mut dx = vec![0.0; t.len()];
                for (e, &s) in segments.ids().iter().enumerate() {
                    let inv = 1.0 / sizes[s] as f64;
                    for (o, gv) in dx[e * d..(e + 1) * d]
                        .iter_mut()
                        .zip(&gd[s * d..(s + 1) * d])
                    {
                        *o = inv * gv;
                    }
                }
                accumulate(grads, *x, Tensor::new(t.shape(), dx)?)?;
            }
            Op::Kan {
                x,
                coef,
                n_in,
                n_out,
                n_basis,
                cache,
                ..
            } => {
                let (n_in, n_out, n_basis) = (*n_in, *n_out, *n_basis);
                let tc = self.value(*coef);
                let c = tc.data();
                let width = cache.width;
                let batch = self.value(*x).rows();
                let mut dc = vec![0.0; c.len()];
                let mut dx = vec![0.0; batch * n_in];
                for b in 0..batch {
                    let grow = &gd[b * n_out..(b + 1) * n_out];
                    for i in 0..n_in {
                        let slot = b * n_in + i;
                        let s = cache.start[slot];
                        let v = &cache.values[slot * width..(slot + 1) * width];
                        let dv = &cache.derivs[slot * width..(slot + 1) * width];
                        let mut acc_x = 0.0;
                        for (j, &gj) in grow.iter().enumerate() {
                            if gj == 0.0 {
                                continue;
                            }
                            let base = (i * n_out + j) * n_basis + s;
                            for t in 0..width {
                                dc[base + t] += gj * v[t];
                                acc_x += gj * dv[t] * c[base + t];
                            }
                        }
                        dx[slot] = acc_x;
                    }
                }
                accumulate(grads, *coef, Tensor::new(tc.shape(), dc)?)?;
                accumulate(grads, *x, Tensor::new(self.shape(*x), dx)?)?;
            }
            Op::CrossEntropy {
                logits,
                rows,
                labels,
                probs,
            } => {
                let t = self.value(*logits);
                let c = t.cols();
                let scale = gd[0] / rows.len() as f64;
                let mut d = Tensor::zeros(t.shape());
                for (k, (&r, &y)) in rows.iter().zip(labels.iter()).enumerate() {
                    for j in 0..c {
                        let ind = if j == y { 1.0 } else { 0.0 };
                        d.data_mut()[r * c + j] += scale * (probs[k * c + j] - ind);
                    }
                }
                accumulate(grads, *logits, d)?;
            }
            Op::BceWithLogits { logits, targets } => {
                let t = self.value(*logits);
                let scale = gd[0] / targets.len() as f64;
                let d: Vec<f64> = t
                    .data()
                    .iter()
                    .zip(targets.iter())
                    .map(|(&z, &y)| scale * (sigmoid(z) - y))
                    .collect();
                accumulate(grads, *logits, Tensor::new(t.shape(), d)?)?;
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, d: Tensor) -> Result<()> {
    match &mut grads[v.0] {
        Some(existing) => {
            if existing.shape() != d.shape() {
                return Err(KaaError::shape("accumulate", existing.shape(), d.shape()));
            }
            for (e, x) in existing.data_mut().iter_mut().zip(d.data()) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(d),
    }
    Ok(())
}

/// Numerically stable per-segment softmax on a plain tensor.
pub fn segment_softmax_values(scores: &Tensor, segments: &Segments) -> Result<Tensor> {
    if scores.len() != segments.len() {
        return Err(KaaError::shape(
            "segment_softmax",
            scores.shape(),
            &[segments.len()],
        ));
    }
    let mut mx = vec![f64::NEG_INFINITY; segments.count()];
    for (&s, &v) in segments.ids().iter().zip(scores.data()) {
        if v > mx[s] {
            mx[s] = v;
        }
    }
    let mut ex: Vec<f64> = segments
        .ids()
        .iter()
        .zip(scores.data())
        .map(|(&s, &v)| (v - mx[s]).exp())
        .collect();
    let mut den = vec![0.0; segments.count()];
    for (&s, &e) in segments.ids().iter().zip(&ex) {
        den[s] += e;
    }
    for (e, &s) in ex.iter_mut().zip(segments.ids()) {
        *e /= den[s];
    }
    Tensor::new(scores.shape(), ex)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn leaky_relu_negative() {
        assert!(close(Activation::LeakyRelu(0.2).apply(-1.0), -0.2, 1e-15));
    }

    #[test]
    fn abs_values_and_kink_subgradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![-2.0, 0.0, 3.0]));
        let y = tape.abs(x);
        assert_eq!(tape.value(y).data(), &[2.0, 0.0, 3.0]);
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[-1.0, 0.0, 1.0]);
    }

    #[test]
    fn cosine_with_itself_is_one() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::from_rows(&[vec![0.3, -1.2, 4.0]]).unwrap());
        let c = tape.cosine_rows(a, a).unwrap();
        assert!(close(tape.value(c).data()[0], 1.0, 1e-15));
    }

    #[test]
    fn cosine_zero_row_is_degenerate() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap());
        let b = tape.leaf(Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap());
        assert!(matches!(
            tape.cosine_rows(a, b),
            Err(KaaError::Degenerate(_))
        ));
    }

    #[test]
    fn softmax_examples() {
        let seg = Segments::new(vec![0, 0], 1).unwrap();
        let y = segment_softmax_values(&Tensor::vector(vec![0.0, 0.0]), &seg).unwrap();
        assert_eq!(y.data(), &[0.5, 0.5]);
        let y = segment_softmax_values(&Tensor::vector(vec![2f64.ln(), 0.0]), &seg).unwrap();
        assert!(close(y.data()[0], 2.0 / 3.0, 1e-15));
        assert!(close(y.data()[1], 1.0 / 3.0, 1e-15));
        let seg3 = Segments::new(vec![0, 0, 0], 1).unwrap();
        let y = segment_softmax_values(&Tensor::vector(vec![1000.0; 3]), &seg3).unwrap();
        for v in y.data() {
            assert!(close(*v, 1.0 / 3.0, 1e-15));
        }
    }

    #[test]
    fn empty_segment_is_contract_violation() {
        assert!(matches!(
            Segments::new(vec![0, 2], 3),
            Err(KaaError::Contract(_))
        ));
        assert!(Segments::new(vec![0, 5], 3).is_err());
    }

    #[test]
    fn backward_sum_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(&[2, 3], vec![0.5; 6]).unwrap());
        let s = tape.sum(x);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &Tensor::ones(&[2, 3]));
        assert_eq!(g.get(s).unwrap().data(), &[1.0]);
    }

    #[test]
    fn backward_xtx() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let l = tape.sum_squares(x);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(KaaError::Shape { .. })));
    }

    #[test]
    fn backward_is_deterministic() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::new(&[2, 2], vec![0.1, -0.4, 2.0, 0.7]).unwrap());
        let b = tape.leaf(Tensor::new(&[2, 2], vec![1.1, 0.3, -0.5, 0.2]).unwrap());
        let c = tape.matmul(a, b).unwrap();
        let c = tape.silu(c);
        let l = tape.sum(c);
        let g1 = tape.backward(l).unwrap();
        let g2 = tape.backward(l).unwrap();
        assert_eq!(g1.get(a), g2.get(a));
        assert_eq!(g1.get(b), g2.get(b));
    }

    #[test]
    fn unused_leaf_has_no_gradient() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::scalar(1.0));
        let b = tape.leaf(Tensor::scalar(2.0));
        let l = tape.sum(b);
        let g = tape.backward(l).unwrap();
        assert!(g.get(a).is_none());
        assert_eq!(g.get_or_zeros(a, &[1]).data(), &[0.0]);
    }
}
