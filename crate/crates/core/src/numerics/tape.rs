//! Reverse-mode differentiation over a linear tape of rank-2 primitives.
//!
//! A [`Tape`] records every value produced during a forward pass. Leaves are
//! either trainable (`requires_grad`) or constant; an op requires a gradient
//! iff any of its inputs does, so frozen sub-graphs never allocate gradient
//! buffers. One tape serves exactly one forward/backward pass.

use std::f32::consts::PI;

use super::tensor::{self, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Variance floor for layer normalization; rows below it normalize to zero.
pub const LAYER_NORM_VAR_FLOOR: f32 = 1e-5;
const NORM_FLOOR: f32 = 1e-12;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    AddScalar(Var),
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<f32>,
        rstd: Vec<f32>,
        floored: Vec<bool>,
    },
    Gelu(Var),
    MeanRows(Var),
    SegmentMax {
        x: Var,
        argmax: Vec<usize>,
    },
    L2Normalize {
        x: Var,
        norms: Vec<f32>,
    },
    ConcatRows(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    Log(Var),
    Exp(Var),
    ClampMin(Var, f32),
    Gather(Var, Vec<usize>),
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar with respect to every `requires_grad` leaf.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }

    pub fn len(&self) -> usize {
        self.grads.iter().filter(|g| g.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        lhs: a.dims().to_vec(),
        rhs: b.dims().to_vec(),
    }
}

fn gelu_parts(x: f32) -> (f32, f32) {
    let c = (2.0 / PI).sqrt();
    let inner = c * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    let y = 0.5 * x * (1.0 + t);
    let dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * 0.044715 * x * x);
    (y, dy)
}

fn softmax_row(row: &[f32], out: &mut [f32]) {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f32;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// First element of a value; convenient for scalar losses.
    pub fn scalar(&self, v: Var) -> f32 {
        self.nodes[v.0].value.data()[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn push(
        &mut self,
        op_name: &'static str,
        value: Tensor,
        op: Op,
        inputs: &[Var],
    ) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn mat(rows: usize, cols: usize, data: Vec<f32>) -> Tensor {
        Tensor::matrix(rows, cols, data).expect("kernel produced consistent buffer")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (n, k, m) = (ta.rows(), ta.cols(), tb.cols());
        if tb.rows() != k {
            return Err(shape_err("matmul", ta, tb));
        }
        let out = Self::mat(n, m, tensor::matmul(ta.data(), tb.data(), n, k, m));
        self.push("matmul", out, Op::MatMul(a, b), &[a, b])
    }

    /// `a * b^T` without materializing the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (n, k, m) = (ta.rows(), ta.cols(), tb.rows());
        if tb.cols() != k {
            return Err(shape_err("matmul_nt", ta, tb));
        }
        let out = Self::mat(n, m, tensor::matmul_nt(ta.data(), tb.data(), n, k, m));
        self.push("matmul_nt", out, Op::MatMulNt(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = (t.rows(), t.cols());
        let out = Self::mat(c, r, tensor::transpose(t.data(), r, c));
        self.push("transpose", out, Op::Transpose(a), &[a])
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rows() != tb.rows() || ta.cols() != tb.cols() {
            return Err(shape_err(op, ta, tb));
        }
        Ok(())
    }

    fn map2(&mut self, a: Var, b: Var, f: impl Fn(f32, f32) -> f32) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Self::mat(ta.rows(), ta.cols(), data)
    }

    fn map1(&self, a: Var, f: impl Fn(f32) -> f32) -> Tensor {
        let t = self.value(a);
        Self::mat(t.rows(), t.cols(), t.data().iter().map(|&x| f(x)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.map2(a, b, |x, y| x + y);
        self.push("add", out, Op::Add(a, b), &[a, b])
    }

    /// Adds a `1 x c` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (tx, tr) = (self.value(x), self.value(row));
        if tr.rows() != 1 || tr.cols() != tx.cols() {
            return Err(shape_err("add_row", tx, tr));
        }
        let c = tx.cols();
        let data = tx
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + tr.data()[i % c])
            .collect();
        let out = Self::mat(tx.rows(), c, data);
        self.push("add_row", out, Op::AddRow(x, row), &[x, row])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.map2(a, b, |x, y| x * y);
        self.push("mul", out, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, s: f32) -> Result<Var> {
        let out = self.map1(a, |x| x * s);
        self.push("scale", out, Op::Scale(a, s), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, s: f32) -> Result<Var> {
        let out = self.map1(a, |x| x + s);
        self.push("add_scalar", out, Op::AddScalar(a), &[a])
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let c = t.cols();
        let mut data = vec![0.0; t.numel()];
        for (row, out) in t.data().chunks(c).zip(data.chunks_mut(c)) {
            softmax_row(row, out);
        }
        let out = Self::mat(t.rows(), c, data);
        self.push("softmax_rows", out, Op::Softmax(a), &[a])
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let c = t.cols();
        let mut data = vec![0.0; t.numel()];
        for (row, out) in t.data().chunks(c).zip(data.chunks_mut(c)) {
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f32>().ln();
            for (o, &v) in out.iter_mut().zip(row) {
                *o = v - lse;
            }
        }
        let out = Self::mat(t.rows(), c, data);
        self.push("log_softmax_rows", out, Op::LogSoftmax(a), &[a])
    }

    /// Row-wise layer normalization followed by the affine `gamma`, `beta`
    /// (both `1 x c`). Variance is floored at [`LAYER_NORM_VAR_FLOOR`].
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x), self.value(gamma), self.value(beta));
        let c = tx.cols();
        if tg.numel() != c {
            return Err(shape_err("layer_norm", tx, tg));
        }
        if tb.numel() != c {
            return Err(shape_err("layer_norm", tx, tb));
        }
        let rows = tx.rows();
        let mut data = vec![0.0; tx.numel()];
        let mut means = Vec::with_capacity(rows);
        let mut rstds = Vec::with_capacity(rows);
        let mut floored = Vec::with_capacity(rows);
        for (row, out) in tx.data().chunks(c).zip(data.chunks_mut(c)) {
            let mean = row.iter().sum::<f32>() / c as f32;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / c as f32;
            let is_floored = var < LAYER_NORM_VAR_FLOOR;
            let rstd = 1.0 / var.max(LAYER_NORM_VAR_FLOOR).sqrt();
            for j in 0..c {
                out[j] = (row[j] - mean) * rstd * tg.data()[j] + tb.data()[j];
            }
            means.push(mean);
            rstds.push(rstd);
            floored.push(is_floored);
        }
        let out = Self::mat(rows, c, data);
        let op = Op::LayerNorm {
            x,
            gamma,
            beta,
            mean: means,
            rstd: rstds,
            floored,
        };
        self.push("layer_norm", out, op, &[x, gamma, beta])
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let out = self.map1(a, |x| gelu_parts(x).0);
        self.push("gelu", out, Op::Gelu(a), &[a])
    }

    /// Mean over rows: `r x c -> 1 x c`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = (t.rows(), t.cols());
        let mut data = vec![0.0f32; c];
        for row in t.data().chunks(c) {
            for (o, &v) in data.iter_mut().zip(row) {
                *o += v;
            }
        }
        data.iter_mut().for_each(|v| *v /= r as f32);
        let out = Self::mat(1, c, data);
        self.push("mean_rows", out, Op::MeanRows(a), &[a])
    }

    /// Column-wise max over consecutive row segments of length `segment`:
    /// `(g * segment) x c -> g x c`. Ties resolve to the earliest row.
    pub fn segment_max(&mut self, a: Var, segment: usize) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = (t.rows(), t.cols());
        if segment == 0 || r % segment != 0 {
            return Err(Error::Shape {
                op: "segment_max",
                lhs: t.dims().to_vec(),
                rhs: vec![segment],
            });
        }
        let g = r / segment;
        let mut data = vec![f32::NEG_INFINITY; g * c];
        let mut argmax = vec![0usize; g * c];
        for gi in 0..g {
            for s in 0..segment {
                let src = gi * segment + s;
                let row = t.row(src);
                for j in 0..c {
                    if row[j] > data[gi * c + j] {
                        data[gi * c + j] = row[j];
                        argmax[gi * c + j] = src;
                    }
                }
            }
        }
        let out = Self::mat(g, c, data);
        self.push("segment_max", out, Op::SegmentMax { x: a, argmax }, &[a])
    }

    /// Scales each row to unit Euclidean norm; all-zero rows stay zero.
    pub fn l2_normalize_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let c = t.cols();
        let mut data = vec![0.0; t.numel()];
        let mut norms = Vec::with_capacity(t.rows());
        for (row, out) in t.data().chunks(c).zip(data.chunks_mut(c)) {
            let norm = row.iter().map(|v| v * v).sum::<f32>().sqrt();
            if norm > NORM_FLOOR {
                for (o, &v) in out.iter_mut().zip(row) {
                    *o = v / norm;
                }
            }
            norms.push(norm);
        }
        let out = Self::mat(t.rows(), c, data);
        self.push(
            "l2_normalize_rows",
            out,
            Op::L2Normalize { x: a, norms },
            &[a],
        )
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat_rows of nothing".into()))?;
        let c = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != c {
                return Err(shape_err("concat_rows", self.value(*first), t));
            }
            data.extend_from_slice(t.data());
            rows += t.rows();
        }
        let out = Self::mat(rows, c, data);
        self.push("concat_rows", out, Op::ConcatRows(parts.to_vec()), parts)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        if len == 0 || start + len > t.rows() {
            return Err(Error::Shape {
                op: "slice_rows",
                lhs: t.dims().to_vec(),
                rhs: vec![start, len],
            });
        }
        let c = t.cols();
        let out = Self::mat(len, c, t.data()[start * c..(start + len) * c].to_vec());
        self.push("slice_rows", out, Op::SliceRows { x: a, start }, &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat_cols of nothing".into()))?;
        let r = self.value(*first).rows();
        for &p in parts {
            if self.value(p).rows() != r {
                return Err(shape_err("concat_cols", self.value(*first), self.value(p)));
            }
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let out = Self::mat(r, total, data);
        self.push("concat_cols", out, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        if len == 0 || start + len > t.cols() {
            return Err(Error::Shape {
                op: "slice_cols",
                lhs: t.dims().to_vec(),
                rhs: vec![start, len],
            });
        }
        let mut data = Vec::with_capacity(t.rows() * len);
        for i in 0..t.rows() {
            data.extend_from_slice(&t.row(i)[start..start + len]);
        }
        let out = Self::mat(t.rows(), len, data);
        self.push("slice_cols", out, Op::SliceCols { x: a, start }, &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let out = self.map1(a, f32::ln);
        self.push("log", out, Op::Log(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let out = self.map1(a, f32::exp);
        self.push("exp", out, Op::Exp(a), &[a])
    }

    pub fn clamp_min(&mut self, a: Var, floor: f32) -> Result<Var> {
        let out = self.map1(a, |x| x.max(floor));
        self.push("clamp_min", out, Op::ClampMin(a, floor), &[a])
    }

    /// Picks flat element indices into a `1 x k` row.
    pub fn gather(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if indices.is_empty() || indices.iter().any(|&i| i >= t.numel()) {
            return Err(Error::Shape {
                op: "gather",
                lhs: t.dims().to_vec(),
                rhs: indices.to_vec(),
            });
        }
        let data = indices.iter().map(|&i| t.data()[i]).collect();
        let out = Self::mat(1, indices.len(), data);
        self.push("gather", out, Op::Gather(a, indices.to_vec()), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(a), &[a])
    }

    /// Gradients of the scalar `output` with respect to every trainable leaf.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = &self.nodes[output.0].value;
        if out.numel() != 1 {
            return Err(Error::NonScalar(out.dims().to_vec()));
        }
        self.backward_with(output, &Tensor::scalar(1.0))
    }

    /// Vector-Jacobian product: pulls `seed` (shaped like `output`) back to
    /// every trainable leaf. Lets a loss computed on another tape be chained
    /// into this one.
    pub fn backward_with(&self, output: Var, seed: &Tensor) -> Result<Gradients> {
        let out = &self.nodes[output.0].value;
        if out.numel() != seed.numel() || out.cols() != seed.cols() {
            return Err(Error::Shape {
                op: "backward_with",
                lhs: out.dims().to_vec(),
                rhs: seed.dims().to_vec(),
            });
        }
        let n = output.0 + 1;
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; n];
        let mut leaves: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        if self.nodes[output.0].requires_grad {
            grads[output.0] = Some(seed.data().to_vec());
        }

        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let rows = node.value.rows();
            let cols = node.value.cols();
            match &node.op {
                Op::Leaf => {
                    leaves[i] = Some(
                        Tensor::new(node.value.dims().to_vec(), g)
                            .expect("gradient shaped like its leaf"),
                    );
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let k = ta.cols();
                    if self.requires_grad(*a) {
                        let ga = tensor::matmul_nt(&g, tb.data(), rows, cols, k);
                        self.accumulate(&mut grads, *a, ga);
                    }
                    if self.requires_grad(*b) {
                        let gb = tensor::matmul_tn(ta.data(), &g, rows, k, cols);
                        self.accumulate(&mut grads, *b, gb);
                    }
                }
                Op::MatMulNt(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let k = ta.cols();
                    if self.requires_grad(*a) {
                        let ga = tensor::matmul(&g, tb.data(), rows, cols, k);
                        self.accumulate(&mut grads, *a, ga);
                    }
                    if self.requires_grad(*b) {
                        let gb = tensor::matmul_tn(&g, ta.data(), rows, cols, k);
                        self.accumulate(&mut grads, *b, gb);
                    }
                }
                Op::Transpose(a) => {
                    self.accumulate(&mut grads, *a, tensor::transpose(&g, rows, cols));
                }
                Op::Add(a, b) => {
                    if self.requires_grad(*b) {
                        self.accumulate(&mut grads, *b, g.clone());
                    }
                    self.accumulate(&mut grads, *a, g);
                }
                Op::AddRow(x, row) => {
                    if self.requires_grad(*row) {
                        let mut gr = vec![0.0f32; cols];
                        for chunk in g.chunks(cols) {
                            for (o, &v) in gr.iter_mut().zip(chunk) {
                                *o += v;
                            }
                        }
                        self.accumulate(&mut grads, *row, gr);
                    }
                    self.accumulate(&mut grads, *x, g);
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    if self.requires_grad(*a) {
                        let ga = g.iter().zip(tb.data()).map(|(x, y)| x * y).collect();
                        self.accumulate(&mut grads, *a, ga);
                    }
                    if self.requires_grad(*b) {
                        let gb = g.iter().zip(ta.data()).map(|(x, y)| x * y).collect();
                        self.accumulate(&mut grads, *b, gb);
                    }
                }
                Op::Scale(a, s) => {
                    self.accumulate(&mut grads, *a, g.iter().map(|v| v * s).collect());
                }
                Op::AddScalar(a) => self.accumulate(&mut grads, *a, g),
                Op::Softmax(a) => {
                    let y = node.value.data();
                    let mut gx = vec![0.0; g.len()];
                    for ((gr, yr), out) in
                        g.chunks(cols).zip(y.chunks(cols)).zip(gx.chunks_mut(cols))
                    {
                        let inner: f32 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for j in 0..cols {
                            out[j] = yr[j] * (gr[j] - inner);
                        }
                    }
                    self.accumulate(&mut grads, *a, gx);
                }
                Op::LogSoftmax(a) => {
                    let y = node.value.data();
                    let mut gx = vec![0.0; g.len()];
                    for ((gr, yr), out) in
                        g.chunks(cols).zip(y.chunks(cols)).zip(gx.chunks_mut(cols))
                    {
                        let total: f32 = gr.iter().sum();
                        for j in 0..cols {
                            out[j] = gr[j] - yr[j].exp() * total;
                        }
                    }
                    self.accumulate(&mut grads, *a, gx);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    mean,
                    rstd,
                    floored,
                } => {
                    let tx = self.value(*x);
                    let tg = self.value(*gamma).data();
                    let mut ggamma = vec![0.0f32; cols];
                    let mut gbeta = vec![0.0f32; cols];
                    let mut gx = vec![0.0f32; g.len()];
                    let mut xhat = vec![0.0f32; cols];
                    let mut dxhat = vec![0.0f32; cols];
                    for r in 0..rows {
                        let xr = tx.row(r);
                        let gr = &g[r * cols..(r + 1) * cols];
                        for j in 0..cols {
                            xhat[j] = (xr[j] - mean[r]) * rstd[r];
                            ggamma[j] += gr[j] * xhat[j];
                            gbeta[j] += gr[j];
                            dxhat[j] = gr[j] * tg[j];
                        }
                        let mean_d: f32 = dxhat.iter().sum::<f32>() / cols as f32;
                        let mean_dx: f32 = if floored[r] {
                            0.0
                        } else {
                            dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f32>() / cols as f32
                        };
                        let out = &mut gx[r * cols..(r + 1) * cols];
                        for j in 0..cols {
                            out[j] = rstd[r] * (dxhat[j] - mean_d - xhat[j] * mean_dx);
                        }
                    }
                    if self.requires_grad(*gamma) {
                        self.accumulate(&mut grads, *gamma, ggamma);
                    }
                    if self.requires_grad(*beta) {
                        self.accumulate(&mut grads, *beta, gbeta);
                    }
                    if self.requires_grad(*x) {
                        self.accumulate(&mut grads, *x, gx);
                    }
                }
                Op::Gelu(a) => {
                    let tx = self.value(*a).data();
                    let gx = g
                        .iter()
                        .zip(tx)
                        .map(|(gv, &xv)| gv * gelu_parts(xv).1)
                        .collect();
                    self.accumulate(&mut grads, *a, gx);
                }
                Op::MeanRows(a) => {
                    let r = self.value(*a).rows();
                    let mut gx = Vec::with_capacity(r * cols);
                    for _ in 0..r {
                        gx.extend(g.iter().map(|v| v / r as f32));
                    }
                    self.accumulate(&mut grads, *a, gx);
                }
                Op::SegmentMax { x, argmax } => {
                    let mut gx = vec![0.0f32; self.value(*x).numel()];
                    for (idx, &src) in argmax.iter().enumerate() {
                        gx[src * cols + idx % cols] += g[idx];
                    }
                    self.accumulate(&mut grads, *x, gx);
                }
                Op::L2Normalize { x, norms } => {
                    let y = node.value.data();
                    let mut gx = vec![0.0f32; g.len()];
                    for r in 0..rows {
                        if norms[r] <= NORM_FLOOR {
                            continue;
                        }
                        let gr = &g[r * cols..(r + 1) * cols];
                        let yr = &y[r * cols..(r + 1) * cols];
                        let inner: f32 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for j in 0..cols {
                            gx[r * cols + j] = (gr[j] - yr[j] * inner) / norms[r];
                        }
                    }
                    self.accumulate(&mut grads, *x, gx);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.value(p).numel();
                        if self.requires_grad(p) {
                            self.accumulate(&mut grads, p, g[offset..offset + len].to_vec());
                        }
                        offset += len;
                    }
                }
                Op::SliceRows { x, start } => {
                    let mut gx = vec![0.0f32; self.value(*x).numel()];
                    gx[start * cols..start * cols + g.len()].copy_from_slice(&g);
                    self.accumulate(&mut grads, *x, gx);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let pc = self.value(p).cols();
                        if self.requires_grad(p) {
                            let mut gp = Vec::with_capacity(rows * pc);
                            for r in 0..rows {
                                gp.extend_from_slice(&g[r * cols + offset..r * cols + offset + pc]);
                            }
                            self.accumulate(&mut grads, p, gp);
                        }
                        offset += pc;
                    }
                }
                Op::SliceCols { x, start } => {
                    let xc = self.value(*x).cols();
                    let mut gx = vec![0.0f32; self.value(*x).numel()];
                    for r in 0..rows {
                        gx[r * xc + start..r * xc + start + cols]
                            .copy_from_slice(&g[r * cols..(r + 1) * cols]);
                    }
                    self.accumulate(&mut grads, *x, gx);
                }
                Op::Log(a) => {
                    let tx = self.value(*a).data();
                    self.accumulate(
                        &mut grads,
                        *a,
                        g.iter().zip(tx).map(|(gv, xv)| gv / xv).collect(),
                    );
                }
                Op::Exp(a) => {
                    let y = node.value.data();
                    self.accumulate(
                        &mut grads,
                        *a,
                        g.iter().zip(y).map(|(gv, yv)| gv * yv).collect(),
                    );
                }
                Op::ClampMin(a, floor) => {
                    let tx = self.value(*a).data();
                    let gx = g
                        .iter()
                        .zip(tx)
                        .map(|(&gv, &xv)| if xv > *floor { gv } else { 0.0 })
                        .collect();
                    self.accumulate(&mut grads, *a, gx);
                }
                Op::Gather(a, indices) => {
                    let mut gx = vec![0.0f32; self.value(*a).numel()];
                    for (&idx, &gv) in indices.iter().zip(&g) {
                        gx[idx] += gv;
                    }
                    self.accumulate(&mut grads, *a, gx);
                }
                Op::Sum(a) => {
                    let len = self.value(*a).numel();
                    self.accumulate(&mut grads, *a, vec![g[0]; len]);
                }
            }
        }
        Ok(Gradients { grads: leaves })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f32>>], v: Var, contribution: Vec<f32>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => {
                for (e, c) in existing.iter_mut().zip(&contribution) {
                    *e += c;
                }
            }
            slot @ None => *slot = Some(contribution),
        }
    }
}
