//! Differentiable primitives recorded on a [`Tape`].

use std::sync::Arc;

use crate::error::{Error, Result};

use super::kernels::{self, matmul, matmul_nt, matmul_tn};
use super::tape::{Backward, Tape, Var};
use super::{CsrMatrix, Tensor};

/// A constant sparse operand together with its transpose (used by backward).
#[derive(Debug, Clone)]
pub struct SparseOperand {
    pub matrix: CsrMatrix,
    pub transpose: CsrMatrix,
}

impl SparseOperand {
    pub fn new(matrix: CsrMatrix) -> Arc<Self> {
        let transpose = matrix.transpose();
        Arc::new(Self { matrix, transpose })
    }

    /// For symmetric matrices the transpose is the matrix itself.
    pub fn symmetric(matrix: CsrMatrix) -> Arc<Self> {
        debug_assert!(matrix.is_symmetric());
        Arc::new(Self {
            transpose: matrix.clone(),
            matrix,
        })
    }
}

fn rows_cols(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    t.dims2().map_err(|_| Error::shape(op, format!("expected a matrix, got {:?}", t.shape())))
}

fn elementwise<F: Fn(f32) -> f32>(t: &Tensor, f: F) -> Tensor {
    Tensor::from_parts(t.shape().to_vec(), t.data().iter().map(|&x| f(x)).collect())
}

struct MatMul {
    m: usize,
    k: usize,
    n: usize,
}

impl Backward for MatMul {
    fn name(&self) -> &'static str {
        "matmul"
    }
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f32], needs: &[bool]) -> Vec<Option<Vec<f32>>> {
        let (a, b) = (inputs[0].data(), inputs[1].data());
        let da = needs[0].then(|| matmul_nt(g, b, self.m, self.n, self.k));
        let db = needs[1].then(|| matmul_tn(a, g, self.m, self.k, self.n));
        vec![da, db]
    }
}

struct MatMulNt {
    m: usize,
    k: usize,
    n: usize,
}

impl Backward for MatMulNt {
    fn name(&self) -> &'static str {
        "matmul_nt"
    }
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f32], needs: &[bool]) -> Vec<Option<Vec<f32>>> {
        // c = a · bᵀ ; da = g · b ; db = gᵀ · a
        let (a, b) = (inputs[0].data(), inputs[1].data());
        let da = needs[0].then(|| matmul(g, b, self.m, self.n, self.k));
        let db = needs[1].then(|| matmul_tn(g, a, self.m, self.n, self.k));
        vec![da, db]
    }
}

struct Spmm {
    a: Arc<SparseOperand>,
    n: usize,
}

impl Backward for Spmm {
    fn name(&self) -> &'static str {
        "spmm"
    }
    fn backward(&self, _: &[&Tensor], _: &Tensor, g: &[f32], needs: &[bool]) -> Vec<Option<Vec<f32>>> {
        vec![needs[0].then(|| kernels::spmm(&self.a.transpose, g, self.n))]
    }
}

struct Add;

impl Backward for Add {
    fn name(&self) -> &'static str {
        "add"
    }
    fn backward(&self, _: &[&Tensor], _: &Tensor, g: &[f32], needs: &[bool]) -> Vec<Option<Vec<f32>>> {
        vec![needs[0].then(|| g.to_vec()), needs[1].then(|| g.to_vec())]
    }
}

struct Mul;

impl Backward for Mul {
    fn name(&self) -> &'static str {
        "mul"
    }
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f32], needs: &[bool]) -> Vec<Option<Vec<f32>>> {
        let (a, b) = (inputs[0].data(), inputs[1].data());
        let da = needs[0].then(|| g.iter().zip(b).map(|(g, b)| g * b).collect());
        let db = needs[1].then(|| g.iter().zip(a).map(|(g, a)| g * a).collect());
        vec![da, db]
    }
}

struct Scale(f32);

impl Backward for Scale {
    fn name(&self) -> &'static str {
        "scale"
    }
    fn backward(&self, _: &[&Tensor], _: &Tensor, g: &[f32], _: &[bool]) -> Vec<Option<Vec<f32>>> {
        vec![Some(g.iter().map(|v| v * self.0).collect())]
    }
}

struct ScaleByScalar;

impl Backward for ScaleByScalar {
    fn name(&self) -> &'static str {
        "scale_by"
    }
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f32], needs: &[bool]) -> Vec<Option<Vec<f32>>> {
        let (a, s) = (inputs[0].data(), inputs[1].data()[0]);
        let da = needs[0].then(|| g.iter().map(|v| v * s).collect());
        let ds = needs[1].then(|| vec![kernels::dot(g, a)]);
        vec![da, ds]
    }
}

struct AddBias {
    rows: usize,
    cols: usize,
}

impl Backward for AddBias {
    fn name(&self) -> &'static str {
        "add_bias"
    }
    fn backward(&self, _: &[&Tensor], _: &Tensor, g: &[f32], needs: &[bool]) -> Vec<Option<Vec<f32>>> {
        vec![
            needs[0].then(|| g.to_vec()),
            needs[1].then(|| kernels::sum_rows(g, self.rows, self.cols)),
        ]
    }
}

struct MulConst(Arc<Vec<f32>>);

impl Backward for MulConst {
    fn name(&self) -> &'static str {
        "mul_const"
    }
    fn backward(&self, _: &[&Tensor], _: &Tensor, g: &[f32], _: &[bool]) -> Vec<Option<Vec<f32>>> {
        vec![Some(g.iter().zip(self.0.iter()).map(|(g, m)| g * m).collect())]
    }
}

/// Elementwise op whose derivative is computed from (input, output).
struct Pointwise {
    name: &'static str,
    deriv: fn(f32, f32, f32) -> f32,
    param: f32,
}

impl Backward for Pointwise {
    fn name(&self) -> &'static str {
        self.name
    }
    fn backward(&self, inputs: &[&Tensor], out: &Tensor, g: &[f32], _: &[bool]) -> Vec<Option<Vec<f32>>> {
        let x = inputs[0].data();
        let y = out.data();
        vec![Some(
            (0..g.len())
                .map(|i| g[i] * (self.deriv)(x[i], y[i], self.param))
                .collect(),
        )]
    }
}

struct SumAll;

impl Backward for SumAll {
    fn name(&self) -> &'static str {
        "sum"
    }
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f32], _: &[bool]) -> Vec<Option<Vec<f32>>> {
        vec![Some(vec![g[0]; inputs[0].len()])]
    }
}

struct SoftmaxRows {
    cols: usize,
}

impl Backward for SoftmaxRows {
    fn name(&self) -> &'static str {
        "softmax_rows"
    }
    fn backward(&self, _: &[&Tensor], out: &Tensor, g: &[f32], _: &[bool]) -> Vec<Option<Vec<f32>>> {
        let y = out.data();
        let mut dx = vec![0f32; y.len()];
        for ((dxr, yr), gr) in dx
            .chunks_mut(self.cols)
            .zip(y.chunks(self.cols))
            .zip(g.chunks(self.cols))
        {
            let s = kernels::dot(yr, gr);
            for j in 0..self.cols {
                dxr[j] = yr[j] * (gr[j] - s);
            }
        }
        vec![Some(dx)]
    }
}

struct LogSoftmaxRows {
    cols: usize,
}

impl Backward for LogSoftmaxRows {
    fn name(&self) -> &'static str {
        "log_softmax_rows"
    }
    fn backward(&self, _: &[&Tensor], out: &Tensor, g: &[f32], _: &[bool]) -> Vec<Option<Vec<f32>>> {
        let y = out.data();
        let mut dx = vec![0f32; y.len()];
        for ((dxr, yr), gr) in dx
            .chunks_mut(self.cols)
            .zip(y.chunks(self.cols))
            .zip(g.chunks(self.cols))
        {
            let s: f32 = gr.iter().sum();
            for j in 0..self.cols {
                dxr[j] = gr[j] - yr[j].exp() * s;
            }
        }
        vec![Some(dx)]
    }
}

struct SelectRows {
    idx: Vec<usize>,
    rows: usize,
    cols: usize,
}

impl Backward for SelectRows {
    fn name(&self) -> &'static str {
        "select_rows"
    }
    fn backward(&self, _: &[&Tensor], _: &Tensor, g: &[f32], _: &[bool]) -> Vec<Option<Vec<f32>>> {
        let mut dx = vec![0f32; self.rows * self.cols];
        for (k, &i) in self.idx.iter().enumerate() {
            kernels::add_assign(
                &mut dx[i * self.cols..(i + 1) * self.cols],
                &g[k * self.cols..(k + 1) * self.cols],
            );
        }
        vec![Some(dx)]
    }
}

struct CrossEntropy {
    idx: Vec<usize>,
    labels: Vec<usize>,
    cols: usize,
    probs: Vec<f32>,
}

impl Backward for CrossEntropy {
    fn name(&self) -> &'static str {
        "cross_entropy"
    }
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f32], _: &[bool]) -> Vec<Option<Vec<f32>>> {
        let mut dx = vec![0f32; inputs[0].len()];
        let scale = g[0] / self.idx.len() as f32;
        for (k, (&i, &y)) in self.idx.iter().zip(&self.labels).enumerate() {
            let p = &self.probs[k * self.cols..(k + 1) * self.cols];
            let row = &mut dx[i * self.cols..(i + 1) * self.cols];
            for j in 0..self.cols {
                row[j] += scale * (p[j] - if j == y { 1.0 } else { 0.0 });
            }
        }
        vec![Some(dx)]
    }
}

struct MeanHeads {
    heads: usize,
    width: usize,
}

impl Backward for MeanHeads {
    fn name(&self) -> &'static str {
        "mean_heads"
    }
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f32], _: &[bool]) -> Vec<Option<Vec<f32>>> {
        let rows = inputs[0].len() / (self.heads * self.width);
        let mut dx = vec![0f32; inputs[0].len()];
        let inv = 1.0 / self.heads as f32;
        for r in 0..rows {
            for h in 0..self.heads {
                for j in 0..self.width {
                    dx[(r * self.heads + h) * self.width + j] = g[r * self.width + j] * inv;
                }
            }
        }
        vec![Some(dx)]
    }
}

/// Numerically stable row softmax on raw data.
pub fn softmax_rows_data(data: &[f32], cols: usize) -> Vec<f32> {
    let mut out = vec![0f32; data.len()];
    for (o, row) in out.chunks_mut(cols).zip(data.chunks(cols)) {
        let m = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut s = 0f32;
        for (oj, &x) in o.iter_mut().zip(row) {
            *oj = (x - m).exp();
            s += *oj;
        }
        for oj in o.iter_mut() {
            *oj /= s;
        }
    }
    out
}

pub fn log_softmax_rows_data(data: &[f32], cols: usize) -> Vec<f32> {
    let mut out = vec![0f32; data.len()];
    for (o, row) in out.chunks_mut(cols).zip(data.chunks(cols)) {
        let m = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let s: f32 = row.iter().map(|&x| (x - m).exp()).sum();
        let lse = m + s.ln();
        for (oj, &x) in o.iter_mut().zip(row) {
            *oj = x - lse;
        }
    }
    out
}

/// Row softmax of a matrix tensor.
pub fn softmax_rows(t: &Tensor) -> Result<Tensor> {
    let (_, cols) = rows_cols(t, "softmax_rows")?;
    Ok(Tensor::from_parts(t.shape().to_vec(), softmax_rows_data(t.data(), cols)))
}

pub fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = rows_cols(self.value(a), "matmul")?;
        let (k2, n) = rows_cols(self.value(b), "matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", format!("{m}x{k} · {k2}x{n}")));
        }
        let c = matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push(Tensor::from_parts(vec![m, n], c), vec![a, b], MatMul { m, k, n }))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = rows_cols(self.value(a), "matmul_nt")?;
        let (n, k2) = rows_cols(self.value(b), "matmul_nt")?;
        if k != k2 {
            return Err(Error::shape("matmul_nt", format!("{m}x{k} · ({n}x{k2})ᵀ")));
        }
        let c = matmul_nt(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push(Tensor::from_parts(vec![m, n], c), vec![a, b], MatMulNt { m, k, n }))
    }

    pub fn spmm(&mut self, a: &Arc<SparseOperand>, b: Var) -> Result<Var> {
        let (k, n) = rows_cols(self.value(b), "spmm")?;
        if a.matrix.n_cols() != k {
            return Err(Error::shape(
                "spmm",
                format!("{}x{} · {k}x{n}", a.matrix.n_rows(), a.matrix.n_cols()),
            ));
        }
        let c = kernels::spmm(&a.matrix, self.value(b).data(), n);
        let shape = vec![a.matrix.n_rows(), n];
        Ok(self.push(Tensor::from_parts(shape, c), vec![b], Spmm { a: a.clone(), n }))
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x + y).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::from_parts(shape, data), vec![a, b], Add))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::from_parts(shape, data), vec![a, b], Mul))
    }

    pub fn scale(&mut self, a: Var, s: f32) -> Var {
        let t = elementwise(self.value(a), |x| x * s);
        self.push(t, vec![a], Scale(s))
    }

    /// Multiplies every entry of `a` by the single-element tensor `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(Error::shape("scale_by", format!("scalar expected, got {:?}", self.shape(s))));
        }
        let sv = self.value(s).data()[0];
        let t = elementwise(self.value(a), |x| x * sv);
        Ok(self.push(t, vec![a, s], ScaleByScalar))
    }

    /// Adds `bias[n]` to every row of `a[m×n]`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (rows, cols) = rows_cols(self.value(a), "add_bias")?;
        if self.value(bias).len() != cols {
            return Err(Error::shape("add_bias", format!("{cols} columns, bias {:?}", self.shape(bias))));
        }
        let b = self.value(bias).data().to_vec();
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_mut(cols) {
            kernels::add_assign(row, &b);
        }
        Ok(self.push(Tensor::from_parts(vec![rows, cols], data), vec![a, bias], AddBias { rows, cols }))
    }

    /// Elementwise product with a constant (dropout masks, fixed reweighting).
    pub fn mul_const(&mut self, a: Var, factors: Arc<Vec<f32>>) -> Result<Var> {
        if factors.len() != self.value(a).len() {
            return Err(Error::shape("mul_const", format!("{} factors for {:?}", factors.len(), self.shape(a))));
        }
        let data = self.value(a).data().iter().zip(factors.iter()).map(|(x, m)| x * m).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::from_parts(shape, data), vec![a], MulConst(factors)))
    }

    fn pointwise(&mut self, a: Var, name: &'static str, f: impl Fn(f32) -> f32, deriv: fn(f32, f32, f32) -> f32, param: f32) -> Var {
        let t = elementwise(self.value(a), f);
        self.push(t, vec![a], Pointwise { name, deriv, param })
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.pointwise(a, "relu", |x| x.max(0.0), |x, _, _| if x > 0.0 { 1.0 } else { 0.0 }, 0.0)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f32) -> Var {
        self.pointwise(
            a,
            "leaky_relu",
            move |x| if x > 0.0 { x } else { slope * x },
            |x, _, s| if x > 0.0 { 1.0 } else { s },
            slope,
        )
    }

    pub fn elu(&mut self, a: Var) -> Var {
        self.pointwise(
            a,
            "elu",
            |x| if x > 0.0 { x } else { x.exp_m1() },
            |x, y, _| if x > 0.0 { 1.0 } else { y + 1.0 },
            0.0,
        )
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.pointwise(
            a,
            "silu",
            |x| x * sigmoid(x),
            |x, _, _| {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            },
            0.0,
        )
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.pointwise(a, "sigmoid", sigmoid, |_, y, _| y * (1.0 - y), 0.0)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.pointwise(a, "tanh", f32::tanh, |_, y, _| 1.0 - y * y, 0.0)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.pointwise(a, "exp", f32::exp, |_, y, _| y, 0.0)
    }

    /// Clamp into `[lo, hi]`; the gradient is zero where the bound is active.
    pub fn clamp(&mut self, a: Var, lo: f32, hi: f32) -> Var {
        let t = elementwise(self.value(a), |x| x.clamp(lo, hi));
        self.push(t, vec![a], ClampOp { lo, hi })
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), vec![a], SumAll)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f32;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (_, cols) = rows_cols(self.value(a), "softmax_rows")?;
        let t = softmax_rows(self.value(a))?;
        Ok(self.push(t, vec![a], SoftmaxRows { cols }))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (rows, cols) = rows_cols(self.value(a), "log_softmax_rows")?;
        let data = log_softmax_rows_data(self.value(a).data(), cols);
        Ok(self.push(Tensor::from_parts(vec![rows, cols], data), vec![a], LogSoftmaxRows { cols }))
    }

    pub fn select_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (rows, cols) = rows_cols(self.value(a), "select_rows")?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(Error::shape("select_rows", format!("row {bad} of {rows}")));
        }
        let t = self.value(a).select_rows(idx);
        Ok(self.push(t, vec![a], SelectRows { idx: idx.to_vec(), rows, cols }))
    }

    /// Mean negative log-likelihood of `labels` at rows `idx` of `logits`.
    pub fn cross_entropy(&mut self, logits: Var, idx: &[usize], labels: &[usize]) -> Result<Var> {
        let (rows, cols) = rows_cols(self.value(logits), "cross_entropy")?;
        if idx.len() != labels.len() || idx.is_empty() {
            return Err(Error::shape("cross_entropy", format!("{} rows, {} labels", idx.len(), labels.len())));
        }
        if idx.iter().any(|&i| i >= rows) || labels.iter().any(|&y| y >= cols) {
            return Err(Error::shape("cross_entropy", "row or label out of range"));
        }
        let picked = self.value(logits).select_rows(idx);
        let logp = log_softmax_rows_data(picked.data(), cols);
        let loss: f32 = -labels
            .iter()
            .enumerate()
            .map(|(k, &y)| logp[k * cols + y])
            .sum::<f32>()
            / idx.len() as f32;
        let probs = logp.iter().map(|v| v.exp()).collect();
        Ok(self.push(
            Tensor::scalar(loss),
            vec![logits],
            CrossEntropy {
                idx: idx.to_vec(),
                labels: labels.to_vec(),
                cols,
                probs,
            },
        ))
    }

    /// Averages `heads` equal-width column blocks: `[m × heads·w] → [m × w]`.
    pub fn mean_heads(&mut self, a: Var, heads: usize) -> Result<Var> {
        let (rows, cols) = rows_cols(self.value(a), "mean_heads")?;
        if heads == 0 || cols % heads != 0 {
            return Err(Error::shape("mean_heads", format!("{cols} columns, {heads} heads")));
        }
        let width = cols / heads;
        let x = self.value(a).data();
        let mut out = vec![0f32; rows * width];
        for r in 0..rows {
            for h in 0..heads {
                kernels::add_assign(
                    &mut out[r * width..(r + 1) * width],
                    &x[(r * heads + h) * width..(r * heads + h + 1) * width],
                );
            }
        }
        let inv = 1.0 / heads as f32;
        out.iter_mut().for_each(|v| *v *= inv);
        Ok(self.push(Tensor::from_parts(vec![rows, width], out), vec![a], MeanHeads { heads, width }))
    }
}

struct ClampOp {
    lo: f32,
    hi: f32,
}

impl Backward for ClampOp {
    fn name(&self) -> &'static str {
        "clamp"
    }
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f32], _: &[bool]) -> Vec<Option<Vec<f32>>> {
        let x = inputs[0].data();
        vec![Some(
            g.iter()
                .zip(x)
                .map(|(&g, &x)| if x >= self.lo && x <= self.hi { g } else { 0.0 })
                .collect(),
        )]
    }
}
