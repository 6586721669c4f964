//! Reverse-mode differentiation record over matrix-valued nodes.
//!
//! Nodes are appended in evaluation order, so the node index is already a
//! topological order and the reverse sweep is a single backwards scan.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::nn::params::ParameterStore;
use crate::nn::spline::SplineGrid;
use crate::nn::tensor::{matmul_into, matmul_nt_into, matmul_tn_into, Tensor};
use crate::signature::{truncated_signature, truncated_signature_backward};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    Elu(Var),
    Relu(Var),
    Abs(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    Sum(Var),
    ClipCap(Var, Var),
    Spline(Var, SplineGrid),
    Signature {
        path: Var,
        dim: usize,
        depth: usize,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by a reverse sweep, indexed by node.
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
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
    param_order: Vec<String>,
}

fn same_len(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.len() != b.len() || a.cols() != b.cols() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn row_moments(row: &[f64]) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
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

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        debug_assert!(
            matches!(op, Op::Leaf) || value.all_finite(),
            "non-finite output from {op:?}"
        );
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Input that no gradient is requested for.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Input whose gradient is tracked.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf bound to a named entry of `store`; repeated lookups share one node.
    pub fn param(&mut self, store: &ParameterStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let p = store.get(name)?;
        let v = self.push(p.value.clone(), Op::Leaf, p.trainable);
        self.params.insert(name.to_string(), v);
        self.param_order.push(name.to_string());
        Ok(v)
    }

    pub fn param_vars(&self) -> impl Iterator<Item = (&str, Var)> {
        self.param_order.iter().map(|n| (n.as_str(), self.params[n]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (n, k, k2, m) = (ta.rows(), ta.cols(), tb.rows(), tb.cols());
        if k != k2 {
            return Err(Error::shape("matmul", format!("{n}x{k} · {k2}x{m}")));
        }
        let mut out = vec![0.0; n * m];
        matmul_into(ta.data(), tb.data(), &mut out, n, k, m);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::matrix(n, m, out), Op::MatMul(a, b), ng))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (n, k, m, k2) = (ta.rows(), ta.cols(), tb.rows(), tb.cols());
        if k != k2 {
            return Err(Error::shape("matmul_nt", format!("{n}x{k} · ({m}x{k2})ᵀ")));
        }
        let mut out = vec![0.0; n * m];
        matmul_nt_into(ta.data(), tb.data(), &mut out, n, k, m);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::matrix(n, m, out), Op::MatMulNt(a, b), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_len("add", self.value(a), self.value(b))?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_len("sub", self.value(a), self.value(b))?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_len("mul", self.value(a), self.value(b))?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    /// `a (n x m) + bias (1 x m)` broadcast over rows.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(bias));
        if tb.len() != ta.cols() {
            return Err(Error::shape(
                "add_row",
                format!("{:?} + bias {:?}", ta.shape(), tb.shape()),
            ));
        }
        let c = ta.cols();
        let mut out = ta.as_matrix();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v += tb.data()[i % c];
        }
        let ng = self.ng(a) || self.ng(bias);
        Ok(self.push(out, Op::AddRow(a, bias), ng))
    }

    /// `a (n x m) * w (n x 1)` broadcast over columns.
    pub fn mul_col(&mut self, a: Var, w: Var) -> Result<Var> {
        let (ta, tw) = (self.value(a), self.value(w));
        if tw.len() != ta.rows() {
            return Err(Error::shape(
                "mul_col",
                format!("{:?} * column {:?}", ta.shape(), tw.shape()),
            ));
        }
        let c = ta.cols();
        let mut out = ta.as_matrix();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v *= tw.data()[i / c];
        }
        let ng = self.ng(a) || self.ng(w);
        Ok(self.push(out, Op::MulCol(a, w), ng))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).scale(s);
        let ng = self.ng(a);
        self.push(out, Op::Scale(a, s), ng)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x + s);
        let ng = self.ng(a);
        self.push(out, Op::AddScalar(a), ng)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(a).map(f);
        let ng = self.ng(a);
        self.push(out, op, ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    /// ELU with α = 1.
    pub fn elu(&mut self, a: Var) -> Var {
        self.unary(a, |x| if x > 0.0 { x } else { x.exp_m1() }, Op::Elu(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, f64::abs, Op::Abs(a))
    }

    /// Row-wise softmax, optionally with an additive mask whose `-inf` entries
    /// receive exactly zero weight.
    pub fn softmax_rows(&mut self, a: Var, mask: Option<&Tensor>) -> Result<Var> {
        let ta = self.value(a);
        if let Some(m) = mask {
            same_len("softmax_rows", ta, m)?;
        }
        let (r, c) = (ta.rows(), ta.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let x = ta.row_slice(i);
            let row = &mut out[i * c..(i + 1) * c];
            let mut mx = f64::NEG_INFINITY;
            for j in 0..c {
                let v = x[j] + mask.map_or(0.0, |m| m.data()[i * c + j]);
                row[j] = v;
                mx = mx.max(v);
            }
            if mx == f64::NEG_INFINITY {
                return Err(Error::InvalidArgument(format!(
                    "softmax row {i} is fully masked"
                )));
            }
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = if *v == f64::NEG_INFINITY { 0.0 } else { (*v - mx).exp() };
                sum += *v;
            }
            row.iter_mut().for_each(|v| *v /= sum);
        }
        let ng = self.ng(a);
        Ok(self.push(Tensor::matrix(r, c, out), Op::Softmax(a), ng))
    }

    /// Normalizes each row over its features, then applies `γ ⊙ · + β`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x), self.value(gamma), self.value(beta));
        let (r, c) = (tx.rows(), tx.cols());
        if tg.len() != c || tb.len() != c {
            return Err(Error::shape(
                "layer_norm",
                format!("{} features, γ {:?}, β {:?}", c, tg.shape(), tb.shape()),
            ));
        }
        let mut xhat = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = tx.row_slice(i);
            let (mean, var) = row_moments(row);
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[i] = inv;
            for j in 0..c {
                let h = (row[j] - mean) * inv;
                xhat[i * c + j] = h;
                out[i * c + j] = tg.data()[j] * h + tb.data()[j];
            }
        }
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        Ok(self.push(
            Tensor::matrix(r, c, out),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            ng,
        ))
    }

    /// Batch normalization over rows with the batch's own statistics.
    ///
    /// Returns the node and the per-column (mean, population variance) used.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, Vec<f64>, Vec<f64>)> {
        let (tx, tg, tb) = (self.value(x), self.value(gamma), self.value(beta));
        let (r, c) = (tx.rows(), tx.cols());
        if tg.len() != c || tb.len() != c {
            return Err(Error::shape("batch_norm", format!("{c} features")));
        }
        if r < 2 {
            return Err(Error::InvalidArgument(
                "train-mode normalization needs a batch of at least 2".into(),
            ));
        }
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for i in 0..r {
            for j in 0..c {
                mean[j] += tx.get(i, j);
            }
        }
        mean.iter_mut().for_each(|m| *m /= r as f64);
        for i in 0..r {
            for j in 0..c {
                let d = tx.get(i, j) - mean[j];
                var[j] += d * d;
            }
        }
        var.iter_mut().for_each(|v| *v /= r as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = vec![0.0; r * c];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                let h = (tx.get(i, j) - mean[j]) * inv_std[j];
                xhat[i * c + j] = h;
                out[i * c + j] = tg.data()[j] * h + tb.data()[j];
            }
        }
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        let v = self.push(
            Tensor::matrix(r, c, out),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            ng,
        );
        Ok((v, mean, var))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = self.value(p);
            if t.rows() != rows {
                return Err(Error::shape(
                    "concat_cols",
                    format!("row counts {rows} vs {}", t.rows()),
                ));
            }
            widths.push(t.cols());
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(
            Tensor::matrix(rows, total, out),
            Op::ConcatCols(parts.to_vec()),
            ng,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.value(parts[0]).cols();
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(Error::shape(
                    "concat_rows",
                    format!("column counts {cols} vs {}", t.cols()),
                ));
            }
            rows += t.rows();
            out.extend_from_slice(t.data());
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(Tensor::matrix(rows, cols, out), Op::ConcatRows(parts.to_vec()), ng))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = (t.rows(), t.cols());
        if start + len > c {
            return Err(Error::shape("slice_cols", format!("{start}+{len} > {c}")));
        }
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&t.row_slice(i)[start..start + len]);
        }
        let ng = self.ng(a);
        Ok(self.push(Tensor::matrix(r, len, out), Op::SliceCols(a, start), ng))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = (t.rows(), t.cols());
        if start + len > r {
            return Err(Error::shape("slice_rows", format!("{start}+{len} > {r}")));
        }
        let out = t.data()[start * c..(start + len) * c].to_vec();
        let ng = self.ng(a);
        Ok(self.push(Tensor::matrix(len, c, out), Op::SliceRows(a, start), ng))
    }

    pub fn element(&mut self, a: Var, r: usize, c: usize) -> Result<Var> {
        let row = self.slice_rows(a, r, 1)?;
        self.slice_cols(row, c, 1)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// `clip(x, 0, cap)` for scalars. At `x >= cap` the result (and its
    /// gradient) follows `cap`; below zero it is the constant 0.
    pub fn clip_cap(&mut self, x: Var, cap: Var) -> Result<Var> {
        let (tx, tc) = (self.value(x), self.value(cap));
        if tx.len() != 1 || tc.len() != 1 {
            return Err(Error::shape("clip_cap", "scalar operands required"));
        }
        let (xv, cv) = (tx.data()[0], tc.data()[0]);
        let v = if xv >= cv { cv } else { xv.max(0.0) };
        let ng = self.ng(x) || self.ng(cap);
        Ok(self.push(Tensor::scalar(v), Op::ClipCap(x, cap), ng))
    }

    /// Expands every entry into its cubic B-spline basis values:
    /// `n x k` becomes `n x (k · n_basis)`, input-major.
    pub fn spline_basis(&mut self, x: Var, grid: SplineGrid) -> Var {
        let t = self.value(x);
        let nb = grid.n_basis();
        let (r, c) = (t.rows(), t.cols());
        let mut out = vec![0.0; r * c * nb];
        for (i, &v) in t.data().iter().enumerate() {
            grid.eval(v, &mut out[i * nb..(i + 1) * nb]);
        }
        let ng = self.ng(x);
        self.push(Tensor::matrix(r, c * nb, out), Op::Spline(x, grid), ng)
    }

    /// Truncated signature of a `len x dim` path; result is `1 x m`.
    pub fn signature(&mut self, path: Var, depth: usize) -> Result<Var> {
        let t = self.value(path);
        let dim = t.cols();
        let sig = truncated_signature(t.data(), dim, depth)?;
        let ng = self.ng(path);
        Ok(self.push(
            Tensor::row(sig.into_coeffs()),
            Op::Signature { path, dim, depth },
            ng,
        ))
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, has shape {:?}", self.value(loss).shape()),
            ));
        }
        Ok(self.backward_from(&[(loss, Tensor::scalar(1.0))]))
    }

    /// Reverse sweep seeded with explicit output gradients.
    pub fn backward_from(&self, seeds: &[(Var, Tensor)]) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut last = 0;
        for (v, g) in seeds {
            accumulate(&mut grads, *v, g.clone());
            last = last.max(v.0);
        }
        for idx in (0..=last).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    /// Gradients of every parameter bound to this tape, in binding order.
    pub fn param_grads(&self, grads: &Gradients) -> Vec<(String, Tensor)> {
        self.param_vars()
            .filter(|(_, v)| self.ng(*v))
            .map(|(n, v)| {
                let g = grads
                    .get(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(self.value(v).shape()));
                (n.to_string(), g)
            })
            .collect()
    }

    fn backprop_node(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        let need = |v: Var| self.nodes[v.0].needs_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (n, k, m) = (ta.rows(), ta.cols(), tb.cols());
                if need(*a) {
                    let mut ga = vec![0.0; n * k];
                    matmul_nt_into(g.data(), tb.data(), &mut ga, n, m, k);
                    accumulate(grads, *a, Tensor::matrix(n, k, ga));
                }
                if need(*b) {
                    let mut gb = vec![0.0; k * m];
                    matmul_tn_into(ta.data(), g.data(), &mut gb, n, k, m);
                    accumulate(grads, *b, Tensor::matrix(k, m, gb));
                }
            }
            Op::MatMulNt(a, b) => {
                // out = a bᵀ; a: n x k, b: m x k
                let (ta, tb) = (val(*a), val(*b));
                let (n, k, m) = (ta.rows(), ta.cols(), tb.rows());
                if need(*a) {
                    let mut ga = vec![0.0; n * k];
                    matmul_into(g.data(), tb.data(), &mut ga, n, m, k);
                    accumulate(grads, *a, Tensor::matrix(n, k, ga));
                }
                if need(*b) {
                    let mut gb = vec![0.0; m * k];
                    matmul_tn_into(g.data(), ta.data(), &mut gb, n, m, k);
                    accumulate(grads, *b, Tensor::matrix(m, k, gb));
                }
            }
            Op::Add(a, b) => {
                accumulate_if(grads, *a, need(*a), || g.clone());
                accumulate_if(grads, *b, need(*b), || g.clone());
            }
            Op::Sub(a, b) => {
                accumulate_if(grads, *a, need(*a), || g.clone());
                accumulate_if(grads, *b, need(*b), || g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                accumulate_if(grads, *a, need(*a), || g.zip_map(val(*b), |x, y| x * y));
                accumulate_if(grads, *b, need(*b), || g.zip_map(val(*a), |x, y| x * y));
            }
            Op::AddRow(a, bias) => {
                accumulate_if(grads, *a, need(*a), || g.clone());
                if need(*bias) {
                    let c = g.cols();
                    let mut gb = vec![0.0; c];
                    for (i, v) in g.data().iter().enumerate() {
                        gb[i % c] += v;
                    }
                    let shape = val(*bias).shape().to_vec();
                    accumulate(grads, *bias, Tensor::new(&shape, gb).expect("bias shape"));
                }
            }
            Op::MulCol(a, w) => {
                let (ta, tw) = (val(*a), val(*w));
                let c = ta.cols();
                if need(*a) {
                    let mut ga = g.clone();
                    for (i, v) in ga.data_mut().iter_mut().enumerate() {
                        *v *= tw.data()[i / c];
                    }
                    accumulate(grads, *a, ga);
                }
                if need(*w) {
                    let mut gw = vec![0.0; tw.len()];
                    for (i, (gv, av)) in g.data().iter().zip(ta.data()).enumerate() {
                        gw[i / c] += gv * av;
                    }
                    let shape = tw.shape().to_vec();
                    accumulate(grads, *w, Tensor::new(&shape, gw).expect("column shape"));
                }
            }
            Op::Scale(a, s) => accumulate(grads, *a, g.scale(*s)),
            Op::AddScalar(a) => accumulate(grads, *a, g.clone()),
            Op::Sigmoid(a) => accumulate(grads, *a, g.zip_map(out, |gv, y| gv * y * (1.0 - y))),
            Op::Tanh(a) => accumulate(grads, *a, g.zip_map(out, |gv, y| gv * (1.0 - y * y))),
            Op::Elu(a) => {
                accumulate(
                    grads,
                    *a,
                    g.zip_map(val(*a), |gv, x| if x > 0.0 { gv } else { gv * x.exp() }),
                );
            }
            Op::Relu(a) => accumulate(
                grads,
                *a,
                g.zip_map(val(*a), |gv, x| if x > 0.0 { gv } else { 0.0 }),
            ),
            Op::Abs(a) => accumulate(
                grads,
                *a,
                g.zip_map(val(*a), |gv, x| {
                    if x > 0.0 {
                        gv
                    } else if x < 0.0 {
                        -gv
                    } else {
                        0.0
                    }
                }),
            ),
            Op::Softmax(a) => {
                let (r, c) = (out.rows(), out.cols());
                let mut ga = vec![0.0; r * c];
                for i in 0..r {
                    let y = out.row_slice(i);
                    let gr = g.row_slice(i);
                    let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        ga[i * c + j] = y[j] * (gr[j] - dot);
                    }
                }
                accumulate(grads, *a, Tensor::matrix(r, c, ga));
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let tg = val(*gamma);
                let (r, c) = (out.rows(), out.cols());
                let mut gg = vec![0.0; c];
                let mut gbeta = vec![0.0; c];
                let mut gx = vec![0.0; r * c];
                for i in 0..r {
                    let grow = g.row_slice(i);
                    let h = &xhat[i * c..(i + 1) * c];
                    let mut s1 = 0.0;
                    let mut s2 = 0.0;
                    for j in 0..c {
                        gg[j] += grow[j] * h[j];
                        gbeta[j] += grow[j];
                        let gh = grow[j] * tg.data()[j];
                        s1 += gh;
                        s2 += gh * h[j];
                    }
                    let nf = c as f64;
                    for j in 0..c {
                        let gh = grow[j] * tg.data()[j];
                        gx[i * c + j] = inv_std[i] / nf * (nf * gh - s1 - h[j] * s2);
                    }
                }
                if need(*x) {
                    let shape = val(*x).shape().to_vec();
                    accumulate(grads, *x, Tensor::new(&shape, gx).expect("x shape"));
                }
                if need(*gamma) {
                    let shape = tg.shape().to_vec();
                    accumulate(grads, *gamma, Tensor::new(&shape, gg).expect("γ shape"));
                }
                if need(*beta) {
                    let shape = val(*beta).shape().to_vec();
                    accumulate(grads, *beta, Tensor::new(&shape, gbeta).expect("β shape"));
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let tg = val(*gamma);
                let (r, c) = (out.rows(), out.cols());
                let mut gg = vec![0.0; c];
                let mut gbeta = vec![0.0; c];
                let mut s1 = vec![0.0; c];
                let mut s2 = vec![0.0; c];
                for i in 0..r {
                    for j in 0..c {
                        let gv = g.get(i, j);
                        let h = xhat[i * c + j];
                        gg[j] += gv * h;
                        gbeta[j] += gv;
                        let gh = gv * tg.data()[j];
                        s1[j] += gh;
                        s2[j] += gh * h;
                    }
                }
                let nf = r as f64;
                let mut gx = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        let gh = g.get(i, j) * tg.data()[j];
                        let h = xhat[i * c + j];
                        gx[i * c + j] = inv_std[j] / nf * (nf * gh - s1[j] - h * s2[j]);
                    }
                }
                if need(*x) {
                    let shape = val(*x).shape().to_vec();
                    accumulate(grads, *x, Tensor::new(&shape, gx).expect("x shape"));
                }
                if need(*gamma) {
                    let shape = tg.shape().to_vec();
                    accumulate(grads, *gamma, Tensor::new(&shape, gg).expect("γ shape"));
                }
                if need(*beta) {
                    let shape = val(*beta).shape().to_vec();
                    accumulate(grads, *beta, Tensor::new(&shape, gbeta).expect("β shape"));
                }
            }
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let mut start = 0;
                for &p in parts {
                    let w = val(p).cols();
                    if need(p) {
                        let mut gp = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            gp.extend_from_slice(&g.row_slice(r)[start..start + w]);
                        }
                        let shape = val(p).shape().to_vec();
                        accumulate(grads, p, Tensor::new(&shape, gp).expect("part shape"));
                    }
                    start += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let n = val(p).len();
                    if need(p) {
                        let shape = val(p).shape().to_vec();
                        let gp = g.data()[start..start + n].to_vec();
                        accumulate(grads, p, Tensor::new(&shape, gp).expect("part shape"));
                    }
                    start += n;
                }
            }
            Op::SliceCols(a, start) => {
                let ta = val(*a);
                let (r, c) = (ta.rows(), ta.cols());
                let w = g.cols();
                let mut ga = vec![0.0; r * c];
                for i in 0..r {
                    ga[i * c + start..i * c + start + w].copy_from_slice(g.row_slice(i));
                }
                let shape = ta.shape().to_vec();
                accumulate(grads, *a, Tensor::new(&shape, ga).expect("slice shape"));
            }
            Op::SliceRows(a, start) => {
                let ta = val(*a);
                let c = ta.cols();
                let mut ga = vec![0.0; ta.len()];
                ga[start * c..start * c + g.len()].copy_from_slice(g.data());
                let shape = ta.shape().to_vec();
                accumulate(grads, *a, Tensor::new(&shape, ga).expect("slice shape"));
            }
            Op::Sum(a) => {
                let shape = val(*a).shape().to_vec();
                accumulate(grads, *a, Tensor::filled(&shape, g.data()[0]));
            }
            Op::ClipCap(x, cap) => {
                let (xv, cv) = (val(*x).data()[0], val(*cap).data()[0]);
                if xv >= cv {
                    accumulate_if(grads, *cap, need(*cap), || g.clone());
                } else if xv > 0.0 {
                    accumulate_if(grads, *x, need(*x), || g.clone());
                }
            }
            Op::Spline(x, grid) => {
                let tx = val(*x);
                let nb = grid.n_basis();
                let mut deriv = vec![0.0; nb];
                let mut gx = vec![0.0; tx.len()];
                for (i, &v) in tx.data().iter().enumerate() {
                    grid.eval_deriv(v, &mut deriv);
                    let gs = &g.data()[i * nb..(i + 1) * nb];
                    gx[i] = gs.iter().zip(&deriv).map(|(a, b)| a * b).sum();
                }
                let shape = tx.shape().to_vec();
                accumulate(grads, *x, Tensor::new(&shape, gx).expect("spline shape"));
            }
            Op::Signature { path, dim, depth } => {
                let tp = val(*path);
                let gp = truncated_signature_backward(tp.data(), *dim, *depth, g.data())
                    .expect("signature forward already validated the path");
                let shape = tp.shape().to_vec();
                accumulate(grads, *path, Tensor::new(&shape, gp).expect("path shape"));
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn accumulate_if(grads: &mut [Option<Tensor>], v: Var, cond: bool, g: impl FnOnce() -> Tensor) {
    if cond {
        accumulate(grads, v, g());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_sum_gradient_is_input() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::row(vec![1.0, 2.0, 3.0]));
        let w = tape.variable(Tensor::matrix(3, 2, vec![0.5; 6]));
        let y = tape.matmul(x, w).unwrap();
        let loss = tape.sum(y);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(w).unwrap().data(), &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        assert!(grads.get(x).is_none());
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let x = tape.variable(Tensor::row(vec![1.0, 2.0]));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn unreachable_parameter_gets_zero() {
        let mut store = ParameterStore::new();
        store.insert("used", Tensor::scalar(2.0)).unwrap();
        store.insert("unused", Tensor::scalar(5.0)).unwrap();
        let mut tape = Tape::new();
        let a = tape.param(&store, "used").unwrap();
        let _b = tape.param(&store, "unused").unwrap();
        let loss = tape.scale(a, 3.0);
        let grads = tape.backward(loss).unwrap();
        let pg = tape.param_grads(&grads);
        assert_eq!(pg[0].1.data(), &[3.0]);
        assert_eq!(pg[1].1.data(), &[0.0]);
    }

    #[test]
    fn masked_softmax_zeroes_future() {
        let mut tape = Tape::new();
        let s = tape.constant(Tensor::matrix(2, 2, vec![1.0, 5.0, 2.0, 3.0]));
        let mask = Tensor::matrix(2, 2, vec![0.0, f64::NEG_INFINITY, 0.0, 0.0]);
        let p = tape.softmax_rows(s, Some(&mask)).unwrap();
        let v = tape.value(p);
        assert_eq!(v.get(0, 0), 1.0);
        assert_eq!(v.get(0, 1), 0.0);
        assert!((v.get(1, 0) + v.get(1, 1) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn clip_routes_gradient() {
        let mut tape = Tape::new();
        let x = tape.variable(Tensor::scalar(0.7));
        let cap = tape.variable(Tensor::scalar(0.4));
        let y = tape.clip_cap(x, cap).unwrap();
        assert_eq!(tape.scalar_value(y), 0.4);
        let g = tape.backward(y).unwrap();
        assert!(g.get(x).is_none());
        assert_eq!(g.get(cap).unwrap().data(), &[1.0]);
    }
}
