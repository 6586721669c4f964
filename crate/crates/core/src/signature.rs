//! Truncated path signatures of piecewise-linear paths.
//!
//! A signature truncated at depth `k` over a `d`-dimensional path is stored
//! without its constant leading term: levels `1..=k` concatenated, each level
//! `n` holding `d^n` coefficients in lexicographic multi-index order. The
//! product of two such vectors treats the missing constant term as 1.
//!
//! The signature of a path is built by folding the truncated tensor
//! exponential of each linear increment with [`chen_product`], left to right.

use crate::error::{Error, Result};

/// Number of coefficients in levels `1..=depth` for a `dim`-dimensional path.
pub fn signature_dim(dim: usize, depth: usize) -> usize {
    let mut total = 0;
    let mut level = 1;
    for _ in 0..depth {
        level *= dim;
        total += level;
    }
    total
}

/// Start offset of every level `1..=depth`, plus the total length at the end.
fn level_offsets(dim: usize, depth: usize) -> Vec<usize> {
    let mut offs = Vec::with_capacity(depth + 1);
    let mut off = 0;
    let mut level = 1;
    for _ in 0..depth {
        offs.push(off);
        level *= dim;
        off += level;
    }
    offs.push(off);
    offs
}

#[derive(Clone, Debug, PartialEq)]
pub struct SignatureVector {
    dim: usize,
    depth: usize,
    coeffs: Vec<f64>,
}

impl SignatureVector {
    /// The signature of the empty path (all levels zero).
    pub fn unit(dim: usize, depth: usize) -> Self {
        Self {
            dim,
            depth,
            coeffs: vec![0.0; signature_dim(dim, depth)],
        }
    }

    pub fn from_coeffs(dim: usize, depth: usize, coeffs: Vec<f64>) -> Result<Self> {
        let m = signature_dim(dim, depth);
        if coeffs.len() != m {
            return Err(Error::shape(
                "signature",
                format!("dim {dim} depth {depth} needs {m} coefficients, got {}", coeffs.len()),
            ));
        }
        Ok(Self { dim, depth, coeffs })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    /// Coefficients of level `n` (1-based).
    pub fn level(&self, n: usize) -> &[f64] {
        assert!(n >= 1 && n <= self.depth, "level {n} out of 1..={}", self.depth);
        let offs = level_offsets(self.dim, self.depth);
        &self.coeffs[offs[n - 1]..offs[n]]
    }
}

/// Truncated tensor exponential of a single increment: level `n` is `Δ^{⊗n}/n!`.
fn tensor_exp_into(delta: &[f64], depth: usize, offs: &[usize], out: &mut [f64]) {
    let d = delta.len();
    out[..d].copy_from_slice(delta);
    for n in 2..=depth {
        let (prev, cur) = out.split_at_mut(offs[n - 1]);
        let prev = &prev[offs[n - 2]..];
        let inv = 1.0 / n as f64;
        for (i, &p) in prev.iter().enumerate() {
            let row = &mut cur[i * d..(i + 1) * d];
            for (r, &dv) in row.iter_mut().zip(delta) {
                *r = p * dv * inv;
            }
        }
    }
}

/// `out = a ⊗ b` in the truncated tensor algebra with implicit unit terms.
fn chen_mul_into(a: &[f64], b: &[f64], depth: usize, offs: &[usize], out: &mut [f64]) {
    for n in 1..=depth {
        let on = offs[n - 1];
        let len = offs[n] - on;
        let dst = &mut out[on..on + len];
        for (k, v) in dst.iter_mut().enumerate() {
            *v = a[on + k] + b[on + k];
        }
        for p in 1..n {
            let q = n - p;
            let ap = &a[offs[p - 1]..offs[p]];
            let bq = &b[offs[q - 1]..offs[q]];
            let bl = bq.len();
            for (i, &av) in ap.iter().enumerate() {
                if av == 0.0 {
                    continue;
                }
                let row = &mut dst[i * bl..(i + 1) * bl];
                for (r, &bv) in row.iter_mut().zip(bq) {
                    *r += av * bv;
                }
            }
        }
    }
}

/// Adjoint of [`chen_mul_into`]: accumulates `∂/∂a` and `∂/∂b` of `<g, a ⊗ b>`.
fn chen_mul_adjoint(
    a: &[f64],
    b: &[f64],
    g: &[f64],
    depth: usize,
    offs: &[usize],
    ga: &mut [f64],
    gb: &mut [f64],
) {
    for n in 1..=depth {
        let on = offs[n - 1];
        let gn = &g[on..offs[n]];
        for (k, &gv) in gn.iter().enumerate() {
            ga[on + k] += gv;
            gb[on + k] += gv;
        }
        for p in 1..n {
            let q = n - p;
            let (pa, pb) = (offs[p - 1], offs[q - 1]);
            let ap = &a[pa..offs[p]];
            let bq = &b[pb..offs[q]];
            let bl = bq.len();
            for (i, &av) in ap.iter().enumerate() {
                let grow = &gn[i * bl..(i + 1) * bl];
                let mut acc = 0.0;
                for (j, (&gv, &bv)) in grow.iter().zip(bq).enumerate() {
                    acc += gv * bv;
                    gb[pb + j] += gv * av;
                }
                ga[pa + i] += acc;
            }
        }
    }
}

/// Truncated tensor product of two signatures, constant term implicit.
pub fn chen_product(a: &SignatureVector, b: &SignatureVector) -> Result<SignatureVector> {
    if a.dim != b.dim || a.depth != b.depth {
        return Err(Error::shape(
            "chen_product",
            format!("(d={}, k={}) vs (d={}, k={})", a.dim, a.depth, b.dim, b.depth),
        ));
    }
    let offs = level_offsets(a.dim, a.depth);
    let mut out = vec![0.0; a.coeffs.len()];
    chen_mul_into(&a.coeffs, &b.coeffs, a.depth, &offs, &mut out);
    Ok(SignatureVector {
        dim: a.dim,
        depth: a.depth,
        coeffs: out,
    })
}

fn check_path(path: &[f64], dim: usize, depth: usize) -> Result<usize> {
    if dim == 0 || path.len() % dim != 0 {
        return Err(Error::shape(
            "truncated_signature",
            format!("{} values is not a multiple of dim {dim}", path.len()),
        ));
    }
    let len = path.len() / dim;
    if len < 2 {
        return Err(Error::InvalidArgument(format!(
            "signature path needs at least 2 points, got {len}"
        )));
    }
    if depth == 0 {
        return Err(Error::InvalidArgument("signature depth must be >= 1".into()));
    }
    if !path.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("signature path".into()));
    }
    Ok(len)
}

/// Signature of the piecewise-linear interpolation of `path` (row-major, `len x dim`).
pub fn truncated_signature(path: &[f64], dim: usize, depth: usize) -> Result<SignatureVector> {
    let len = check_path(path, dim, depth)?;
    let offs = level_offsets(dim, depth);
    let m = offs[depth];
    let mut acc = vec![0.0; m];
    let mut step = vec![0.0; m];
    let mut next = vec![0.0; m];
    let mut delta = vec![0.0; dim];
    for i in 1..len {
        for c in 0..dim {
            delta[c] = path[i * dim + c] - path[(i - 1) * dim + c];
        }
        tensor_exp_into(&delta, depth, &offs, &mut step);
        if i == 1 {
            acc.copy_from_slice(&step);
        } else {
            chen_mul_into(&acc, &step, depth, &offs, &mut next);
            std::mem::swap(&mut acc, &mut next);
        }
    }
    Ok(SignatureVector {
        dim,
        depth,
        coeffs: acc,
    })
}

/// Gradient of `<grad_out, S(path)>` with respect to every path coordinate.
pub fn truncated_signature_backward(
    path: &[f64],
    dim: usize,
    depth: usize,
    grad_out: &[f64],
) -> Result<Vec<f64>> {
    let len = check_path(path, dim, depth)?;
    let offs = level_offsets(dim, depth);
    let m = offs[depth];
    if grad_out.len() != m {
        return Err(Error::shape(
            "truncated_signature_backward",
            format!("gradient has {} entries, expected {m}", grad_out.len()),
        ));
    }
    let n_inc = len - 1;
    let mut deltas = vec![0.0; n_inc * dim];
    for i in 0..n_inc {
        for c in 0..dim {
            deltas[i * dim + c] = path[(i + 1) * dim + c] - path[i * dim + c];
        }
    }
    // exps[i] = exp(Δ_i); prefixes[i] = exp(Δ_0) ⊗ … ⊗ exp(Δ_i)
    let mut exps = vec![0.0; n_inc * m];
    let mut prefixes = vec![0.0; n_inc * m];
    for i in 0..n_inc {
        let (delta, e) = (&deltas[i * dim..(i + 1) * dim], i * m);
        tensor_exp_into(delta, depth, &offs, &mut exps[e..e + m]);
        if i == 0 {
            prefixes[..m].copy_from_slice(&exps[..m]);
        } else {
            let (done, rest) = prefixes.split_at_mut(i * m);
            chen_mul_into(
                &done[(i - 1) * m..],
                &exps[e..e + m],
                depth,
                &offs,
                &mut rest[..m],
            );
        }
    }

    let mut g_acc = grad_out.to_vec();
    let mut g_prev = vec![0.0; m];
    let mut g_exp = vec![0.0; m];
    let mut g_delta = vec![0.0; n_inc * dim];
    for i in (0..n_inc).rev() {
        let e = &exps[i * m..(i + 1) * m];
        if i == 0 {
            g_exp.copy_from_slice(&g_acc);
        } else {
            g_prev.iter_mut().for_each(|v| *v = 0.0);
            g_exp.iter_mut().for_each(|v| *v = 0.0);
            let prev = &prefixes[(i - 1) * m..i * m];
            chen_mul_adjoint(prev, e, &g_acc, depth, &offs, &mut g_prev, &mut g_exp);
        }
        let delta = &deltas[i * dim..(i + 1) * dim];
        tensor_exp_adjoint(delta, e, depth, &offs, &mut g_exp, &mut g_delta[i * dim..(i + 1) * dim]);
        std::mem::swap(&mut g_acc, &mut g_prev);
    }

    let mut g_path = vec![0.0; len * dim];
    for i in 0..n_inc {
        for c in 0..dim {
            let g = g_delta[i * dim + c];
            g_path[(i + 1) * dim + c] += g;
            g_path[i * dim + c] -= g;
        }
    }
    Ok(g_path)
}

/// Reverse sweep through `E_n = E_{n-1} ⊗ Δ / n`. Consumes `g_exp`.
fn tensor_exp_adjoint(
    delta: &[f64],
    exp: &[f64],
    depth: usize,
    offs: &[usize],
    g_exp: &mut [f64],
    g_delta: &mut [f64],
) {
    let d = delta.len();
    for n in (2..=depth).rev() {
        let inv = 1.0 / n as f64;
        let (lo, hi) = g_exp.split_at_mut(offs[n - 1]);
        let g_cur = &hi[..offs[n] - offs[n - 1]];
        let g_prev = &mut lo[offs[n - 2]..];
        let prev = &exp[offs[n - 2]..offs[n - 1]];
        for (i, &p) in prev.iter().enumerate() {
            let grow = &g_cur[i * d..(i + 1) * d];
            let mut acc = 0.0;
            for (c, (&gv, &dv)) in grow.iter().zip(delta).enumerate() {
                acc += gv * dv;
                g_delta[c] += gv * p * inv;
            }
            g_prev[i] += acc * inv;
        }
    }
    for c in 0..d {
        g_delta[c] += g_exp[c];
    }
}

/// Elementwise learnable scaling of a signature window: `W ⊙ X`.
pub fn scale_path(weights: &[f64], path: &[f64]) -> Result<Vec<f64>> {
    if weights.len() != path.len() {
        return Err(Error::shape(
            "scale_path",
            format!("kernel has {} entries, path has {}", weights.len(), path.len()),
        ));
    }
    Ok(weights.iter().zip(path).map(|(w, x)| w * x).collect())
}

/// Copy `context` onto every row of `features` (`rows x cols`), returning `rows x (cols + m)`.
pub fn repeat_context(features: &[f64], cols: usize, context: &[f64]) -> Vec<f64> {
    if cols == 0 {
        return Vec::new();
    }
    let rows = features.len() / cols;
    let width = cols + context.len();
    let mut out = Vec::with_capacity(rows * width);
    for r in 0..rows {
        out.extend_from_slice(&features[r * cols..(r + 1) * cols]);
        out.extend_from_slice(context);
    }
    out
}

/// Batch-normalization state for signature features.
#[derive(Clone, Debug, PartialEq)]
pub struct SignatureNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
}

pub const SIGNATURE_NORM_EPS: f64 = 1e-3;
pub const SIGNATURE_NORM_MOMENTUM: f64 = 0.99;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    Train,
    Infer,
}

impl SignatureNorm {
    pub fn new(m: usize) -> Self {
        Self {
            gamma: vec![1.0; m],
            beta: vec![0.0; m],
            running_mean: vec![0.0; m],
            running_var: vec![1.0; m],
            momentum: SIGNATURE_NORM_MOMENTUM,
        }
    }

    pub fn width(&self) -> usize {
        self.gamma.len()
    }

    /// Normalize a batch of signature vectors.
    ///
    /// Train mode uses the batch statistics (population variance) and folds
    /// them into the running averages; infer mode reads the running averages.
    pub fn normalize(&mut self, batch: &[Vec<f64>], mode: NormMode) -> Result<Vec<Vec<f64>>> {
        let m = self.width();
        if let Some(bad) = batch.iter().find(|s| s.len() != m) {
            return Err(Error::shape(
                "normalize_signature",
                format!("vector of length {} vs norm width {m}", bad.len()),
            ));
        }
        let (mean, var) = match mode {
            NormMode::Train => {
                if batch.len() < 2 {
                    return Err(Error::InvalidArgument(
                        "train-mode normalization needs a batch of at least 2".into(),
                    ));
                }
                let (mean, var) = batch_moments(batch, m);
                for j in 0..m {
                    self.running_mean[j] =
                        self.momentum * self.running_mean[j] + (1.0 - self.momentum) * mean[j];
                    self.running_var[j] =
                        self.momentum * self.running_var[j] + (1.0 - self.momentum) * var[j];
                }
                (mean, var)
            }
            NormMode::Infer => (self.running_mean.clone(), self.running_var.clone()),
        };
        Ok(batch
            .iter()
            .map(|s| {
                (0..m)
                    .map(|j| {
                        self.gamma[j] * (s[j] - mean[j]) / (var[j] + SIGNATURE_NORM_EPS).sqrt()
                            + self.beta[j]
                    })
                    .collect()
            })
            .collect())
    }
}

pub(crate) fn batch_moments(batch: &[Vec<f64>], m: usize) -> (Vec<f64>, Vec<f64>) {
    let n = batch.len() as f64;
    let mut mean = vec![0.0; m];
    for s in batch {
        for j in 0..m {
            mean[j] += s[j];
        }
    }
    mean.iter_mut().for_each(|v| *v /= n);
    let mut var = vec![0.0; m];
    for s in batch {
        for j in 0..m {
            let c = s[j] - mean[j];
            var[j] += c * c;
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    (mean, var)
}
