//! Kolmogorov-Arnold layer: a learnable cubic spline per input-output pair
//! plus a linear bypass.

use rand::Rng;

use crate::error::Result;
use crate::nn::layers::Initializer;
use crate::nn::spline::SplineGrid;
use crate::nn::{ParameterStore, Tape, Tensor, Var};

/// Spline coefficients are `(inputs · n_basis) x outputs`, input-major;
/// the bypass is `inputs x outputs`.
pub fn init_kan(
    init: &mut Initializer,
    prefix: &str,
    inputs: usize,
    outputs: usize,
    grid: &SplineGrid,
) -> Result<()> {
    let nb = grid.n_basis();
    let scale = 0.1 / (inputs as f64).sqrt();
    let coef = (0..inputs * nb * outputs)
        .map(|_| init.rng.gen_range(-scale..scale))
        .collect();
    init.store.insert(
        &format!("{prefix}.coef"),
        Tensor::matrix(inputs * nb, outputs, coef),
    )?;
    init.glorot(&format!("{prefix}.bypass"), inputs, outputs, 1.0)
}

/// `φ(s)_o = Σ_i spline_{i,o}(s_i) + bypass_{i,o} · s_i` for each row of `s`.
pub fn kan_apply(
    tape: &mut Tape,
    store: &ParameterStore,
    s: Var,
    prefix: &str,
    grid: SplineGrid,
) -> Result<Var> {
    let coef = tape.param(store, &format!("{prefix}.coef"))?;
    let bypass = tape.param(store, &format!("{prefix}.bypass"))?;
    let basis = tape.spline_basis(s, grid);
    let spline = tape.matmul(basis, coef)?;
    let linear = tape.matmul(s, bypass)?;
    tape.add(spline, linear)
}

/// Direct evaluation without a tape, for one row.
pub fn kan_eval(coef: &Tensor, bypass: &Tensor, grid: &SplineGrid, s: &[f64]) -> Vec<f64> {
    let nb = grid.n_basis();
    let outputs = bypass.cols();
    let mut out = vec![0.0; outputs];
    let mut basis = vec![0.0; nb];
    for (i, &x) in s.iter().enumerate() {
        grid.eval(x, &mut basis);
        for o in 0..outputs {
            let mut acc = bypass.get(i, o) * x;
            for (b, &bv) in basis.iter().enumerate() {
                acc += coef.get(i * nb + b, o) * bv;
            }
            out[o] += acc;
        }
    }
    out
}
