//! Central finite-difference checks of tape gradients.
//!
//! The numeric side only ever evaluates forward passes on perturbed copies of
//! the store, so it shares no code with the reverse sweep it checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::nn::params::ParameterStore;
use crate::nn::tape::{Tape, Var};
use crate::nn::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Largest per-tensor relative error `‖g − ĝ‖ / max(‖g‖, ‖ĝ‖)`.
    pub max_rel_err: f64,
    pub worst_param: String,
    pub coords_checked: usize,
}

/// Reduces any output to a scalar through fixed pseudo-random weights so that
/// every output coordinate contributes a distinct gradient.
pub fn probe_loss(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let shape = tape.value(y).shape().to_vec();
    let n = tape.value(y).len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = Tensor::new(&shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    let w = tape.constant(w);
    let prod = tape.mul(y, w)?;
    Ok(tape.sum(prod))
}

/// Compares analytic and central-difference gradients for every trainable
/// entry of `store` (at most `max_coords` coordinates per tensor).
pub fn check<F>(store: &ParameterStore, step: f64, max_coords: usize, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParameterStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    let grads = tape.backward(loss)?;
    let analytic: std::collections::HashMap<String, Tensor> =
        tape.param_grads(&grads).into_iter().collect();

    let eval = |s: &ParameterStore| -> Result<f64> {
        let mut t = Tape::new();
        let l = f(&mut t, s)?;
        Ok(t.scalar_value(l))
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        coords_checked: 0,
    };
    let mut work = store.clone();
    for (name, p) in store.iter() {
        if !p.trainable {
            continue;
        }
        let n = p.value.len();
        let stride = n.div_ceil(max_coords.max(1)).max(1);
        let zero = Tensor::zeros(p.value.shape());
        let g = analytic.get(name).unwrap_or(&zero);
        let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
        for i in (0..n).step_by(stride) {
            let orig = p.value.data()[i];
            work.get_mut(name)?.value.data_mut()[i] = orig + step;
            let up = eval(&work)?;
            work.get_mut(name)?.value.data_mut()[i] = orig - step;
            let down = eval(&work)?;
            work.get_mut(name)?.value.data_mut()[i] = orig;
            let fd = (up - down) / (2.0 * step);
            let an = g.data()[i];
            diff2 += (fd - an) * (fd - an);
            a2 += an * an;
            n2 += fd * fd;
            report.coords_checked += 1;
        }
        let denom = a2.sqrt().max(n2.sqrt());
        let rel = if denom < 1e-10 { diff2.sqrt() } else { diff2.sqrt() / denom };
        if rel > report.max_rel_err || report.worst_param.is_empty() {
            report.max_rel_err = report.max_rel_err.max(rel);
            report.worst_param = name.to_string();
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_correct_gradient() {
        let mut store = ParameterStore::new();
        store.insert("x", Tensor::row(vec![0.3, -0.7, 1.1])).unwrap();
        let r = check(&store, 1e-6, 10, |t, s| {
            let x = t.param(s, "x")?;
            let y = t.tanh(x);
            let z = t.mul(y, x)?;
            probe_loss(t, z, 1)
        })
        .unwrap();
        assert!(r.max_rel_err < 1e-8, "{r:?}");
        assert_eq!(r.coords_checked, 3);
    }
}
