//! Causally masked multi-head self-attention.

use crate::error::{Error, Result};
use crate::nn::layers::Initializer;
use crate::nn::{ParameterStore, Tape, Tensor, Var};

/// Additive mask: `0` where key `j <= i`, `-inf` above the diagonal.
pub fn causal_mask(t: usize) -> Tensor {
    let mut m = Tensor::zeros(&[t, t]);
    for i in 0..t {
        for j in i + 1..t {
            m.set(i, j, f64::NEG_INFINITY);
        }
    }
    m
}

pub fn init_attention(init: &mut Initializer, d_model: usize, heads: usize) -> Result<()> {
    let d_attn = head_width(d_model, heads)?;
    for h in 0..heads {
        for w in ["wq", "wk", "wv"] {
            init.glorot(&format!("attn.{w}.{h}"), d_model, d_attn, 1.0)?;
        }
    }
    init.glorot("attn.wo", heads * d_attn, d_model, 1.0)
}

pub fn head_width(d_model: usize, heads: usize) -> Result<usize> {
    if heads == 0 || d_model % heads != 0 {
        return Err(Error::InvalidArgument(format!(
            "{heads} heads do not divide d_model = {d_model}"
        )));
    }
    Ok(d_model / heads)
}

/// `softmax(Q Kᵀ / sqrt(d) + M) V` for one head.
pub fn scaled_dot_attention(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    mask: Option<&Tensor>,
) -> Result<(Var, Var)> {
    let d = tape.value(q).cols();
    let scores = tape.matmul_nt(q, k)?;
    let scores = tape.scale(scores, 1.0 / (d as f64).sqrt());
    let weights = tape.softmax_rows(scores, mask)?;
    Ok((tape.matmul(weights, v)?, weights))
}

/// Self-attention over the rows of `x` with per-head projections and the
/// output projection `W_O`. Returns the output and per-head weights.
pub fn attention(
    tape: &mut Tape,
    store: &ParameterStore,
    x: Var,
    heads: usize,
    mask: Option<&Tensor>,
) -> Result<(Var, Vec<Var>)> {
    let mut outs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let wq = tape.param(store, &format!("attn.wq.{h}"))?;
        let wk = tape.param(store, &format!("attn.wk.{h}"))?;
        let wv = tape.param(store, &format!("attn.wv.{h}"))?;
        let q = tape.matmul(x, wq)?;
        let k = tape.matmul(x, wk)?;
        let v = tape.matmul(x, wv)?;
        let (o, w) = scaled_dot_attention(tape, q, k, v, mask)?;
        outs.push(o);
        weights.push(w);
    }
    let cat = tape.concat_cols(&outs)?;
    let wo = tape.param(store, "attn.wo")?;
    Ok((tape.matmul(cat, wo)?, weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store(d: usize, heads: usize) -> ParameterStore {
        let mut s = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        init_attention(&mut Initializer::new(&mut s, &mut rng), d, heads).unwrap();
        s
    }

    #[test]
    fn mask_matches_displayed_matrix() {
        let m = causal_mask(4);
        let n = f64::NEG_INFINITY;
        let expect = [
            [0.0, n, n, n],
            [0.0, 0.0, n, n],
            [0.0, 0.0, 0.0, n],
            [0.0, 0.0, 0.0, 0.0],
        ];
        for (i, row) in expect.iter().enumerate() {
            assert_eq!(m.row_slice(i), row);
        }
        assert_eq!(causal_mask(1).data(), &[0.0]);
    }

    #[test]
    fn heads_must_divide() {
        assert!(head_width(8, 3).is_err());
        assert_eq!(head_width(198, 3).unwrap(), 66);
    }

    #[test]
    fn single_step_is_projected_values() {
        let s = store(6, 3);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::row(vec![0.1, -0.4, 0.9, 0.3, 0.0, -1.0]));
        let (out, _) = attention(&mut tape, &s, x, 3, Some(&causal_mask(1))).unwrap();
        let xv = tape.value(x).clone();
        let vs: Vec<Tensor> = (0..3)
            .map(|h| xv.matmul(s.value(&format!("attn.wv.{h}")).unwrap()))
            .collect();
        let cat: Vec<f64> = vs.iter().flat_map(|v| v.data().to_vec()).collect();
        let expect = Tensor::row(cat).matmul(s.value("attn.wo").unwrap());
        for (a, b) in tape.value(out).data().iter().zip(expect.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn weights_are_causal_distributions() {
        let s = store(4, 2);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(5, 4, (0..20).map(|i| (i as f64 * 0.37).sin()).collect()));
        let (_, ws) = attention(&mut tape, &s, x, 2, Some(&causal_mask(5))).unwrap();
        for w in ws {
            let w = tape.value(w);
            for i in 0..5 {
                assert!((w.row_slice(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(w.row_slice(i)[i + 1..].iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn permuting_future_keys_has_no_effect() {
        let s = store(4, 2);
        let base: Vec<Vec<f64>> = (0..5)
            .map(|r| (0..4).map(|c| ((r * 4 + c) as f64 * 0.61).cos()).collect())
            .collect();
        let run = |rows: &[Vec<f64>]| {
            let mut tape = Tape::new();
            let x = tape.constant(Tensor::from_rows(rows));
            let (o, _) = attention(&mut tape, &s, x, 2, Some(&causal_mask(5))).unwrap();
            tape.value(o).clone()
        };
        let a = run(&base);
        let mut perm = base.clone();
        perm.swap(3, 4);
        let b = run(&perm);
        for i in 0..3 {
            for (x, y) in a.row_slice(i).iter().zip(b.row_slice(i)) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
