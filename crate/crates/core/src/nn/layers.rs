//! Primitive layers composed on a [`Tape`], each reading its weights from a
//! [`ParameterStore`] under a name prefix.
//!
//! Inputs are row-major `rows x features`; every layer maps rows independently
//! (`x · W + b`).

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::nn::params::ParameterStore;
use crate::nn::tape::{Tape, Var};
use crate::nn::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;

fn name(prefix: &str, leaf: &str) -> String {
    format!("{prefix}.{leaf}")
}

/// Registers freshly initialized weights in a store.
pub struct Initializer<'a> {
    pub store: &'a mut ParameterStore,
    pub rng: &'a mut ChaCha8Rng,
}

impl<'a> Initializer<'a> {
    pub fn new(store: &'a mut ParameterStore, rng: &'a mut ChaCha8Rng) -> Self {
        Self { store, rng }
    }

    /// Uniform on `±sqrt(6 / (fan_in + fan_out))`, scaled by `gain`.
    pub fn glorot(&mut self, full: &str, fan_in: usize, fan_out: usize, gain: f64) -> Result<()> {
        let limit = gain * (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| self.rng.gen_range(-limit..limit))
            .collect();
        self.store.insert(full, Tensor::matrix(fan_in, fan_out, data))
    }

    pub fn constant(&mut self, full: &str, shape: &[usize], value: f64) -> Result<()> {
        self.store.insert(full, Tensor::filled(shape, value))
    }

    pub fn dense(&mut self, prefix: &str, fan_in: usize, fan_out: usize) -> Result<()> {
        self.glorot(&name(prefix, "w"), fan_in, fan_out, 1.0)?;
        self.constant(&name(prefix, "b"), &[1, fan_out], 0.0)
    }

    pub fn dense_no_bias(&mut self, prefix: &str, fan_in: usize, fan_out: usize) -> Result<()> {
        self.glorot(&name(prefix, "w"), fan_in, fan_out, 1.0)
    }

    pub fn glu(&mut self, prefix: &str, fan_in: usize, width: usize) -> Result<()> {
        self.glorot(&name(prefix, "w4"), fan_in, width, 1.0)?;
        self.constant(&name(prefix, "b4"), &[1, width], 0.0)?;
        self.glorot(&name(prefix, "w5"), fan_in, width, 1.0)?;
        self.constant(&name(prefix, "b5"), &[1, width], 0.0)
    }

    pub fn layer_norm(&mut self, prefix: &str, width: usize) -> Result<()> {
        self.constant(&name(prefix, "gamma"), &[1, width], 1.0)?;
        self.constant(&name(prefix, "beta"), &[1, width], 0.0)
    }

    /// GRN with hidden width `hidden`; a bias-free skip projection is added
    /// when `input != output`.
    pub fn grn(&mut self, prefix: &str, input: usize, hidden: usize, output: usize) -> Result<()> {
        self.glorot(&name(prefix, "w2"), input, hidden, 1.0)?;
        self.constant(&name(prefix, "b2"), &[1, hidden], 0.0)?;
        self.glorot(&name(prefix, "w1"), hidden, output, 1.0)?;
        self.constant(&name(prefix, "b1"), &[1, output], 0.0)?;
        self.glu(&name(prefix, "glu"), output, output)?;
        if input != output {
            self.glorot(&name(prefix, "skip"), input, output, 1.0)?;
        }
        self.layer_norm(&name(prefix, "ln"), output)
    }
}

/// `x · W + b` with weights `{prefix}.w`, `{prefix}.b`.
pub fn dense(tape: &mut Tape, store: &ParameterStore, x: Var, prefix: &str) -> Result<Var> {
    let w = tape.param(store, &name(prefix, "w"))?;
    let b = tape.param(store, &name(prefix, "b"))?;
    let xw = tape.matmul(x, w)?;
    tape.add_row(xw, b)
}

/// `σ(x W4 + b4) ⊙ (x W5 + b5)`.
pub fn glu(tape: &mut Tape, store: &ParameterStore, x: Var, prefix: &str) -> Result<Var> {
    let w4 = tape.param(store, &name(prefix, "w4"))?;
    let b4 = tape.param(store, &name(prefix, "b4"))?;
    let w5 = tape.param(store, &name(prefix, "w5"))?;
    let b5 = tape.param(store, &name(prefix, "b5"))?;
    let gate = tape.matmul(x, w4)?;
    let gate = tape.add_row(gate, b4)?;
    let gate = tape.sigmoid(gate);
    let lin = tape.matmul(x, w5)?;
    let lin = tape.add_row(lin, b5)?;
    tape.mul(gate, lin)
}

pub fn layer_norm(tape: &mut Tape, store: &ParameterStore, x: Var, prefix: &str) -> Result<Var> {
    let g = tape.param(store, &name(prefix, "gamma"))?;
    let b = tape.param(store, &name(prefix, "beta"))?;
    tape.layer_norm(x, g, b, LAYER_NORM_EPS)
}

/// `LayerNorm(skip(x) + GLU(W1 · ELU(W2 x + b2) + b1))`, context-free.
pub fn grn(tape: &mut Tape, store: &ParameterStore, x: Var, prefix: &str) -> Result<Var> {
    let w2 = tape.param(store, &name(prefix, "w2"))?;
    let b2 = tape.param(store, &name(prefix, "b2"))?;
    let w1 = tape.param(store, &name(prefix, "w1"))?;
    let b1 = tape.param(store, &name(prefix, "b1"))?;
    let eta2 = tape.matmul(x, w2)?;
    let eta2 = tape.add_row(eta2, b2)?;
    let eta2 = tape.elu(eta2);
    let eta1 = tape.matmul(eta2, w1)?;
    let eta1 = tape.add_row(eta1, b1)?;
    let gated = glu(tape, store, eta1, &name(prefix, "glu"))?;
    let skip_name = name(prefix, "skip");
    let skip = if store.contains(&skip_name) {
        let ws = tape.param(store, &skip_name)?;
        tape.matmul(x, ws)?
    } else {
        x
    };
    let sum = tape.add(skip, gated)?;
    layer_norm(tape, store, sum, &name(prefix, "ln"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn zero_store(f: impl FnOnce(&mut Initializer)) -> ParameterStore {
        let mut store = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        f(&mut Initializer::new(&mut store, &mut rng));
        for (_, p) in store.iter_mut() {
            p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        store
    }

    #[test]
    fn dense_identity_and_bias() {
        let mut store = ParameterStore::new();
        store.insert("d.w", Tensor::identity(2)).unwrap();
        store.insert("d.b", Tensor::row(vec![3.0, 4.0])).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::row(vec![1.0, 2.0]));
        let y = dense(&mut tape, &store, x, "d").unwrap();
        assert_eq!(tape.value(y).data(), &[4.0, 6.0]);
        let bad = tape.constant(Tensor::row(vec![1.0, 2.0, 3.0]));
        assert!(dense(&mut tape, &store, bad, "d").is_err());
    }

    #[test]
    fn elu_points() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::row(vec![0.0, 1.0, -1.0]));
        let y = tape.elu(x);
        let v = tape.value(y).data();
        assert_eq!(v[0], 0.0);
        assert_eq!(v[1], 1.0);
        assert!((v[2] - (-0.632_120_558_828_557_7)).abs() < 1e-15);
    }

    #[test]
    fn glu_half_gate_and_saturation() {
        let mut store = zero_store(|i| i.glu("g", 2, 2).unwrap());
        store.set_value("g.w5", Tensor::identity(2)).unwrap();
        store.set_value("g.b5", Tensor::row(vec![1.0, -2.0])).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::row(vec![0.5, 0.25]));
        let y = glu(&mut tape, &store, x, "g").unwrap();
        assert_eq!(tape.value(y).data(), &[0.75, -0.875]);

        store.set_value("g.b4", Tensor::row(vec![-30.0, -30.0])).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::row(vec![0.5, 0.25]));
        let y = glu(&mut tape, &store, x, "g").unwrap();
        assert!(tape.value(y).data().iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn layer_norm_cases() {
        let store = {
            let mut s = zero_store(|i| i.layer_norm("ln", 2).unwrap());
            s.set_value("ln.gamma", Tensor::row(vec![1.0, 1.0])).unwrap();
            s
        };
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(2, 2, vec![3.0, 3.0, -1.0, 1.0]));
        let y = layer_norm(&mut tape, &store, x, "ln").unwrap();
        let v = tape.value(y).data();
        assert_eq!(&v[..2], &[0.0, 0.0]);
        let e = 1.0 / (1.0 + 1e-5f64).sqrt();
        assert!((v[2] + e).abs() < 1e-15 && (v[3] - e).abs() < 1e-15);
    }

    #[test]
    fn layer_norm_mean_equals_beta() {
        let mut store = ParameterStore::new();
        store.insert("ln.gamma", Tensor::row(vec![1.7; 4])).unwrap();
        store.insert("ln.beta", Tensor::row(vec![0.3, -0.1, 0.2, 0.4])).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::row(vec![2.0, -7.0, 0.5, 9.0]));
        let y = layer_norm(&mut tape, &store, x, "ln").unwrap();
        let mean = tape.value(y).sum() / 4.0;
        assert!((mean - 0.2).abs() <= 1e-10);
    }

    #[test]
    fn zero_grn_is_layer_norm() {
        let mut store = zero_store(|i| i.grn("g", 3, 3, 3).unwrap());
        store.set_value("g.ln.gamma", Tensor::row(vec![1.0; 3])).unwrap();
        let input = Tensor::matrix(2, 3, vec![1.0, 2.0, 4.0, -1.0, 0.0, 3.0]);
        let mut tape = Tape::new();
        let x = tape.constant(input.clone());
        let y = grn(&mut tape, &store, x, "g").unwrap();
        let out = tape.value(y).clone();
        assert_eq!(out.shape(), input.shape());
        let mut tape = Tape::new();
        let x = tape.constant(input);
        let z = layer_norm(&mut tape, &store, x, "g.ln").unwrap();
        assert_eq!(&out, tape.value(z));
    }
}
