//! Temporal backbone: per-variable embedding, variable selection, a TKAN
//! stack, a gated residual, a GRN and causal multi-head attention.
//!
//! Input is one sample's context, `T x V` where `V` counts raw features plus
//! any repeated signature coordinates; output is `T x d_model`.

pub mod attention;
pub mod kan;
pub mod tkan;
pub mod vsn;

use crate::error::{Error, Result};
use crate::nn::layers::{self, Initializer};
use crate::nn::spline::SplineGrid;
use crate::nn::{ParameterStore, Tape, Var};

pub use attention::{causal_mask, head_width};
pub use tkan::TkanShape;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BackboneConfig {
    /// Input variables per step (raw features plus signature columns).
    pub n_vars: usize,
    pub embed_width: usize,
    pub d_model: usize,
    pub heads: usize,
    pub tkan_layers: usize,
    pub sublayers: usize,
    pub kan_width: usize,
    pub grid: SplineGrid,
    /// `false` gives the recurrent-only backbone (no attention block).
    pub attention: bool,
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.n_vars == 0 {
            problems.push("n_vars must be positive".to_string());
        }
        if self.embed_width == 0 || self.d_model == 0 || self.kan_width == 0 {
            problems.push("layer widths must be positive".to_string());
        }
        if self.tkan_layers == 0 {
            problems.push("at least one TKAN layer is required".to_string());
        }
        if self.sublayers == 0 || self.sublayers > 8 {
            problems.push(format!("sublayers must be in 1..=8, got {}", self.sublayers));
        }
        if self.attention {
            if let Err(e) = head_width(self.d_model, self.heads) {
                problems.push(e.to_string());
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    pub fn tkan_shape(&self) -> TkanShape {
        TkanShape {
            input: self.d_model,
            hidden: self.d_model,
            sublayers: self.sublayers,
            kan_width: self.kan_width,
            grid: self.grid,
        }
    }
}

pub fn init_backbone(init: &mut Initializer, cfg: &BackboneConfig) -> Result<()> {
    cfg.validate()?;
    vsn::init_vsn(init, cfg.n_vars, cfg.embed_width, cfg.d_model)?;
    let shape = cfg.tkan_shape();
    for i in 0..cfg.tkan_layers {
        tkan::init_tkan(init, &format!("tkan.{i}"), &shape)?;
    }
    init.glu("post_gate", cfg.d_model, cfg.d_model)?;
    init.layer_norm("post_ln", cfg.d_model)?;
    init.grn("post_grn", cfg.d_model, cfg.d_model, cfg.d_model)?;
    if cfg.attention {
        attention::init_attention(init, cfg.d_model, cfg.heads)?;
    }
    Ok(())
}

pub struct BackboneOutput {
    /// Per-step context `a_t`, `T x d_model`.
    pub context: Var,
    /// Variable importance weights, `T x V`.
    pub importance: Var,
    pub attention_weights: Vec<Var>,
}

pub fn backbone_forward(
    tape: &mut Tape,
    store: &ParameterStore,
    cfg: &BackboneConfig,
    x: Var,
) -> Result<BackboneOutput> {
    let e = vsn::embed(tape, store, x, cfg.n_vars)?;
    let (s, importance) = vsn::vsn_forward(tape, store, &e)?;
    let shape = cfg.tkan_shape();
    let mut h = s;
    for i in 0..cfg.tkan_layers {
        h = tkan::tkan_sequence(tape, store, &format!("tkan.{i}"), &shape, h)?;
    }
    let gated = layers::glu(tape, store, h, "post_gate")?;
    let c = tape.add(s, gated)?;
    let c = layers::layer_norm(tape, store, c, "post_ln")?;
    let r = layers::grn(tape, store, c, "post_grn")?;
    if !cfg.attention {
        return Ok(BackboneOutput {
            context: r,
            importance,
            attention_weights: Vec::new(),
        });
    }
    let steps = tape.value(r).rows();
    let mask = causal_mask(steps);
    let (a, weights) = attention::attention(tape, store, r, cfg.heads, Some(&mask))?;
    Ok(BackboneOutput {
        context: a,
        importance,
        attention_weights: weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{check, probe_loss};
    use crate::nn::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(attention: bool) -> BackboneConfig {
        BackboneConfig {
            n_vars: 3,
            embed_width: 2,
            d_model: 8,
            heads: 2,
            tkan_layers: 2,
            sublayers: 2,
            kan_width: 3,
            grid: SplineGrid::new(-3.0, 3.0, 8),
            attention,
        }
    }

    fn store(c: &BackboneConfig, seed: u64) -> ParameterStore {
        let mut s = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        init_backbone(&mut Initializer::new(&mut s, &mut rng), c).unwrap();
        s
    }

    fn input(t: usize, v: usize, salt: f64) -> Tensor {
        Tensor::matrix(t, v, (0..t * v).map(|i| (i as f64 * 0.73 + salt).sin()).collect())
    }

    fn forward(s: &ParameterStore, c: &BackboneConfig, x: &Tensor) -> Tensor {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let out = backbone_forward(&mut tape, s, c, xv).unwrap();
        tape.value(out.context).clone()
    }

    #[test]
    fn output_shape() {
        let c = cfg(true);
        let s = store(&c, 0);
        let a = forward(&s, &c, &input(6, 3, 0.0));
        assert_eq!(a.shape(), &[6, 8]);
    }

    #[test]
    fn no_lookahead() {
        for attn in [true, false] {
            let c = cfg(attn);
            let s = store(&c, 1);
            let x = input(6, 3, 0.2);
            let base = forward(&s, &c, &x);
            for j in 0..6 {
                let mut y = x.clone();
                for r in j..6 {
                    for col in 0..3 {
                        y.set(r, col, y.get(r, col) * -1.7 + 0.4);
                    }
                }
                let out = forward(&s, &c, &y);
                for r in 0..j {
                    assert_eq!(base.row_slice(r), out.row_slice(r), "row {r} moved (j = {j})");
                }
            }
        }
    }

    #[test]
    fn config_validation() {
        let mut c = cfg(true);
        c.heads = 3;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        c.attention = false;
        assert!(c.validate().is_ok());
    }

    #[test]
    fn signature_columns_only_change_variable_count() {
        let without = cfg(true);
        let with = BackboneConfig { n_vars: without.n_vars + 5, ..without };
        let (a, b) = (store(&without, 2), store(&with, 2));
        assert_eq!(with.n_vars, without.n_vars + 5);
        let extra = b.len() - a.len();
        // each extra variable adds an embedder (w, b) and a full GRN
        let per_var_grn = a.names().iter().filter(|n| n.starts_with("vsn.var.0.")).count();
        assert_eq!(extra, 5 * (2 + per_var_grn));
        assert_eq!(forward(&b, &with, &input(4, 8, 0.5)).shape(), &[4, 8]);
    }

    #[test]
    fn full_chain_gradient() {
        let c = BackboneConfig { tkan_layers: 1, ..cfg(true) };
        let s = store(&c, 3);
        let x = input(6, 3, 1.1);
        let r = check(&s, 1e-6, 6, |tape, s| {
            let xv = tape.constant(x.clone());
            let out = backbone_forward(tape, s, &c, xv)?;
            probe_loss(tape, out.context, 4)
        })
        .unwrap();
        assert!(r.max_rel_err <= 1e-4, "{r:?}");
    }
}
