//! The full model: optional signature context, backbone and allocator, with
//! batch-level gradients.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{ExperimentConfig, Variant};
use crate::allocator::{self, AllocationCurve, AllocatorConfig};
use crate::backbone::{self, BackboneConfig};
use crate::data::SampleWindow;
use crate::error::{Error, Result};
use crate::evaluation::market_vwap;
use crate::nn::layers::Initializer;
use crate::nn::spline::SplineGrid;
use crate::nn::{ParameterStore, Tape, Tensor, Var};
use crate::signature::{
    scale_path, signature_dim, truncated_signature, SIGNATURE_NORM_EPS, SIGNATURE_NORM_MOMENTUM,
};

pub const SIG_WEIGHTS: &str = "sig.w";
pub const SIG_GAMMA: &str = "sig.bn.gamma";
pub const SIG_BETA: &str = "sig.bn.beta";
pub const SIG_RUNNING_MEAN: &str = "sig.bn.running_mean";
pub const SIG_RUNNING_VAR: &str = "sig.bn.running_var";

/// Structural description of a model; two stores built from equal specs
/// hold identically named and shaped parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub variant: Variant,
    pub lookback: usize,
    pub signature_len: usize,
    pub horizon: usize,
    pub n_features: usize,
    pub signature_depth: usize,
    pub backbone: BackboneConfig,
    pub allocator: AllocatorConfig,
}

impl ModelSpec {
    pub fn new(cfg: &ExperimentConfig, n_features: usize) -> Result<Self> {
        cfg.validate()?;
        let m = if cfg.variant.signature() {
            signature_dim(n_features, cfg.signature_depth)
        } else {
            0
        };
        let backbone = BackboneConfig {
            n_vars: n_features + m,
            embed_width: cfg.embed_width,
            d_model: cfg.d_model,
            heads: cfg.heads,
            tkan_layers: cfg.tkan_layers,
            sublayers: cfg.sublayers,
            kan_width: cfg.kan_width,
            grid: SplineGrid::new(-cfg.grid_range, cfg.grid_range, cfg.grid_intervals),
            attention: cfg.variant.attention(),
        };
        backbone.validate()?;
        Ok(Self {
            variant: cfg.variant,
            lookback: cfg.lookback,
            signature_len: cfg.signature_len,
            horizon: cfg.horizon,
            n_features,
            signature_depth: cfg.signature_depth,
            backbone,
            allocator: AllocatorConfig {
                horizon: cfg.horizon,
                lookback: cfg.lookback,
                context_width: cfg.d_model,
                hidden: cfg.alloc_hidden,
            },
        })
    }

    pub fn signature_width(&self) -> usize {
        self.backbone.n_vars - self.n_features
    }

    pub fn uses_signature(&self) -> bool {
        self.signature_width() > 0
    }

    fn check_window(&self, w: &SampleWindow) -> Result<()> {
        let d = self.n_features;
        let ok = w.dim == d
            && w.local_window.len() == (self.lookback + self.horizon - 1) * d
            && w.signature_window.len() == self.signature_len * d
            && w.target_prices.len() == self.horizon
            && w.target_volumes.len() == self.horizon;
        if ok {
            Ok(())
        } else {
            Err(Error::shape(
                "model input",
                format!("window at anchor {} does not match the model shape", w.anchor),
            ))
        }
    }
}

pub fn init_model(spec: &ModelSpec, seed: u64) -> Result<ParameterStore> {
    let mut store = ParameterStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut init = Initializer::new(&mut store, &mut rng);
    if spec.uses_signature() {
        let m = spec.signature_width();
        init.constant(SIG_WEIGHTS, &[spec.signature_len, spec.n_features], 1.0)?;
        init.constant(SIG_GAMMA, &[1, m], 1.0)?;
        init.constant(SIG_BETA, &[1, m], 0.0)?;
        init.store.insert_buffer(SIG_RUNNING_MEAN, Tensor::zeros(&[1, m]))?;
        init.store.insert_buffer(SIG_RUNNING_VAR, Tensor::filled(&[1, m], 1.0))?;
    }
    backbone::init_backbone(&mut init, &spec.backbone)?;
    allocator::init_allocator(&mut init, &spec.allocator)?;
    Ok(store)
}

/// Signature of the learnably scaled long window, before normalization.
pub fn raw_signature(store: &ParameterStore, spec: &ModelSpec, w: &SampleWindow) -> Result<Vec<f64>> {
    let weights = store.value(SIG_WEIGHTS)?;
    let path = scale_path(weights.data(), &w.signature_window)?;
    Ok(truncated_signature(&path, spec.n_features, spec.signature_depth)?.into_coeffs())
}

/// Inference-mode normalization with the running statistics.
pub fn normalize_infer(store: &ParameterStore, raw: &[f64]) -> Result<Vec<f64>> {
    let g = store.value(SIG_GAMMA)?.data();
    let b = store.value(SIG_BETA)?.data();
    let mu = store.value(SIG_RUNNING_MEAN)?.data();
    let var = store.value(SIG_RUNNING_VAR)?.data();
    Ok((0..raw.len())
        .map(|j| g[j] * (raw[j] - mu[j]) / (var[j] + SIGNATURE_NORM_EPS).sqrt() + b[j])
        .collect())
}

/// Price relatives `P_t / VWAP` so that the deviation is `Σ rel_t v_t − 1`.
fn price_relatives(w: &SampleWindow) -> Result<Vec<f64>> {
    let vwap = market_vwap(&w.target_prices, &w.target_volumes)?;
    if vwap == 0.0 {
        return Err(Error::ZeroVwap);
    }
    Ok(w.target_prices.iter().map(|p| p / vwap).collect())
}

pub struct SampleGraph {
    pub volumes: Var,
    /// Absolute relative deviation from market VWAP.
    pub loss: Var,
}

/// Wires one sample onto `tape`; `sig` is the sample's normalized signature
/// row when the model uses one.
pub fn sample_graph(
    tape: &mut Tape,
    store: &ParameterStore,
    spec: &ModelSpec,
    w: &SampleWindow,
    sig: Option<Var>,
) -> Result<SampleGraph> {
    spec.check_window(w)?;
    let rows = spec.lookback + spec.horizon - 1;
    let local = tape.constant(Tensor::matrix(rows, spec.n_features, w.local_window.clone()));
    let x = match sig {
        Some(s) => {
            let rep = tape.concat_rows(&vec![s; rows])?;
            tape.concat_cols(&[local, rep])?
        }
        None => local,
    };
    let out = backbone::backbone_forward(tape, store, &spec.backbone, x)?;
    let alloc = allocator::allocate(tape, store, &spec.allocator, out.context)?;
    let rel = tape.constant(Tensor::row(price_relatives(w)?));
    let weighted = tape.mul(alloc.volumes, rel)?;
    let exec = tape.sum(weighted);
    let dev = tape.add_scalar(exec, -1.0);
    let loss = tape.abs(dev);
    Ok(SampleGraph {
        volumes: alloc.volumes,
        loss,
    })
}

/// Forward-only allocation for one window (inference normalization).
pub fn predict(store: &ParameterStore, spec: &ModelSpec, w: &SampleWindow) -> Result<AllocationCurve> {
    let mut tape = Tape::new();
    let sig = if spec.uses_signature() {
        let s = normalize_infer(store, &raw_signature(store, spec, w)?)?;
        Some(tape.constant(Tensor::row(s)))
    } else {
        None
    };
    let g = sample_graph(&mut tape, store, spec, w, sig)?;
    AllocationCurve::new(tape.value(g.volumes).data().to_vec())
}

/// Mean loss and gradients over one training batch.
pub struct BatchGradients {
    pub loss: f64,
    pub grads: Vec<(String, Tensor)>,
    /// Batch signature moments to fold into the running statistics.
    pub signature_moments: Option<(Vec<f64>, Vec<f64>)>,
}

struct SampleResult {
    loss: f64,
    grads: Vec<(String, Tensor)>,
    sig_grad: Option<Tensor>,
}

pub fn batch_gradients(
    store: &ParameterStore,
    spec: &ModelSpec,
    batch: &[&SampleWindow],
) -> Result<BatchGradients> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let scale = 1.0 / n as f64;

    // Batch-level graph: scaled paths → signatures → batch normalization.
    let mut sig_tape = Tape::new();
    let mut sig_rows: Option<(Var, Tensor)> = None;
    let mut moments = None;
    if spec.uses_signature() {
        let w = sig_tape.param(store, SIG_WEIGHTS)?;
        let mut sigs = Vec::with_capacity(n);
        for s in batch {
            spec.check_window(s)?;
            let path = sig_tape.constant(Tensor::matrix(
                spec.signature_len,
                spec.n_features,
                s.signature_window.clone(),
            ));
            let scaled = sig_tape.mul(path, w)?;
            sigs.push(sig_tape.signature(scaled, spec.signature_depth)?);
        }
        let stacked = sig_tape.concat_rows(&sigs)?;
        let gamma = sig_tape.param(store, SIG_GAMMA)?;
        let beta = sig_tape.param(store, SIG_BETA)?;
        let (normed, mean, var) = sig_tape.batch_norm(stacked, gamma, beta, SIGNATURE_NORM_EPS)?;
        sig_rows = Some((normed, sig_tape.value(normed).clone()));
        moments = Some((mean, var));
    }

    let results: Vec<Result<SampleResult>> = batch
        .par_iter()
        .enumerate()
        .map(|(i, w)| {
            let mut tape = Tape::new();
            let sig = sig_rows
                .as_ref()
                .map(|(_, rows)| tape.variable(Tensor::row(rows.row_slice(i).to_vec())));
            let g = sample_graph(&mut tape, store, spec, w, sig)?;
            let loss = tape.scalar_value(g.loss);
            let scaled = tape.scale(g.loss, scale);
            let mut grads = tape.backward(scaled)?;
            let sig_grad = sig.map(|s| {
                grads
                    .take(s)
                    .unwrap_or_else(|| Tensor::zeros(&[1, spec.signature_width()]))
            });
            Ok(SampleResult {
                loss,
                grads: tape.param_grads(&grads),
                sig_grad,
            })
        })
        .collect();

    let mut total = 0.0;
    let mut acc: HashMap<String, Tensor> = HashMap::new();
    let mut order: Vec<String> = Vec::new();
    let mut add = |name: String, g: Tensor, acc: &mut HashMap<String, Tensor>| match acc.get_mut(&name) {
        Some(t) => t.add_assign(&g),
        None => {
            order.push(name.clone());
            acc.insert(name, g);
        }
    };
    let mut seed_rows = Vec::new();
    for r in results {
        let r = r?;
        total += r.loss;
        for (name, g) in r.grads {
            add(name, g, &mut acc);
        }
        if let Some(g) = r.sig_grad {
            seed_rows.extend_from_slice(g.data());
        }
    }
    if let Some((normed, _)) = sig_rows {
        let seed = Tensor::matrix(n, spec.signature_width(), seed_rows);
        let grads = sig_tape.backward_from(&[(normed, seed)]);
        for (name, g) in sig_tape.param_grads(&grads) {
            add(name, g, &mut acc);
        }
    }
    let grads = order
        .into_iter()
        .map(|name| {
            let g = acc.remove(&name).expect("accumulated");
            (name, g)
        })
        .collect();
    Ok(BatchGradients {
        loss: total * scale,
        grads,
        signature_moments: moments,
    })
}

/// Folds batch moments into the running statistics.
pub fn update_running_stats(store: &mut ParameterStore, mean: &[f64], var: &[f64]) -> Result<()> {
    let k = SIGNATURE_NORM_MOMENTUM;
    for (name, batch) in [(SIG_RUNNING_MEAN, mean), (SIG_RUNNING_VAR, var)] {
        let p = store.get_mut(name)?;
        for (r, b) in p.value.data_mut().iter_mut().zip(batch) {
            *r = k * *r + (1.0 - k) * b;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::check;

    fn cfg(variant: Variant) -> ExperimentConfig {
        ExperimentConfig {
            lookback: 4,
            signature_len: 6,
            horizon: 3,
            d_model: 6,
            heads: 2,
            embed_width: 2,
            kan_width: 2,
            alloc_hidden: [4, 3],
            signature_depth: 2,
            ..ExperimentConfig::tiny(variant)
        }
    }

    fn window(spec: &ModelSpec, salt: f64) -> SampleWindow {
        let d = spec.n_features;
        let f = |n: usize, k: f64| (0..n).map(|i| ((i as f64 + salt) * k).sin() * 0.5).collect::<Vec<_>>();
        SampleWindow {
            asset_id: "A".into(),
            anchor: 0,
            anchor_timestamp: 0,
            dim: d,
            signature_window: f(spec.signature_len * d, 0.7),
            local_window: f((spec.lookback + spec.horizon - 1) * d, 1.3),
            target_prices: (0..spec.horizon).map(|i| 100.0 + (i as f64 + salt).cos()).collect(),
            target_volumes: (0..spec.horizon).map(|i| 1.0 + ((i as f64 * 2.0 + salt).sin()).abs()).collect(),
        }
    }

    #[test]
    fn signature_toggle_changes_only_variable_count() {
        let a = ModelSpec::new(&cfg(Variant::Gft), 2).unwrap();
        let b = ModelSpec::new(&cfg(Variant::GftSig), 2).unwrap();
        assert_eq!(b.backbone.n_vars, a.backbone.n_vars + signature_dim(2, 2));
        assert_eq!(BackboneConfig { n_vars: a.backbone.n_vars, ..b.backbone }, a.backbone);
    }

    #[test]
    fn predicted_curve_is_valid() {
        for v in Variant::ALL {
            let spec = ModelSpec::new(&cfg(v), 2).unwrap();
            let s = init_model(&spec, 1).unwrap();
            let c = predict(&s, &spec, &window(&spec, 0.3)).unwrap();
            assert_eq!(c.len(), 3);
        }
    }

    #[test]
    fn batch_gradient_matches_finite_differences() {
        let spec = ModelSpec::new(&cfg(Variant::GftSig), 2).unwrap();
        let mut store = init_model(&spec, 2).unwrap();
        // move off the initial symmetric point
        for name in [SIG_GAMMA, SIG_BETA] {
            let v = store.value(name).unwrap().map(|x| x + 0.1);
            store.set_value(name, v).unwrap();
        }
        // and give the adjusters enough gain for well-conditioned differences
        let names: Vec<String> = store.names().iter().filter(|n| n.ends_with(".l3.w")).map(|n| n.to_string()).collect();
        for name in names {
            let v = store.value(&name).unwrap().scale(20.0);
            store.set_value(&name, v).unwrap();
        }
        let ws: Vec<SampleWindow> = (0..3).map(|i| window(&spec, i as f64 * 0.9)).collect();
        let refs: Vec<&SampleWindow> = ws.iter().collect();
        let analytic: HashMap<String, Tensor> =
            batch_gradients(&store, &spec, &refs).unwrap().grads.into_iter().collect();

        // the numeric side rebuilds the same batch through a single tape
        let r = check(&store, 1e-6, 4, |tape, s| {
            let w = tape.param(s, SIG_WEIGHTS)?;
            let mut sigs = Vec::new();
            for x in &ws {
                let p = tape.constant(Tensor::matrix(6, 2, x.signature_window.clone()));
                let sc = tape.mul(p, w)?;
                sigs.push(tape.signature(sc, 2)?);
            }
            let st = tape.concat_rows(&sigs)?;
            let g = tape.param(s, SIG_GAMMA)?;
            let b = tape.param(s, SIG_BETA)?;
            let (nrm, _, _) = tape.batch_norm(st, g, b, SIGNATURE_NORM_EPS)?;
            let mut losses = Vec::new();
            for (i, x) in ws.iter().enumerate() {
                let row = tape.slice_rows(nrm, i, 1)?;
                losses.push(sample_graph(tape, s, &spec, x, Some(row))?.loss);
            }
            let all = tape.concat_cols(&losses)?;
            Ok(tape.mean(all))
        })
        .unwrap();
        assert!(r.max_rel_err < 1e-4, "{r:?}");

        // and the split-tape gradients agree with the single-tape ones
        let mut tape = Tape::new();
        let w = tape.param(&store, SIG_WEIGHTS).unwrap();
        let mut sigs = Vec::new();
        for x in &ws {
            let p = tape.constant(Tensor::matrix(6, 2, x.signature_window.clone()));
            let sc = tape.mul(p, w).unwrap();
            sigs.push(tape.signature(sc, 2).unwrap());
        }
        let st = tape.concat_rows(&sigs).unwrap();
        let g = tape.param(&store, SIG_GAMMA).unwrap();
        let b = tape.param(&store, SIG_BETA).unwrap();
        let (nrm, _, _) = tape.batch_norm(st, g, b, SIGNATURE_NORM_EPS).unwrap();
        let mut losses = Vec::new();
        for (i, x) in ws.iter().enumerate() {
            let row = tape.slice_rows(nrm, i, 1).unwrap();
            losses.push(sample_graph(&mut tape, &store, &spec, x, Some(row)).unwrap().loss);
        }
        let all = tape.concat_cols(&losses).unwrap();
        let loss = tape.mean(all);
        let grads = tape.backward(loss).unwrap();
        for (name, g) in tape.param_grads(&grads) {
            let a = &analytic[&name];
            for (x, y) in a.data().iter().zip(g.data()) {
                assert!((x - y).abs() <= 1e-12 * (1.0 + y.abs()), "{name}");
            }
        }
    }
}
