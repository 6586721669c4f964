//! Training loop with plateau learning-rate halving, early stopping and
//! best-weight restoration; evaluation against the naive schedule.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::ExperimentConfig;
use super::model::{batch_gradients, init_model, predict, update_running_stats, ModelSpec};
use crate::allocator::{naive_allocation, AllocationCurve};
use crate::data::SampleWindow;
use crate::error::{Error, Result};
use crate::evaluation::{vwap_losses, ExecutionRecord, LossReport, SampleEvaluation};
use crate::nn::{adam_step, ParameterStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    /// `0` is the untrained state.
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub epoch: usize,
    pub best_validation: f64,
    pub best_epoch: usize,
    pub lr_wait: usize,
    pub stop_wait: usize,
    pub lr: f64,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub store: ParameterStore,
    pub history: Vec<EpochLog>,
    pub state: TrainState,
}

impl TrainOutcome {
    /// Delimited training log: `epoch,train_loss,validation_loss,lr`.
    pub fn log_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,validation_loss,lr\n");
        for h in &self.history {
            let _ = writeln!(out, "{},{},{},{}", h.epoch, h.train_loss, h.validation_loss, h.lr);
        }
        out
    }
}

/// Which schedule to score during evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Policy {
    Model,
    Naive,
    /// Peeks at realized volume fractions; a test-only lower bound.
    Oracle,
}

fn schedule(
    store: &ParameterStore,
    spec: &ModelSpec,
    w: &SampleWindow,
    policy: Policy,
) -> Result<AllocationCurve> {
    match policy {
        Policy::Model => predict(store, spec, w),
        Policy::Naive => naive_allocation(spec.horizon),
        Policy::Oracle => {
            let total: f64 = w.target_volumes.iter().sum();
            if total <= 0.0 {
                return Err(Error::ZeroVolume);
            }
            let mut q: Vec<f64> = w.target_volumes.iter().map(|v| v / total).collect();
            let head: f64 = q[..q.len() - 1].iter().sum();
            *q.last_mut().expect("non-empty") = 1.0 - head;
            AllocationCurve::new(q)
        }
    }
}

pub fn window_loss(
    store: &ParameterStore,
    spec: &ModelSpec,
    w: &SampleWindow,
    policy: Policy,
) -> Result<LossReport> {
    let q = schedule(store, spec, w, policy)?;
    let rec = ExecutionRecord::new(w.target_prices.clone(), w.target_volumes.clone(), q)?;
    vwap_losses(&rec)
}

/// Mean absolute deviation over `windows` (inference mode).
pub fn mean_loss(store: &ParameterStore, spec: &ModelSpec, windows: &[&SampleWindow], policy: Policy) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::InvalidArgument("no windows to evaluate".into()));
    }
    let losses: Vec<Result<LossReport>> = windows
        .par_iter()
        .map(|w| window_loss(store, spec, w, policy))
        .collect();
    let mut total = 0.0;
    for l in losses {
        total += l?.absolute;
    }
    Ok(total / windows.len() as f64)
}

fn batches(n: usize, size: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < n {
        let mut end = (start + size).min(n);
        // a trailing singleton would break train-mode normalization
        if n - end == 1 {
            end = n;
        }
        out.push((start, end));
        start = end;
    }
    out
}

fn finite_or_diverged(v: f64, epoch: usize, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Diverged {
            epoch,
            detail: format!("{what} is {v}"),
        })
    }
}

/// Minimizes the mean absolute deviation on `train`, monitoring `validation`.
/// Returns the weights of the best validation epoch (epoch 0 included).
pub fn train_from(
    cfg: &ExperimentConfig,
    spec: &ModelSpec,
    init: ParameterStore,
    train: &[&SampleWindow],
    validation: &[&SampleWindow],
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidArgument("no training windows".into()));
    }
    let validation = if validation.is_empty() { train } else { validation };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_7a11);
    let mut store = init;
    let mut adam = cfg.adam();
    let v0 = finite_or_diverged(mean_loss(&store, spec, validation, Policy::Model)?, 0, "validation loss")?;
    let t0 = finite_or_diverged(mean_loss(&store, spec, train, Policy::Model)?, 0, "training loss")?;
    let mut history = vec![EpochLog {
        epoch: 0,
        train_loss: t0,
        validation_loss: v0,
        lr: adam.lr,
    }];
    let mut state = TrainState {
        epoch: 0,
        best_validation: v0,
        best_epoch: 0,
        lr_wait: 0,
        stop_wait: 0,
        lr: adam.lr,
        seed: cfg.seed,
    };
    let mut best = store.clone();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut seen = 0.0;
        let mut total = 0.0;
        for (a, b) in batches(order.len(), cfg.batch_size) {
            let batch: Vec<&SampleWindow> = order[a..b].iter().map(|&i| train[i]).collect();
            let g = batch_gradients(&store, spec, &batch)?;
            finite_or_diverged(g.loss, epoch, "training loss")?;
            if let Some((name, _)) = g.grads.iter().find(|(_, t)| !t.all_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    detail: format!("gradient of {name} is not finite"),
                });
            }
            store.zero_grads();
            for (name, t) in &g.grads {
                store.accumulate_grad(name, t)?;
            }
            adam_step(&mut store, &adam);
            if let Some((mean, var)) = &g.signature_moments {
                update_running_stats(&mut store, mean, var)?;
            }
            total += g.loss * batch.len() as f64;
            seen += batch.len() as f64;
        }
        let train_loss = total / seen;
        let val = finite_or_diverged(
            mean_loss(&store, spec, validation, Policy::Model)?,
            epoch,
            "validation loss",
        )?;
        history.push(EpochLog {
            epoch,
            train_loss,
            validation_loss: val,
            lr: adam.lr,
        });
        state.epoch = epoch;
        if val < state.best_validation {
            state.best_validation = val;
            state.best_epoch = epoch;
            state.lr_wait = 0;
            state.stop_wait = 0;
            best = store.clone();
        } else {
            state.lr_wait += 1;
            state.stop_wait += 1;
            if state.lr_wait >= cfg.lr_patience {
                adam.lr = (adam.lr * cfg.lr_factor).max(cfg.min_lr.min(adam.lr));
                state.lr_wait = 0;
            }
            if state.stop_wait >= cfg.stop_patience {
                log::info!("early stop at epoch {epoch}, best epoch {}", state.best_epoch);
                break;
            }
        }
        state.lr = adam.lr;
        log::debug!("epoch {epoch}: train {train_loss:.6e} validation {val:.6e} lr {:.3e}", adam.lr);
    }
    let mut restored = best;
    restored.zero_grads();
    Ok(TrainOutcome {
        store: restored,
        history,
        state,
    })
}

/// Trains a freshly initialized model seeded by `cfg.seed`.
pub fn train(
    cfg: &ExperimentConfig,
    spec: &ModelSpec,
    train_windows: &[&SampleWindow],
    validation: &[&SampleWindow],
) -> Result<TrainOutcome> {
    let mut init = init_model(spec, cfg.seed)?;
    if !cfg.adjusters {
        crate::allocator::freeze_adjusters(&mut init, &spec.allocator)?;
    }
    train_from(cfg, spec, init, train_windows, validation)
}

/// Warm-starts from `base` with the learning rate scaled by `lr_scale`.
/// Optimizer moments restart from zero.
pub fn finetune_from(
    base: &ParameterStore,
    cfg: &ExperimentConfig,
    spec: &ModelSpec,
    lr_scale: f64,
    train_windows: &[&SampleWindow],
    validation: &[&SampleWindow],
) -> Result<TrainOutcome> {
    let reference = init_model(spec, cfg.seed)?;
    let same = reference.len() == base.len()
        && reference
            .iter()
            .zip(base.iter())
            .all(|((an, a), (bn, b))| an == bn && a.value.shape() == b.value.shape());
    if !same {
        return Err(Error::shape(
            "finetune_from",
            "base checkpoint does not match the target model structure",
        ));
    }
    let mut init = base.clone();
    init.step = 0;
    for (_, p) in init.iter_mut() {
        let shape = p.value.shape().to_vec();
        p.first_moment = Tensor::zeros(&shape);
        p.second_moment = Tensor::zeros(&shape);
        p.grad = Tensor::zeros(&shape);
    }
    let scaled = ExperimentConfig {
        learning_rate: cfg.learning_rate * lr_scale,
        min_lr: cfg.min_lr * lr_scale,
        ..cfg.clone()
    };
    train_from(&scaled, spec, init, train_windows, validation)
}

/// Scores the model and the naive split on every window.
pub fn evaluate(
    store: &ParameterStore,
    spec: &ModelSpec,
    windows: &[&SampleWindow],
    split: &str,
    duration_min: u64,
) -> Result<Vec<SampleEvaluation>> {
    windows
        .par_iter()
        .map(|w| {
            Ok(SampleEvaluation {
                variant: spec.variant.label().to_string(),
                split: split.to_string(),
                asset: w.asset_id.clone(),
                duration_min,
                model: window_loss(store, spec, w, Policy::Model)?,
                naive: window_loss(store, spec, w, Policy::Naive)?,
            })
        })
        .collect()
}
