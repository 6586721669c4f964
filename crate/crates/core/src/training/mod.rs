//! The training protocol: per-asset preparation, variant scopes, seed
//! matrices and warm-start fine-tuning.

pub mod config;
pub mod model;
pub mod trainer;

use crate::data::{
    make_windows_in, minmax_scale_volume, rolling_median_normalize, temporal_split, AssetSeries,
    Feature, NormalizedSeries, SampleWindow, SplitRanges,
};
use crate::error::{Error, Result};
use crate::evaluation::{report_tables, LossReport, Report, SampleEvaluation};

pub use config::{ExperimentConfig, Profile, Variant};
pub use model::{init_model, predict, ModelSpec};
pub use trainer::{
    evaluate, finetune_from, mean_loss, train, train_from, EpochLog, Policy, TrainOutcome, TrainState,
};

/// One asset's windows per split.
#[derive(Clone, Debug)]
pub struct AssetWindows {
    pub asset_id: String,
    pub frequency: i64,
    pub n_features: usize,
    pub train: Vec<SampleWindow>,
    pub validation: Vec<SampleWindow>,
    pub test: Vec<SampleWindow>,
    /// Training range windowed with the evaluation stride.
    pub train_eval: Vec<SampleWindow>,
}

impl AssetWindows {
    pub fn duration_min(&self, horizon: usize) -> u64 {
        (self.frequency.max(0) as u64 * horizon as u64) / 60
    }
}

/// Rolling-median normalization, temporal split and train-fitted volume
/// scaling.
pub fn prepare_series(series: &AssetSeries, cfg: &ExperimentConfig) -> Result<(NormalizedSeries, SplitRanges)> {
    let norm = rolling_median_normalize(series, cfg.median_window, cfg.median_shift, &Feature::default_set())?;
    let split = temporal_split(norm.len(), &cfg.split(), cfg.window().span())?;
    let scaled = minmax_scale_volume(&norm, &split)?;
    Ok((scaled, split))
}

pub fn window_asset(series: &NormalizedSeries, split: &SplitRanges, cfg: &ExperimentConfig) -> Result<AssetWindows> {
    let (tw, ew) = (cfg.window(), cfg.eval_window());
    let out = AssetWindows {
        asset_id: series.asset_id.clone(),
        frequency: series.frequency,
        n_features: series.dim(),
        train: make_windows_in(series, split.train.clone(), &tw)?,
        validation: make_windows_in(series, split.validation.clone(), &ew)?,
        test: make_windows_in(series, split.test.clone(), &ew)?,
        train_eval: make_windows_in(series, split.train.clone(), &ew)?,
    };
    if out.train.is_empty() {
        return Err(Error::TooShort {
            have: split.train.len(),
            need: tw.span(),
            detail: format!("asset {} has no complete training window", series.asset_id),
        });
    }
    Ok(out)
}

pub fn prepare_asset(series: &AssetSeries, cfg: &ExperimentConfig) -> Result<AssetWindows> {
    let (norm, split) = prepare_series(series, cfg)?;
    window_asset(&norm, &split, cfg)
}

/// A trained variant: one model for global scope, one per asset for AFD.
pub struct FittedVariant {
    pub config: ExperimentConfig,
    pub spec: ModelSpec,
    /// `(asset, outcome)`; the asset is `None` for a global model.
    pub models: Vec<(Option<String>, TrainOutcome)>,
}

impl FittedVariant {
    pub fn model_for(&self, asset: &str) -> Option<&TrainOutcome> {
        self.models
            .iter()
            .find(|(a, _)| a.as_deref().map_or(true, |a| a == asset))
            .map(|(_, m)| m)
    }
}

fn n_features(assets: &[AssetWindows]) -> Result<usize> {
    let d = assets
        .first()
        .ok_or_else(|| Error::InvalidArgument("no assets".into()))?
        .n_features;
    if assets.iter().any(|a| a.n_features != d) {
        return Err(Error::InvalidArgument("assets disagree on the feature set".into()));
    }
    Ok(d)
}

pub fn fit_variant(cfg: &ExperimentConfig, assets: &[AssetWindows]) -> Result<FittedVariant> {
    let spec = ModelSpec::new(cfg, n_features(assets)?)?;
    let mut models = Vec::new();
    if cfg.variant.per_asset() {
        for a in assets {
            let tr: Vec<&SampleWindow> = a.train.iter().collect();
            let va: Vec<&SampleWindow> = a.validation.iter().collect();
            models.push((Some(a.asset_id.clone()), train(cfg, &spec, &tr, &va)?));
        }
    } else {
        let tr: Vec<&SampleWindow> = assets.iter().flat_map(|a| &a.train).collect();
        let va: Vec<&SampleWindow> = assets.iter().flat_map(|a| &a.validation).collect();
        models.push((None, train(cfg, &spec, &tr, &va)?));
    }
    Ok(FittedVariant {
        config: cfg.clone(),
        spec,
        models,
    })
}

/// Train- and test-split evaluations of a fitted variant.
pub fn evaluate_variant(fitted: &FittedVariant, assets: &[AssetWindows]) -> Result<Vec<SampleEvaluation>> {
    let mut out = Vec::new();
    for a in assets {
        let m = fitted
            .model_for(&a.asset_id)
            .ok_or_else(|| Error::InvalidArgument(format!("no model for asset {}", a.asset_id)))?;
        let dur = a.duration_min(fitted.spec.horizon);
        for (split, ws) in [("train", &a.train_eval), ("test", &a.test)] {
            let refs: Vec<&SampleWindow> = ws.iter().collect();
            out.extend(evaluate(&m.store, &fitted.spec, &refs, split, dur)?);
        }
    }
    Ok(out)
}

pub struct MatrixResult {
    /// Per-seed evaluations, `(seed, samples)` for every variant.
    pub per_seed: Vec<(Variant, u64, Vec<SampleEvaluation>)>,
    /// Per-sample losses averaged over seeds.
    pub averaged: Vec<SampleEvaluation>,
    pub report: Report,
}

/// Averages absolute and quadratic model losses sample by sample across
/// seeds; naive losses are seed-independent.
pub fn average_over_seeds(runs: &[Vec<SampleEvaluation>]) -> Result<Vec<SampleEvaluation>> {
    let first = runs.first().ok_or_else(|| Error::InvalidArgument("no runs".into()))?;
    if runs.iter().any(|r| r.len() != first.len()) {
        return Err(Error::InvalidArgument("seed runs cover different samples".into()));
    }
    let k = runs.len() as f64;
    Ok((0..first.len())
        .map(|i| {
            let mean = |f: fn(&LossReport) -> f64| runs.iter().map(|r| f(&r[i].model)).sum::<f64>() / k;
            SampleEvaluation {
                model: LossReport {
                    signed: mean(|l| l.signed),
                    absolute: mean(|l| l.absolute),
                    quadratic: mean(|l| l.quadratic),
                },
                ..first[i].clone()
            }
        })
        .collect())
}

/// Trains and evaluates every config under every seed and reports the
/// seed-averaged comparison.
pub fn run_variant_matrix(configs: &[ExperimentConfig], seeds: &[u64], assets: &[AssetWindows]) -> Result<MatrixResult> {
    let mut per_seed = Vec::new();
    let mut averaged = Vec::new();
    let mut labels = Vec::new();
    for cfg in configs {
        let mut runs = Vec::new();
        for &seed in seeds {
            let c = ExperimentConfig { seed, ..cfg.clone() };
            let fitted = fit_variant(&c, assets)?;
            let ev = evaluate_variant(&fitted, assets)?;
            per_seed.push((cfg.variant, seed, ev.clone()));
            runs.push(ev);
        }
        averaged.extend(average_over_seeds(&runs)?);
        labels.push(cfg.variant.label().to_string());
    }
    let report = report_tables(&averaged, &labels);
    Ok(MatrixResult {
        per_seed,
        averaged,
        report,
    })
}
