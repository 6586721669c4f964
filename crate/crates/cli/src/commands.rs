use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use log::{info, warn};
use sigvwap::allocator::{base_curve, refine_bins, REFINE_THRESHOLD_S};
use sigvwap::data::{load_series, synthesize_market, ColumnSchema, PreparedMeta, SampleWindow, SynthProfile};
use sigvwap::evaluation::{report_tables, samples_from_csv, samples_to_csv, SampleEvaluation};
use sigvwap::training::{
    average_over_seeds, evaluate, fit_variant, model::raw_signature, predict, prepare_series, AssetWindows,
    ExperimentConfig, ModelSpec, Variant,
};

use crate::curves::{self, RungSource};
use crate::workspace::{self, Checkpoint, GLOBAL_STEM};
use crate::{Cli, Command};

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Bars per asset.
    #[arg(long, default_value_t = 7200)]
    pub bars: usize,
    /// Number of assets; each draws from `seed + index`.
    #[arg(long, default_value_t = 1)]
    pub assets: usize,
    /// Log-amplitude of the intraday volume shape.
    #[arg(long, default_value_t = 1.0)]
    pub amplitude: f64,
    /// Bar duration in seconds.
    #[arg(long, default_value_t = 3600)]
    pub frequency: i64,
    /// Destination directory; defaults to `<out>/raw`.
    #[arg(long)]
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// Raw bar files; the asset id is the file stem.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, default_value = "timestamp")]
    pub timestamp_col: String,
    #[arg(long, default_value = "close")]
    pub price_col: String,
    #[arg(long, default_value = "volume")]
    pub volume_col: String,
    /// Field delimiter (a single byte).
    #[arg(long, default_value_t = ',')]
    pub delimiter: char,
    /// Longest gap, in bars, that is filled instead of rejected.
    #[arg(long, default_value_t = 24)]
    pub max_gap_bars: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Prepared data directory; defaults to `<out>/prepared`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Train once per seed of the `seeds` config key instead of `seed`.
    #[arg(long)]
    pub all_seeds: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Prepared data directory; defaults to `<out>/prepared`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Comma-separated variants; defaults to the configured variant.
    #[arg(long, value_delimiter = ',')]
    pub variants: Vec<String>,
    /// Also write raw signature vectors of every evaluated window.
    #[arg(long)]
    pub dump_signatures: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Per-sample loss file; defaults to `<out>/evaluation/losses.csv`.
    #[arg(long)]
    pub losses: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BacktestArgs {
    /// Prepared data directory; defaults to `<out>/prepared`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Split to replay: train, validation or test.
    #[arg(long, default_value = "test")]
    pub split: String,
}

#[derive(Debug, Args)]
pub struct RefineArgs {
    /// Parent allocation curve file.
    #[arg(long)]
    pub parent: PathBuf,
    /// Duration of each parent bin when the file has no `duration_s` column.
    #[arg(long)]
    pub bin_seconds: Option<u64>,
    /// Bins longer than this many seconds are split.
    #[arg(long, default_value_t = REFINE_THRESHOLD_S)]
    pub threshold: u64,
    /// Sub-allocator for one bin duration: SECS=uniform:N, SECS=curve:FILE or SECS=ckpt:STEM.
    #[arg(long = "rung")]
    pub rungs: Vec<String>,
    /// Directory of `<SECS>.csv` curves and `<SECS>.manifest` checkpoints.
    #[arg(long)]
    pub ladder: Option<PathBuf>,
    /// Output file; defaults to `<out>/refine/refined.csv`.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = crate::settings::resolve(&cli.global, std::env::vars())?;
    if cfg.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build_global()
            .context("configuring worker pool")?;
    }
    let out = cli.global.out.as_path();
    match cli.command {
        Command::Synth(a) => synth(&cfg, out, &a),
        Command::Prepare(a) => prepare(&cfg, out, &a),
        Command::Train(a) => train(&cfg, out, &a),
        Command::Evaluate(a) => evaluate_cmd(&cfg, out, &a),
        Command::Report(a) => report(&cfg, out, &a),
        Command::Backtest(a) => backtest(&cfg, out, &a),
        Command::Refine(a) => refine(out, &a),
    }
}

fn synth(cfg: &ExperimentConfig, out: &Path, a: &SynthArgs) -> Result<()> {
    let dir = a.dir.clone().unwrap_or_else(|| out.join("raw"));
    let mut files = Vec::new();
    for i in 0..a.assets {
        let profile = SynthProfile {
            asset_id: format!("SYN{i}"),
            amplitude: a.amplitude,
            frequency: a.frequency,
            ..SynthProfile::default()
        };
        let series = synthesize_market(cfg.seed.wrapping_add(i as u64), a.bars, &profile);
        let mut text = String::from("timestamp,close,volume\n");
        for b in &series.bars {
            let _ = writeln!(text, "{},{},{}", b.timestamp, b.price, b.volume);
        }
        files.push((dir.join(format!("{}.csv", profile.asset_id)), text));
    }
    for (path, text) in &files {
        workspace::write_file(path, text.as_bytes())?;
        info!("wrote {}", path.display());
    }
    workspace::write_snapshot(&dir, cfg)
}

fn prepare(cfg: &ExperimentConfig, out: &Path, a: &PrepareArgs) -> Result<()> {
    if !a.delimiter.is_ascii() {
        bail!("delimiter must be a single ASCII character");
    }
    let schema = ColumnSchema {
        timestamp: a.timestamp_col.clone(),
        price: a.price_col.clone(),
        volume: a.volume_col.clone(),
        delimiter: a.delimiter as u8,
        max_gap_bars: a.max_gap_bars,
    };
    let mut prepared = Vec::new();
    let mut gaps = String::from("asset,after_timestamp,missing_bars\n");
    let mut seen = BTreeMap::new();
    for path in &a.inputs {
        let asset = path
            .file_stem()
            .and_then(|s| s.to_str())
            .with_context(|| format!("cannot derive an asset id from {}", path.display()))?
            .to_string();
        if let Some(prev) = seen.insert(asset.clone(), path.clone()) {
            bail!("asset {asset} given twice ({} and {})", prev.display(), path.display());
        }
        let series = load_series(path, &asset, &schema).with_context(|| format!("loading {}", path.display()))?;
        for g in &series.gaps {
            let _ = writeln!(gaps, "{asset},{},{}", g.after, g.missing_bars);
        }
        if !series.gaps.is_empty() {
            let bars: usize = series.gaps.iter().map(|g| g.missing_bars).sum();
            warn!("{asset}: {} gap(s), {bars} filled bar(s); windows touching them are excluded", series.gaps.len());
        }
        let (norm, split) = prepare_series(&series, cfg).with_context(|| format!("preparing {asset}"))?;
        let meta = PreparedMeta {
            asset_id: asset.clone(),
            frequency: norm.frequency,
            warmup_len: norm.warmup_len,
            volume_scale: norm.volume_scale,
            median_window: cfg.median_window,
            median_shift: cfg.median_shift,
            split,
            feature_names: norm.feature_names.clone(),
        };
        prepared.push((asset, norm, meta));
    }
    let dir = workspace::prepared_dir(out);
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    for (asset, norm, meta) in &prepared {
        let table = dir.join(format!("{asset}.csv"));
        sigvwap::data::write_prepared(&table, norm, meta)?;
        info!("{asset}: {} rows -> {}", norm.len(), table.display());
    }
    workspace::write_file(&dir.join("gaps.csv"), gaps.as_bytes())?;
    workspace::write_snapshot(&dir, cfg)
}

fn data_dir(out: &Path, explicit: &Option<PathBuf>) -> PathBuf {
    explicit.clone().unwrap_or_else(|| workspace::prepared_dir(out))
}

fn train(cfg: &ExperimentConfig, out: &Path, a: &TrainArgs) -> Result<()> {
    let assets = workspace::load_windows(&data_dir(out, &a.data), cfg)?;
    let seeds = if a.all_seeds { cfg.seeds.clone() } else { vec![cfg.seed] };
    for seed in seeds {
        let c = ExperimentConfig { seed, ..cfg.clone() };
        info!(
            "training {} seed {seed} on {} asset(s), {} window(s)",
            c.variant,
            assets.len(),
            assets.iter().map(|a| a.train.len()).sum::<usize>()
        );
        let fitted = fit_variant(&c, &assets)?;
        let dir = workspace::seed_dir(out, c.variant, seed);
        let mut index = Vec::new();
        for (asset, outcome) in &fitted.models {
            let (key, stem, log) = match asset {
                Some(id) => (id.clone(), id.clone(), format!("train_log_{id}.csv")),
                None => ("*".to_string(), GLOBAL_STEM.to_string(), "train_log.csv".to_string()),
            };
            std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            outcome.store.save(&dir.join(&stem))?;
            workspace::write_file(&dir.join(log), outcome.log_csv().as_bytes())?;
            info!(
                "{key}: best validation loss {:.6} after {} epoch(s)",
                outcome.state.best_validation,
                outcome.history.len().saturating_sub(1)
            );
            index.push((key, stem));
        }
        workspace::write_snapshot(&dir, &c)?;
        Checkpoint::write_index(&dir, &index)?;
    }
    Ok(())
}

fn split_windows<'a>(asset: &'a AssetWindows, split: &str) -> Result<&'a [SampleWindow]> {
    Ok(match split {
        "train" => &asset.train_eval,
        "validation" => &asset.validation,
        "test" => &asset.test,
        _ => bail!("unknown split {split:?} (train, validation, test)"),
    })
}

fn evaluate_checkpoint(ckpt: &Checkpoint, assets: &[AssetWindows], spec: &ModelSpec) -> Result<Vec<SampleEvaluation>> {
    let mut out = Vec::new();
    for a in assets {
        let store = ckpt.load_store(&a.asset_id)?;
        let dur = a.duration_min(spec.horizon);
        for split in ["train", "test"] {
            let refs: Vec<&SampleWindow> = split_windows(a, split)?.iter().collect();
            out.extend(evaluate(&store, spec, &refs, split, dur)?);
        }
    }
    Ok(out)
}

fn dump_signatures(ckpt: &Checkpoint, assets: &[AssetWindows], spec: &ModelSpec) -> Result<String> {
    let mut text = String::from("asset,split,anchor_timestamp");
    for j in 0..spec.signature_width() {
        let _ = write!(text, ",s{j}");
    }
    text.push('\n');
    for a in assets {
        let store = ckpt.load_store(&a.asset_id)?;
        for split in ["train", "test"] {
            for w in split_windows(a, split)? {
                let _ = write!(text, "{},{split},{}", a.asset_id, w.anchor_timestamp);
                for v in raw_signature(&store, spec, w)? {
                    let _ = write!(text, ",{v}");
                }
                text.push('\n');
            }
        }
    }
    Ok(text)
}

fn requested_variants(cfg: &ExperimentConfig, names: &[String]) -> Result<Vec<Variant>> {
    if names.is_empty() {
        return Ok(vec![cfg.variant]);
    }
    Ok(names.iter().map(|n| n.parse()).collect::<sigvwap::Result<_>>()?)
}

fn evaluate_cmd(cfg: &ExperimentConfig, out: &Path, a: &EvaluateArgs) -> Result<()> {
    let variants = requested_variants(cfg, &a.variants)?;
    let data = data_dir(out, &a.data);
    let ckpts: Vec<(Variant, Vec<Checkpoint>)> = variants
        .iter()
        .map(|&v| Ok((v, workspace::checkpoints(out, v)?)))
        .collect::<Result<_>>()?;
    let dir = out.join("evaluation");
    let mut all = Vec::new();
    let mut labels = Vec::new();
    let mut dumps = Vec::new();
    for (variant, seeds) in &ckpts {
        let mut runs = Vec::new();
        for ckpt in seeds {
            let assets = workspace::load_windows(&data, &ckpt.config)?;
            let n = assets.first().map_or(0, |a| a.n_features);
            let spec = ModelSpec::new(&ckpt.config, n)?;
            runs.push(evaluate_checkpoint(ckpt, &assets, &spec)?);
            if a.dump_signatures && spec.uses_signature() {
                dumps.push((
                    dir.join(format!("signatures_{}_seed-{}.csv", variant.label(), ckpt.seed)),
                    dump_signatures(ckpt, &assets, &spec)?,
                ));
            }
        }
        info!("{variant}: averaged {} seed(s)", runs.len());
        all.extend(average_over_seeds(&runs)?);
        labels.push(variant.label().to_string());
    }
    let report = report_tables(&all, &labels);
    workspace::write_file(&dir.join("losses.csv"), samples_to_csv(&all).as_bytes())?;
    workspace::write_file(&dir.join("report.txt"), report.render_text().as_bytes())?;
    workspace::write_file(&dir.join("report.csv"), report.render_csv().as_bytes())?;
    for (path, text) in &dumps {
        workspace::write_file(path, text.as_bytes())?;
    }
    workspace::write_snapshot(&dir, cfg)?;
    print!("{}", report.render_text());
    Ok(())
}

fn report(cfg: &ExperimentConfig, out: &Path, a: &ReportArgs) -> Result<()> {
    let path = a
        .losses
        .clone()
        .unwrap_or_else(|| out.join("evaluation").join("losses.csv"));
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let samples = samples_from_csv(&text).with_context(|| format!("parsing {}", path.display()))?;
    let mut labels: Vec<String> = Vec::new();
    for s in &samples {
        if !labels.contains(&s.variant) {
            labels.push(s.variant.clone());
        }
    }
    let report = report_tables(&samples, &labels);
    let dir = out.join("report");
    workspace::write_file(&dir.join("report.txt"), report.render_text().as_bytes())?;
    workspace::write_file(&dir.join("report.csv"), report.render_csv().as_bytes())?;
    workspace::write_snapshot(&dir, cfg)?;
    print!("{}", report.render_text());
    Ok(())
}

fn backtest(cfg: &ExperimentConfig, out: &Path, a: &BacktestArgs) -> Result<()> {
    let ckpt = workspace::checkpoint(out, cfg.variant, cfg.seed)?;
    let assets = workspace::load_windows(&data_dir(out, &a.data), &ckpt.config)?;
    let n = assets.first().map_or(0, |a| a.n_features);
    let spec = ModelSpec::new(&ckpt.config, n)?;
    let mut text = String::from("asset,anchor_timestamp,bin,weight,naive,market\n");
    let dir = out.join("backtest").join(cfg.variant.label());
    let mut bases = Vec::new();
    for asset in &assets {
        let store = ckpt.load_store(&asset.asset_id)?;
        let h = spec.horizon;
        for w in split_windows(asset, &a.split)? {
            let curve = predict(&store, &spec, w)?;
            let total: f64 = w.target_volumes.iter().sum();
            for (t, v) in curve.weights().iter().enumerate() {
                let market = if total > 0.0 { w.target_volumes[t] / total } else { 0.0 };
                let _ = writeln!(text, "{},{},{t},{v},{},{market}", asset.asset_id, w.anchor_timestamp, 1.0 / h as f64);
            }
        }
        let stem = if ckpt.models.iter().any(|(k, _)| k == "*") {
            "base_curve".to_string()
        } else {
            format!("base_curve_{}", asset.asset_id)
        };
        if !bases.iter().any(|(s, _)| s == &stem) {
            bases.push((stem, curves::render_curve(&base_curve(&store)?)));
        }
    }
    workspace::write_file(&dir.join("curves.csv"), text.as_bytes())?;
    for (stem, body) in &bases {
        workspace::write_file(&dir.join(format!("{stem}.csv")), body.as_bytes())?;
    }
    workspace::write_snapshot(&dir, &ckpt.config)
}

fn refine(out: &Path, a: &RefineArgs) -> Result<()> {
    let raw = std::fs::read(&a.parent).with_context(|| format!("reading {}", a.parent.display()))?;
    let text = String::from_utf8(raw.clone()).with_context(|| format!("{} is not UTF-8", a.parent.display()))?;
    let parent = curves::parse_curve(&text).with_context(|| format!("parsing {}", a.parent.display()))?;
    let durations = match (&parent.durations_s, a.bin_seconds) {
        (Some(d), _) => d.clone(),
        (None, Some(s)) => vec![s; parent.weights.len()],
        (None, None) => bail!("{} has no duration_s column; pass --bin-seconds", a.parent.display()),
    };

    let mut sources: BTreeMap<u64, RungSource> = match &a.ladder {
        Some(dir) => curves::scan_ladder(dir)?,
        None => BTreeMap::new(),
    };
    for r in &a.rungs {
        let (secs, src) = curves::parse_rung(r)?;
        sources.insert(secs, src);
    }
    let mut ladder = BTreeMap::new();
    for (secs, src) in &sources {
        ladder.insert(*secs, curves::build_sub_allocator(src)?);
    }

    let body = if durations.iter().all(|&d| d <= a.threshold) {
        info!("no bin exceeds {} s; parent returned unchanged", a.threshold);
        raw
    } else {
        let refined = refine_bins(&parent.weights, &durations, a.threshold, &ladder)?;
        info!("{} parent bin(s) -> {} leaf bin(s)", parent.weights.len(), refined.weights.len());
        curves::render_refined(&parent.weights, &refined)?.into_bytes()
    };
    let path = a
        .output
        .clone()
        .unwrap_or_else(|| out.join("refine").join("refined.csv"));
    workspace::write_file(&path, &body)?;

    let mut snap = format!("parent = {}\nthreshold = {}\n", a.parent.display(), a.threshold);
    if let Some(s) = a.bin_seconds {
        let _ = writeln!(snap, "bin_seconds = {s}");
    }
    for (secs, src) in &sources {
        let _ = writeln!(snap, "rung.{secs} = {src:?}");
    }
    let snap_path = path.with_file_name(format!(
        "{}.config.txt",
        path.file_stem().and_then(|s| s.to_str()).unwrap_or("refined")
    ));
    workspace::write_file(&snap_path, snap.as_bytes())
}
