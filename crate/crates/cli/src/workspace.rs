//! Output layout and the files exchanged between subcommands.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use sigvwap::data::{read_prepared, NormalizedSeries, PreparedMeta};
use sigvwap::nn::params::write_atomic;
use sigvwap::nn::ParameterStore;
use sigvwap::training::{window_asset, AssetWindows, ExperimentConfig, Variant};

pub const CONFIG_SNAPSHOT: &str = "config.txt";
pub const MODEL_INDEX: &str = "models.txt";
pub const GLOBAL_STEM: &str = "model";

pub fn prepared_dir(out: &Path) -> PathBuf {
    out.join("prepared")
}

pub fn variant_dir(out: &Path, variant: Variant) -> PathBuf {
    out.join("checkpoints").join(variant.label())
}

pub fn seed_dir(out: &Path, variant: Variant, seed: u64) -> PathBuf {
    variant_dir(out, variant).join(format!("seed-{seed}"))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    write_atomic(path, bytes)?;
    Ok(())
}

pub fn write_snapshot(dir: &Path, cfg: &ExperimentConfig) -> Result<()> {
    write_file(&dir.join(CONFIG_SNAPSHOT), cfg.to_text().as_bytes())
}

/// Prepared tables in `dir`, sorted by file name.
pub fn load_prepared(dir: &Path) -> Result<Vec<(NormalizedSeries, PreparedMeta)>> {
    let entries = std::fs::read_dir(dir).with_context(|| {
        format!("reading prepared data in {} (run `sigvwap prepare` first)", dir.display())
    })?;
    let mut tables: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "csv") && p.with_extension("meta").exists())
        .collect();
    tables.sort();
    if tables.is_empty() {
        bail!("no prepared series in {} (run `sigvwap prepare` first)", dir.display());
    }
    tables
        .iter()
        .map(|t| read_prepared(t).with_context(|| format!("loading {}", t.display())))
        .collect()
}

/// Windows every prepared asset under `cfg`; the normalization recorded at
/// preparation time must match the config.
pub fn load_windows(dir: &Path, cfg: &ExperimentConfig) -> Result<Vec<AssetWindows>> {
    let mut out = Vec::new();
    for (series, meta) in load_prepared(dir)? {
        if meta.median_window != cfg.median_window || meta.median_shift != cfg.median_shift {
            return Err(sigvwap::Error::Config(vec![format!(
                "{} was prepared with median_window {} and median_shift {}, config has {} and {}; re-run prepare",
                meta.asset_id, meta.median_window, meta.median_shift, cfg.median_window, cfg.median_shift
            )])
            .into());
        }
        out.push(window_asset(&series, &meta.split, cfg)?);
    }
    Ok(out)
}

/// A trained seed directory: its config and `(asset, stem)` entries, where
/// asset `*` is a global model.
pub struct Checkpoint {
    pub dir: PathBuf,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub models: Vec<(String, String)>,
}

impl Checkpoint {
    pub fn write_index(dir: &Path, models: &[(String, String)]) -> Result<()> {
        let mut text = String::new();
        for (asset, stem) in models {
            text.push_str(&format!("{asset} {stem}\n"));
        }
        write_file(&dir.join(MODEL_INDEX), text.as_bytes())
    }

    pub fn open(dir: &Path) -> Result<Self> {
        let config = crate::settings::load_snapshot(&dir.join(CONFIG_SNAPSHOT))?;
        let index = dir.join(MODEL_INDEX);
        let text = std::fs::read_to_string(&index)
            .with_context(|| format!("reading {}", index.display()))?;
        let mut models = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let Some((asset, stem)) = line.split_once(' ') else {
                bail!("malformed line in {}: {line:?}", index.display());
            };
            models.push((asset.to_string(), stem.to_string()));
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            seed: config.seed,
            config,
            models,
        })
    }

    pub fn stem_for(&self, asset: &str) -> Result<PathBuf> {
        self.models
            .iter()
            .find(|(a, _)| a == "*" || a == asset)
            .map(|(_, s)| self.dir.join(s))
            .with_context(|| format!("checkpoint {} has no model for asset {asset}", self.dir.display()))
    }

    pub fn load_store(&self, asset: &str) -> Result<ParameterStore> {
        let stem = self.stem_for(asset)?;
        ParameterStore::load(&stem).with_context(|| format!("loading checkpoint {}", stem.display()))
    }
}

/// Every `seed-*` checkpoint of a variant, in seed order.
pub fn checkpoints(out: &Path, variant: Variant) -> Result<Vec<Checkpoint>> {
    let dir = variant_dir(out, variant);
    let mut found = Vec::new();
    if let Ok(entries) = std::fs::read_dir(&dir) {
        for e in entries.flatten() {
            let p = e.path();
            let is_seed = p
                .file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("seed-"));
            if is_seed && p.join(MODEL_INDEX).exists() {
                found.push(Checkpoint::open(&p)?);
            }
        }
    }
    if found.is_empty() {
        bail!(
            "no checkpoint for variant {} under {} (run `sigvwap train --variant {}` first)",
            variant.label(),
            dir.display(),
            variant.label()
        );
    }
    found.sort_by_key(|c| c.seed);
    Ok(found)
}

pub fn checkpoint(out: &Path, variant: Variant, seed: u64) -> Result<Checkpoint> {
    let dir = seed_dir(out, variant, seed);
    if !dir.join(MODEL_INDEX).exists() {
        bail!(
            "no checkpoint for variant {} seed {seed} at {} (run `sigvwap train` first)",
            variant.label(),
            dir.display()
        );
    }
    Checkpoint::open(&dir)
}
