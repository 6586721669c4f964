//! Allocation curve files and the refinement ladder.
//!
//! A curve file is comma-separated with a header naming at least `weight`;
//! `bin`, `parent` and `duration_s` are optional. Lines starting with `#`
//! are comments. Refined output uses `bin,parent,duration_s,weight` and
//! closes with a conservation footer, so it can be refined again.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use sigvwap::allocator::{
    base_curve, AllocationCurve, CurveSubAllocator, RefinedCurve, SubAllocator, UniformSubAllocator,
};
use sigvwap::nn::ParameterStore;
use sigvwap::Error;

pub const CONSERVATION_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct CurveFile {
    pub weights: Vec<f64>,
    pub durations_s: Option<Vec<u64>>,
}

pub fn parse_curve(text: &str) -> Result<CurveFile> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader.headers()?.clone();
    let col = |name: &str| header.iter().position(|h| h == name);
    let Some(wi) = col("weight") else {
        bail!("curve file has no `weight` column");
    };
    let di = col("duration_s");
    let mut weights = Vec::new();
    let mut durations = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let field = |j: usize| rec.get(j).unwrap_or("");
        let w: f64 = field(wi)
            .parse()
            .with_context(|| format!("row {}: bad weight {:?}", i + 1, field(wi)))?;
        weights.push(w);
        if let Some(j) = di {
            let d: u64 = field(j)
                .parse()
                .with_context(|| format!("row {}: bad duration {:?}", i + 1, field(j)))?;
            durations.push(d);
        }
    }
    if weights.is_empty() {
        bail!("curve file has no rows");
    }
    if let Err(e) = AllocationCurve::new(weights.clone()) {
        bail!("not an allocation curve: {e}");
    }
    Ok(CurveFile {
        weights,
        durations_s: di.map(|_| durations),
    })
}

pub fn read_curve(path: &Path) -> Result<CurveFile> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_curve(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn render_curve(weights: &[f64]) -> String {
    let mut out = String::from("bin,weight\n");
    for (i, w) in weights.iter().enumerate() {
        let _ = writeln!(out, "{i},{w}");
    }
    out
}

/// Leaf rows plus conservation footer; fails if any parent's mass or the
/// total drifts by more than [`CONSERVATION_TOL`].
pub fn render_refined(parent: &[f64], refined: &RefinedCurve) -> Result<String> {
    let mut mass = vec![0.0; parent.len()];
    for (&p, &w) in refined.parents.iter().zip(&refined.weights) {
        mass[p] += w;
    }
    let max_err = mass
        .iter()
        .zip(parent)
        .map(|(m, p)| (m - p).abs())
        .fold(0.0, f64::max);
    let total: f64 = refined.weights.iter().sum();
    let parent_total: f64 = parent.iter().sum();
    if max_err > CONSERVATION_TOL || (total - parent_total).abs() > CONSERVATION_TOL {
        return Err(Error::InvalidAllocation(format!(
            "refinement lost mass: per-bin error {max_err:e}, total {total} vs {parent_total}"
        ))
        .into());
    }
    let mut out = String::from("bin,parent,duration_s,weight\n");
    for i in 0..refined.weights.len() {
        let _ = writeln!(
            out,
            "{i},{},{},{}",
            refined.parents[i], refined.durations_s[i], refined.weights[i]
        );
    }
    let _ = writeln!(out, "# total = {total}");
    let _ = writeln!(out, "# parent_total = {parent_total}");
    let _ = writeln!(out, "# max_bin_error = {max_err:e}");
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub enum RungSource {
    Uniform(usize),
    Curve(PathBuf),
    Checkpoint(PathBuf),
}

/// Parses `SECS=uniform:N`, `SECS=curve:FILE` or `SECS=ckpt:STEM`.
pub fn parse_rung(raw: &str) -> Result<(u64, RungSource)> {
    let (secs, spec) = raw
        .split_once('=')
        .with_context(|| format!("rung {raw:?}: expected SECS=SPEC"))?;
    let secs: u64 = secs
        .trim()
        .parse()
        .with_context(|| format!("rung {raw:?}: bad duration"))?;
    let (kind, arg) = spec
        .split_once(':')
        .with_context(|| format!("rung {raw:?}: expected uniform:N, curve:FILE or ckpt:STEM"))?;
    let src = match kind {
        "uniform" => RungSource::Uniform(
            arg.parse()
                .with_context(|| format!("rung {raw:?}: bad bin count"))?,
        ),
        "curve" => RungSource::Curve(PathBuf::from(arg)),
        "ckpt" => RungSource::Checkpoint(PathBuf::from(arg)),
        _ => bail!("rung {raw:?}: unknown kind {kind:?}"),
    };
    Ok((secs, src))
}

/// Rungs found in a ladder directory: `<SECS>.csv` curve files and
/// `<SECS>.manifest` checkpoints.
pub fn scan_ladder(dir: &Path) -> Result<BTreeMap<u64, RungSource>> {
    let mut out = BTreeMap::new();
    let entries = std::fs::read_dir(dir).with_context(|| format!("reading ladder {}", dir.display()))?;
    for e in entries.flatten() {
        let p = e.path();
        let Some(secs) = p.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse::<u64>().ok()) else {
            continue;
        };
        match p.extension().and_then(|e| e.to_str()) {
            Some("csv") => {
                out.insert(secs, RungSource::Curve(p));
            }
            Some("manifest") => {
                out.insert(secs, RungSource::Checkpoint(p.with_extension("")));
            }
            _ => {}
        }
    }
    Ok(out)
}

pub fn build_sub_allocator(src: &RungSource) -> Result<Box<dyn SubAllocator>> {
    Ok(match src {
        RungSource::Uniform(n) => Box::new(UniformSubAllocator { bins: *n }),
        RungSource::Curve(p) => Box::new(CurveSubAllocator {
            curve: AllocationCurve::new(read_curve(p)?.weights).context("rung curve")?,
        }),
        RungSource::Checkpoint(stem) => {
            let store = ParameterStore::load(stem)
                .with_context(|| format!("loading rung checkpoint {}", stem.display()))?;
            Box::new(CurveSubAllocator {
                curve: AllocationCurve::new(base_curve(&store)?)?,
            })
        }
    })
}
