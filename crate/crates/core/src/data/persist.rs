//! Prepared-series files: a delimited table plus a `key = value` sidecar.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::Range;
use std::path::{Path, PathBuf};

use super::{NormalizedSeries, SplitRanges};
use crate::error::{Error, Result};
use crate::nn::params::write_atomic;

#[derive(Clone, Debug, PartialEq)]
pub struct PreparedMeta {
    pub asset_id: String,
    pub frequency: i64,
    pub warmup_len: usize,
    pub volume_scale: f64,
    pub median_window: usize,
    pub median_shift: usize,
    pub split: SplitRanges,
    pub feature_names: Vec<String>,
}

pub fn sidecar_path(table: &Path) -> PathBuf {
    table.with_extension("meta")
}

fn fmt_range(r: &Range<usize>) -> String {
    format!("{}..{}", r.start, r.end)
}

fn parse_range(s: &str) -> Option<Range<usize>> {
    let (a, b) = s.split_once("..")?;
    Some(a.trim().parse().ok()?..b.trim().parse().ok()?)
}

/// Writes `<table>` and its `.meta` sidecar; both via temp-file + rename.
pub fn write_prepared(table: &Path, series: &NormalizedSeries, meta: &PreparedMeta) -> Result<()> {
    let mut out = String::from("timestamp,close,volume");
    for name in &series.feature_names {
        out.push(',');
        out.push_str(name);
    }
    out.push_str(",excluded\n");
    for i in 0..series.len() {
        write!(out, "{},{},{}", series.timestamps[i], series.prices[i], series.volumes[i])
            .expect("string write");
        for v in series.row(i) {
            write!(out, ",{v}").expect("string write");
        }
        writeln!(out, ",{}", u8::from(series.excluded[i])).expect("string write");
    }

    let mut side = String::new();
    let kv = [
        ("asset_id", meta.asset_id.clone()),
        ("frequency", meta.frequency.to_string()),
        ("warmup_len", meta.warmup_len.to_string()),
        ("volume_scale", meta.volume_scale.to_string()),
        ("median_window", meta.median_window.to_string()),
        ("median_shift", meta.median_shift.to_string()),
        ("price_column", "close".to_string()),
        ("features", meta.feature_names.join(",")),
        ("split.train", fmt_range(&meta.split.train)),
        ("split.validation", fmt_range(&meta.split.validation)),
        ("split.test", fmt_range(&meta.split.test)),
    ];
    for (k, v) in kv {
        writeln!(side, "{k} = {v}").expect("string write");
    }
    write_atomic(table, out.as_bytes())?;
    write_atomic(&sidecar_path(table), side.as_bytes())
}

pub fn read_prepared(table: &Path) -> Result<(NormalizedSeries, PreparedMeta)> {
    let side_path = sidecar_path(table);
    let side = std::fs::read_to_string(&side_path).map_err(|e| Error::io(&side_path, e))?;
    let mut kv = BTreeMap::new();
    for (i, line) in side.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i + 1,
            message: format!("expected key = value in {}", side_path.display()),
        })?;
        kv.insert(k.trim().to_string(), v.trim().to_string());
    }
    let get = |k: &str| {
        kv.get(k).cloned().ok_or_else(|| Error::Parse {
            line: 0,
            message: format!("sidecar missing key {k}"),
        })
    };
    let num_err = |k: &str| Error::Parse {
        line: 0,
        message: format!("sidecar key {k} is malformed"),
    };
    let range = |k: &str| -> Result<Range<usize>> { parse_range(&get(k)?).ok_or_else(|| num_err(k)) };
    let meta = PreparedMeta {
        asset_id: get("asset_id")?,
        frequency: get("frequency")?.parse().map_err(|_| num_err("frequency"))?,
        warmup_len: get("warmup_len")?.parse().map_err(|_| num_err("warmup_len"))?,
        volume_scale: get("volume_scale")?.parse().map_err(|_| num_err("volume_scale"))?,
        median_window: get("median_window")?.parse().map_err(|_| num_err("median_window"))?,
        median_shift: get("median_shift")?.parse().map_err(|_| num_err("median_shift"))?,
        split: SplitRanges {
            train: range("split.train")?,
            validation: range("split.validation")?,
            test: range("split.test")?,
        },
        feature_names: get("features")?.split(',').map(str::to_string).collect(),
    };

    let text = std::fs::read_to_string(table).map_err(|e| Error::io(table, e))?;
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let d = meta.feature_names.len();
    let mut series = NormalizedSeries {
        asset_id: meta.asset_id.clone(),
        frequency: meta.frequency,
        feature_names: meta.feature_names.clone(),
        features: Vec::new(),
        timestamps: Vec::new(),
        prices: Vec::new(),
        volumes: Vec::new(),
        excluded: Vec::new(),
        warmup_len: meta.warmup_len,
        volume_scale: meta.volume_scale,
    };
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let bad = |m: &str| Error::Parse {
            line,
            message: m.to_string(),
        };
        let rec = rec.map_err(|e| bad(&e.to_string()))?;
        if rec.len() != d + 4 {
            return Err(bad(&format!("expected {} fields, got {}", d + 4, rec.len())));
        }
        let f = |j: usize| rec[j].parse::<f64>().map_err(|_| bad(&format!("bad number {:?}", &rec[j])));
        series
            .timestamps
            .push(rec[0].parse().map_err(|_| bad("bad timestamp"))?);
        series.prices.push(f(1)?);
        series.volumes.push(f(2)?);
        for j in 0..d {
            series.features.push(f(3 + j)?);
        }
        series.excluded.push(&rec[3 + d] == "1");
    }
    Ok((series, meta))
}
