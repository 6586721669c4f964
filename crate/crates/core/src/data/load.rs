use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};
use log::warn;

use super::{AssetSeries, Gap, MarketBar};
use crate::error::{Error, Result};

/// Maps file columns to bar fields.
#[derive(Clone, Debug, PartialEq)]
pub struct ColumnSchema {
    pub timestamp: String,
    pub price: String,
    pub volume: String,
    pub delimiter: u8,
    /// Gaps longer than this many bars are an error rather than filled.
    pub max_gap_bars: usize,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        Self {
            timestamp: "timestamp".into(),
            price: "close".into(),
            volume: "volume".into(),
            delimiter: b',',
            max_gap_bars: 24,
        }
    }
}

pub fn load_series(path: &Path, asset_id: &str, schema: &ColumnSchema) -> Result<AssetSeries> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_series(&text, asset_id, schema)
}

fn parse_timestamp(raw: &str) -> Option<i64> {
    let raw = raw.trim();
    if let Ok(v) = raw.parse::<i64>() {
        return Some(v);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(raw) {
        return Some(dt.timestamp());
    }
    for fmt in ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(raw, fmt) {
            return Some(dt.and_utc().timestamp());
        }
    }
    None
}

/// Parses delimited text with a header row into a uniformly spaced series.
///
/// Rows are sorted by timestamp; on duplicate timestamps the later row wins.
/// The bar frequency is the modal spacing.
pub fn parse_series(text: &str, asset_id: &str, schema: &ColumnSchema) -> Result<AssetSeries> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            line: 1,
            message: format!("missing column {name:?}"),
        })
    };
    let (ti, pi, vi) = (col(&schema.timestamp)?, col(&schema.price)?, col(&schema.volume)?);

    let mut by_ts: BTreeMap<i64, MarketBar> = BTreeMap::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        let field = |idx: usize| rec.get(idx).unwrap_or("");
        let timestamp = parse_timestamp(field(ti)).ok_or_else(|| Error::Parse {
            line,
            message: format!("bad timestamp {:?}", field(ti)),
        })?;
        let num = |idx: usize, what: &str| -> Result<f64> {
            field(idx).parse::<f64>().map_err(|_| Error::Parse {
                line,
                message: format!("bad {what} {:?}", field(idx)),
            })
        };
        let price = num(pi, "price")?;
        let volume = num(vi, "volume")?;
        if !(price.is_finite() && price > 0.0) {
            return Err(Error::Parse {
                line,
                message: format!("price must be finite and positive, got {price}"),
            });
        }
        if !(volume.is_finite() && volume >= 0.0) {
            return Err(Error::Parse {
                line,
                message: format!("volume must be finite and non-negative, got {volume}"),
            });
        }
        if by_ts
            .insert(
                timestamp,
                MarketBar {
                    timestamp,
                    price,
                    volume,
                },
            )
            .is_some()
        {
            warn!("{asset_id}: duplicate timestamp {timestamp} at line {line}; keeping the later row");
        }
    }
    if by_ts.is_empty() {
        return Err(Error::EmptySeries);
    }
    let raw: Vec<MarketBar> = by_ts.into_values().collect();
    regularize(asset_id, raw, schema.max_gap_bars)
}

fn modal_spacing(bars: &[MarketBar]) -> i64 {
    let mut counts: HashMap<i64, usize> = HashMap::new();
    for w in bars.windows(2) {
        *counts.entry(w[1].timestamp - w[0].timestamp).or_default() += 1;
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(spacing, _)| spacing)
        .unwrap_or(0)
}

fn regularize(asset_id: &str, raw: Vec<MarketBar>, max_gap_bars: usize) -> Result<AssetSeries> {
    let frequency = modal_spacing(&raw);
    if raw.len() == 1 {
        return Ok(AssetSeries::from_bars(asset_id, raw, 0));
    }
    let mut bars = Vec::with_capacity(raw.len());
    let mut filled = Vec::with_capacity(raw.len());
    let mut gaps = Vec::new();
    let mut oversized = Vec::new();
    bars.push(raw[0]);
    filled.push(false);
    for w in raw.windows(2) {
        let (prev, next) = (w[0], w[1]);
        let delta = next.timestamp - prev.timestamp;
        if delta % frequency != 0 {
            return Err(Error::Parse {
                line: 0,
                message: format!(
                    "{asset_id}: spacing {delta} s after {} is not a multiple of {frequency} s",
                    prev.timestamp
                ),
            });
        }
        let missing = (delta / frequency - 1) as usize;
        if missing > 0 {
            let gap = Gap {
                after: prev.timestamp,
                missing_bars: missing,
            };
            if missing > max_gap_bars {
                oversized.push(gap);
            }
            gaps.push(gap);
            for k in 1..=missing {
                bars.push(MarketBar {
                    timestamp: prev.timestamp + k as i64 * frequency,
                    price: prev.price,
                    volume: 0.0,
                });
                filled.push(true);
            }
        }
        bars.push(next);
        filled.push(false);
    }
    if let Some(first) = oversized.first() {
        return Err(Error::Gaps {
            asset: asset_id.to_string(),
            count: oversized.len(),
            first: first.after,
        });
    }
    if !gaps.is_empty() {
        warn!(
            "{asset_id}: filled {} gap(s), {} bar(s) total",
            gaps.len(),
            gaps.iter().map(|g| g.missing_bars).sum::<usize>()
        );
    }
    Ok(AssetSeries {
        asset_id: asset_id.to_string(),
        bars,
        frequency,
        filled,
        gaps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> ColumnSchema {
        ColumnSchema::default()
    }

    #[test]
    fn three_hourly_rows() {
        let text = "timestamp,close,volume\n0,10,1\n3600,11,2\n7200,12,3\n";
        let s = parse_series(text, "BTC", &schema()).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.frequency, 3600);
        assert_eq!(s.bars[2].price, 12.0);
    }

    #[test]
    fn duplicate_timestamp_last_wins() {
        let text = "timestamp,close,volume\n0,10,1\n3600,11,2\n3600,99,5\n7200,12,3\n";
        let s = parse_series(text, "BTC", &schema()).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.bars[1].price, 99.0);
    }

    #[test]
    fn unsorted_rows_sorted() {
        let text = "timestamp,close,volume\n7200,12,3\n0,10,1\n3600,11,2\n";
        let s = parse_series(text, "X", &schema()).unwrap();
        let ts: Vec<i64> = s.bars.iter().map(|b| b.timestamp).collect();
        assert_eq!(ts, vec![0, 3600, 7200]);
    }

    #[test]
    fn empty_file() {
        let err = parse_series("timestamp,close,volume\n", "X", &schema()).unwrap_err();
        assert_eq!(err.to_string(), "empty series");
    }

    #[test]
    fn malformed_row_names_line() {
        let text = "timestamp,close,volume\n0,10,1\n3600,abc,2\n";
        match parse_series(text, "X", &schema()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        let text = "timestamp,close,volume\n0,-1,1\n";
        assert!(parse_series(text, "X", &schema()).is_err());
    }

    #[test]
    fn iso_timestamps() {
        let text = "timestamp,close,volume\n2024-01-01T00:00:00Z,1,1\n2024-01-01 01:00:00,1,1\n";
        let s = parse_series(text, "X", &schema()).unwrap();
        assert_eq!(s.frequency, 3600);
        assert_eq!(s.bars[0].timestamp, 1_704_067_200);
    }

    #[test]
    fn small_gaps_filled_large_gaps_reported() {
        let text = "timestamp,close,volume\n0,10,1\n3600,11,2\n14400,12,3\n18000,13,1\n";
        let s = parse_series(text, "X", &schema()).unwrap();
        assert_eq!(s.len(), 6);
        assert_eq!(s.filled, vec![false, false, true, true, false, false]);
        assert_eq!(s.bars[2].price, 11.0);
        assert_eq!(s.bars[3].volume, 0.0);
        assert_eq!(s.gaps, vec![Gap { after: 3600, missing_bars: 2 }]);

        let tight = ColumnSchema {
            max_gap_bars: 1,
            ..schema()
        };
        assert!(matches!(parse_series(text, "X", &tight), Err(Error::Gaps { .. })));
    }

    #[test]
    fn custom_columns_and_delimiter() {
        let text = "t;px;vol\n0;1;2\n60;1;2\n";
        let s = ColumnSchema {
            timestamp: "t".into(),
            price: "px".into(),
            volume: "vol".into(),
            delimiter: b';',
            max_gap_bars: 0,
        };
        assert_eq!(parse_series(text, "X", &s).unwrap().frequency, 60);
        assert!(parse_series(text, "X", &schema()).is_err());
    }
}
