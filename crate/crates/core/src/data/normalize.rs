use super::{AssetSeries, NormalizedSeries, SplitRanges};
use crate::error::{Error, Result};

/// Per-bar model inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Feature {
    /// `ln(P_t / P_{t-1})`.
    LogReturn,
    /// Volume over its shifted rolling median, later min-max scaled.
    Volume,
}

impl Feature {
    pub fn name(self) -> &'static str {
        match self {
            Feature::LogReturn => "log_return",
            Feature::Volume => "volume",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "log_return" => Some(Feature::LogReturn),
            "volume" => Some(Feature::Volume),
            _ => None,
        }
    }

    pub fn default_set() -> Vec<Feature> {
        vec![Feature::LogReturn, Feature::Volume]
    }
}

fn median(buf: &mut [f64]) -> f64 {
    buf.sort_by(|a, b| a.partial_cmp(b).expect("finite volumes"));
    let n = buf.len();
    if n % 2 == 1 {
        buf[n / 2]
    } else {
        0.5 * (buf[n / 2 - 1] + buf[n / 2])
    }
}

/// Divides each volume by the median of the `window_bars` raw volumes ending
/// `shift_bars` before it: `v_t / median(v[t-shift-window+1 ..= t-shift])`.
///
/// The first `window_bars + shift_bars` bars are dropped. Rows whose median is
/// zero, and forward-filled bars, are marked excluded.
pub fn rolling_median_normalize(
    series: &AssetSeries,
    window_bars: usize,
    shift_bars: usize,
    features: &[Feature],
) -> Result<NormalizedSeries> {
    if window_bars == 0 {
        return Err(Error::InvalidArgument("median window must be at least 1 bar".into()));
    }
    if features.is_empty() {
        return Err(Error::InvalidArgument("feature set is empty".into()));
    }
    let warmup = window_bars + shift_bars;
    let n = series.len();
    if n <= warmup {
        return Err(Error::TooShort {
            have: n,
            need: warmup + 1,
            detail: format!("median window {window_bars} + shift {shift_bars}"),
        });
    }
    let raw_v = series.volumes();
    let raw_p = series.prices();
    let d = features.len();
    let rows = n - warmup;
    let mut out = NormalizedSeries {
        asset_id: series.asset_id.clone(),
        frequency: series.frequency,
        feature_names: features.iter().map(|f| f.name().to_string()).collect(),
        features: Vec::with_capacity(rows * d),
        timestamps: Vec::with_capacity(rows),
        prices: Vec::with_capacity(rows),
        volumes: Vec::with_capacity(rows),
        excluded: Vec::with_capacity(rows),
        warmup_len: warmup,
        volume_scale: 1.0,
    };
    let mut buf = vec![0.0; window_bars];
    for t in warmup..n {
        let end = t - shift_bars;
        buf.copy_from_slice(&raw_v[end + 1 - window_bars..=end]);
        let med = median(&mut buf);
        let mut excluded = series.filled[t];
        let norm_v = if med > 0.0 {
            raw_v[t] / med
        } else {
            excluded = true;
            0.0
        };
        for f in features {
            out.features.push(match f {
                Feature::LogReturn => (raw_p[t] / raw_p[t - 1]).ln(),
                Feature::Volume => norm_v,
            });
        }
        out.timestamps.push(series.bars[t].timestamp);
        out.prices.push(raw_p[t]);
        out.volumes.push(raw_v[t]);
        out.excluded.push(excluded);
    }
    Ok(out)
}

/// Divides the volume feature by its maximum over the training rows.
pub fn minmax_scale_volume(series: &NormalizedSeries, ranges: &SplitRanges) -> Result<NormalizedSeries> {
    let train = ranges.train.clone();
    if train.is_empty() || train.end > series.len() {
        return Err(Error::InvalidArgument(format!(
            "training segment {train:?} is empty or outside the series"
        )));
    }
    let Some(vi) = series.feature_index(Feature::Volume.name()) else {
        return Ok(series.clone());
    };
    let d = series.dim();
    let max = train
        .filter(|&i| !series.excluded[i])
        .map(|i| series.features[i * d + vi])
        .fold(0.0f64, f64::max);
    if max <= 0.0 {
        return Err(Error::DegenerateVolume);
    }
    let mut out = series.clone();
    for i in 0..out.len() {
        out.features[i * d + vi] /= max;
    }
    out.volume_scale = series.volume_scale * max;
    Ok(out)
}
