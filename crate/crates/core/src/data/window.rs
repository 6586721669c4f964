use std::ops::Range;

use super::NormalizedSeries;
use crate::error::{Error, Result};

/// Window geometry: signature lookback, local lookback, horizon and anchor stride.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowSpec {
    pub signature_len: usize,
    pub lookback: usize,
    pub horizon: usize,
    pub stride: usize,
}

impl WindowSpec {
    pub fn validate(&self) -> Result<()> {
        if self.lookback == 0 || self.signature_len < self.lookback {
            return Err(Error::InvalidArgument(format!(
                "need signature_len >= lookback >= 1, got {} and {}",
                self.signature_len, self.lookback
            )));
        }
        if self.horizon < 2 {
            return Err(Error::InvalidArgument(format!(
                "horizon must be at least 2, got {}",
                self.horizon
            )));
        }
        if self.stride == 0 {
            return Err(Error::InvalidArgument("stride must be at least 1".into()));
        }
        Ok(())
    }

    /// Rows spanned by one sample: signature lookback plus the horizon targets.
    pub fn span(&self) -> usize {
        self.signature_len + self.horizon
    }

    /// Rows in the local (model) window.
    pub fn local_len(&self) -> usize {
        self.lookback + self.horizon - 1
    }
}

/// One training example anchored at row `anchor` (the last observed bar).
#[derive(Clone, Debug, PartialEq)]
pub struct SampleWindow {
    pub asset_id: String,
    pub anchor: usize,
    pub anchor_timestamp: i64,
    pub dim: usize,
    /// Rows `anchor - signature_len + 1 ..= anchor`, row-major.
    pub signature_window: Vec<f64>,
    /// Rows `anchor - lookback + 1 ..= anchor + horizon - 1`, row-major.
    pub local_window: Vec<f64>,
    /// Raw close prices of horizon bins `1..=h` (rows `anchor + 1 ..= anchor + h`).
    pub target_prices: Vec<f64>,
    pub target_volumes: Vec<f64>,
}

impl SampleWindow {
    pub fn horizon(&self) -> usize {
        self.target_prices.len()
    }
}

/// Number of windows over a series of `n_rows` rows with no excluded rows.
pub fn expected_window_count(n_rows: usize, spec: &WindowSpec) -> usize {
    let span = spec.span();
    if n_rows < span {
        return 0;
    }
    (n_rows - span + 1).div_ceil(spec.stride)
}

pub fn make_windows(series: &NormalizedSeries, spec: &WindowSpec) -> Result<Vec<SampleWindow>> {
    make_windows_in(series, 0..series.len(), spec)
}

/// Windows lying entirely inside `range`.
///
/// Anchors sit on a grid shared by the whole series (`anchor ≡ signature_len - 1
/// mod stride`), so windows from different segments keep the same phase.
pub fn make_windows_in(
    series: &NormalizedSeries,
    range: Range<usize>,
    spec: &WindowSpec,
) -> Result<Vec<SampleWindow>> {
    spec.validate()?;
    let d = series.dim();
    let (ls, l, h) = (spec.signature_len, spec.lookback, spec.horizon);
    let range = range.start..range.end.min(series.len());
    let mut out = Vec::new();
    if range.len() < spec.span() {
        return Ok(out);
    }
    let first = range.start + ls - 1;
    let last = range.end - 1 - h;
    let offset = (ls - 1) % spec.stride;
    let mut t = first + (spec.stride + offset - first % spec.stride) % spec.stride;
    while t <= last {
        let lo = t + 1 - ls;
        debug_assert!(lo >= range.start && t + h < range.end);
        if !series.excluded[lo..=t + h].iter().any(|&e| e) {
            out.push(SampleWindow {
                asset_id: series.asset_id.clone(),
                anchor: t,
                anchor_timestamp: series.timestamps[t],
                dim: d,
                signature_window: series.features[lo * d..(t + 1) * d].to_vec(),
                local_window: series.features[(t + 1 - l) * d..(t + h) * d].to_vec(),
                target_prices: series.prices[t + 1..=t + h].to_vec(),
                target_volumes: series.volumes[t + 1..=t + h].to_vec(),
            });
        }
        t += spec.stride;
    }
    Ok(out)
}
