//! Bar ingestion, normalization, temporal splitting and dual-scale windowing.

mod load;
mod normalize;
mod persist;
mod split;
mod synth;
mod window;

pub use load::{load_series, parse_series, ColumnSchema};
pub use normalize::{minmax_scale_volume, rolling_median_normalize, Feature};
pub use persist::{read_prepared, write_prepared, PreparedMeta};
pub use split::{temporal_split, SplitRanges, SplitSpec};
pub use synth::{synthesize_market, SynthProfile};
pub use window::{expected_window_count, make_windows, make_windows_in, SampleWindow, WindowSpec};

/// One timestamped observation; `price` is the bar close.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarketBar {
    pub timestamp: i64,
    pub price: f64,
    pub volume: f64,
}

/// A run of missing bars that was filled in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Gap {
    /// Timestamp of the last real bar before the gap.
    pub after: i64,
    pub missing_bars: usize,
}

/// Uniformly spaced bars of one asset.
///
/// Missing bars are forward-filled for price and zero-filled for volume;
/// `filled[i]` marks them so windows touching them can be excluded.
#[derive(Clone, Debug, PartialEq)]
pub struct AssetSeries {
    pub asset_id: String,
    pub bars: Vec<MarketBar>,
    /// Bar duration in seconds.
    pub frequency: i64,
    pub filled: Vec<bool>,
    pub gaps: Vec<Gap>,
}

impl AssetSeries {
    /// Builds a series from bars that are already uniformly spaced.
    pub fn from_bars(asset_id: &str, bars: Vec<MarketBar>, frequency: i64) -> Self {
        let n = bars.len();
        Self {
            asset_id: asset_id.to_string(),
            bars,
            frequency,
            filled: vec![false; n],
            gaps: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.bars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bars.is_empty()
    }

    pub fn prices(&self) -> Vec<f64> {
        self.bars.iter().map(|b| b.price).collect()
    }

    pub fn volumes(&self) -> Vec<f64> {
        self.bars.iter().map(|b| b.volume).collect()
    }

    /// Aggregates every `factor` consecutive bars: last close, summed volume.
    pub fn resample(&self, factor: usize) -> Self {
        let factor = factor.max(1);
        let mut bars = Vec::new();
        let mut filled = Vec::new();
        for (chunk, flags) in self.bars.chunks_exact(factor).zip(self.filled.chunks_exact(factor)) {
            let last = chunk[chunk.len() - 1];
            bars.push(MarketBar {
                timestamp: chunk[0].timestamp,
                price: last.price,
                volume: chunk.iter().map(|b| b.volume).sum(),
            });
            filled.push(flags.iter().any(|&f| f));
        }
        Self {
            asset_id: self.asset_id.clone(),
            bars,
            frequency: self.frequency * factor as i64,
            filled,
            gaps: self.gaps.clone(),
        }
    }
}

/// Model-ready features of one asset after the normalization warmup.
///
/// Row `i` corresponds to raw bar `i + warmup_len`.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedSeries {
    pub asset_id: String,
    pub frequency: i64,
    pub feature_names: Vec<String>,
    /// Row-major `len x dim` features.
    pub features: Vec<f64>,
    pub timestamps: Vec<i64>,
    pub prices: Vec<f64>,
    pub volumes: Vec<f64>,
    /// Rows that must not appear in any sample window.
    pub excluded: Vec<bool>,
    pub warmup_len: usize,
    /// Divisor applied to the volume feature by min-max scaling (1 before scaling).
    pub volume_scale: f64,
}

impl NormalizedSeries {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.feature_names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.features[i * d..(i + 1) * d]
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }
}
