use std::f64::consts::TAU;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{AssetSeries, MarketBar};

/// Parameters of the synthetic market generator.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthProfile {
    pub asset_id: String,
    /// Bars per seasonal cycle (24 for a daily cycle of hourly bars).
    pub period: usize,
    /// Log-amplitude of the seasonal volume shape; 0 disables seasonality.
    pub amplitude: f64,
    /// Standard deviation of the lognormal volume noise.
    pub volume_noise: f64,
    pub base_volume: f64,
    /// Per-bar standard deviation of log-price increments.
    pub price_noise: f64,
    /// Pull of the log price back toward its start, per bar.
    pub mean_reversion: f64,
    pub start_price: f64,
    pub start_timestamp: i64,
    pub frequency: i64,
}

impl Default for SynthProfile {
    fn default() -> Self {
        Self {
            asset_id: "SYN".into(),
            period: 24,
            amplitude: 1.0,
            volume_noise: 0.2,
            base_volume: 1000.0,
            price_noise: 0.01,
            mean_reversion: 0.01,
            start_price: 100.0,
            start_timestamp: 1_700_000_000 - 1_700_000_000 % 86_400,
            frequency: 3600,
        }
    }
}

impl SynthProfile {
    fn shape(&self, phase: usize) -> f64 {
        let x = TAU * (phase % self.period) as f64 / self.period as f64;
        // two bumps per cycle with unequal heights
        (x.cos() + 0.6 * (2.0 * x + 0.7).cos()) * self.amplitude
    }

    /// Expected volume multiplier at `phase`, normalized to average 1 over a cycle.
    pub fn seasonal_factor(&self, phase: usize) -> f64 {
        let norm: f64 =
            (0..self.period).map(|p| self.shape(p).exp()).sum::<f64>() / self.period as f64;
        self.shape(phase).exp() / norm
    }
}

/// Deterministic synthetic bars: seasonal volume times mean-one lognormal
/// noise, and a mean-reverting log-price random walk.
pub fn synthesize_market(seed: u64, n_bars: usize, profile: &SynthProfile) -> AssetSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let factors: Vec<f64> = (0..profile.period.max(1))
        .map(|p| profile.seasonal_factor(p))
        .collect();
    let sigma = profile.volume_noise;
    let mut log_p = profile.start_price.ln();
    let anchor = log_p;
    let mut bars = Vec::with_capacity(n_bars);
    for i in 0..n_bars {
        let eps: f64 = std_normal.sample(&mut rng);
        let noise = (sigma * eps - 0.5 * sigma * sigma).exp();
        let volume = profile.base_volume * factors[i % factors.len()] * noise;
        let shock: f64 = std_normal.sample(&mut rng);
        log_p += profile.price_noise * shock - profile.mean_reversion * (log_p - anchor);
        bars.push(MarketBar {
            timestamp: profile.start_timestamp + i as i64 * profile.frequency,
            price: log_p.exp(),
            volume,
        });
    }
    AssetSeries::from_bars(&profile.asset_id, bars, profile.frequency)
}
