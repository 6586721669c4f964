//! Experiment configuration: variants, profiles and the flat `key = value`
//! config file.

use std::fmt;
use std::str::FromStr;

use crate::data::{SplitSpec, WindowSpec};
use crate::error::{Error, Result};
use crate::nn::AdamConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    /// Asset-fitted, recurrent-only, no signature.
    Afd,
    /// Global, recurrent-only, no signature.
    Gfd,
    /// Global transformer, no signature.
    Gft,
    /// Global transformer with signature context.
    GftSig,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Afd, Variant::Gfd, Variant::Gft, Variant::GftSig];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Afd => "AFD",
            Variant::Gfd => "GFD",
            Variant::Gft => "GFT",
            Variant::GftSig => "GFT-Sig",
        }
    }

    pub fn attention(self) -> bool {
        matches!(self, Variant::Gft | Variant::GftSig)
    }

    pub fn signature(self) -> bool {
        self == Variant::GftSig
    }

    pub fn per_asset(self) -> bool {
        self == Variant::Afd
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.label().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(vec![format!("unknown variant {s:?} (AFD, GFD, GFT, GFT-Sig)")]))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Profile {
    Tiny,
    Full,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tiny" => Ok(Profile::Tiny),
            "full" => Ok(Profile::Full),
            _ => Err(Error::Config(vec![format!("unknown profile {s:?} (tiny, full)")])),
        }
    }
}

/// Every hyperparameter of one training run.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub variant: Variant,
    pub seed: u64,
    pub seeds: Vec<u64>,
    pub lookback: usize,
    pub signature_len: usize,
    pub horizon: usize,
    pub train_stride: usize,
    pub eval_stride: usize,
    pub median_window: usize,
    pub median_shift: usize,
    pub train_fraction: f64,
    pub validation_fraction: f64,
    pub d_model: usize,
    pub heads: usize,
    pub embed_width: usize,
    pub tkan_layers: usize,
    pub sublayers: usize,
    pub kan_width: usize,
    pub grid_intervals: usize,
    pub grid_range: f64,
    pub signature_depth: usize,
    pub alloc_hidden: [usize; 2],
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub max_epochs: usize,
    pub lr_patience: usize,
    pub lr_factor: f64,
    pub min_lr: f64,
    pub stop_patience: usize,
    pub workers: usize,
    /// `false` trains the base curve alone.
    pub adjusters: bool,
}

impl ExperimentConfig {
    pub fn tiny(variant: Variant) -> Self {
        Self {
            variant,
            seed: 7,
            seeds: vec![7, 11, 13],
            lookback: 24,
            signature_len: 48,
            horizon: 12,
            train_stride: 24,
            eval_stride: 24,
            median_window: 48,
            median_shift: 12,
            train_fraction: 0.8,
            validation_fraction: 0.2,
            d_model: 12,
            heads: 3,
            embed_width: 3,
            tkan_layers: 1,
            sublayers: 2,
            kan_width: 4,
            grid_intervals: 8,
            grid_range: 3.0,
            signature_depth: 3,
            alloc_hidden: [16, 8],
            batch_size: 64,
            learning_rate: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-7,
            max_epochs: 40,
            lr_patience: 5,
            lr_factor: 0.5,
            min_lr: 1e-5,
            stop_patience: 10,
            workers: 0,
            adjusters: true,
        }
    }

    pub fn full(variant: Variant) -> Self {
        Self {
            lookback: 60,
            signature_len: 400,
            train_stride: 1,
            eval_stride: 1,
            median_window: 336,
            d_model: 198,
            tkan_layers: 2,
            kan_width: 16,
            alloc_hidden: [100, 50],
            batch_size: 1024,
            learning_rate: 1e-3,
            max_epochs: 200,
            ..Self::tiny(variant)
        }
    }

    pub fn for_profile(profile: Profile, variant: Variant) -> Self {
        match profile {
            Profile::Tiny => Self::tiny(variant),
            Profile::Full => Self::full(variant),
        }
    }

    pub fn window(&self) -> WindowSpec {
        WindowSpec {
            signature_len: self.signature_len,
            lookback: self.lookback,
            horizon: self.horizon,
            stride: self.train_stride,
        }
    }

    pub fn eval_window(&self) -> WindowSpec {
        WindowSpec {
            stride: self.eval_stride,
            ..self.window()
        }
    }

    pub fn split(&self) -> SplitSpec {
        SplitSpec {
            train_fraction: self.train_fraction,
            validation_fraction: self.validation_fraction,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }

    /// Collects every problem instead of stopping at the first.
    pub fn validate(&self) -> Result<()> {
        let mut p = Vec::new();
        let positive = [
            ("lookback", self.lookback),
            ("signature_len", self.signature_len),
            ("train_stride", self.train_stride),
            ("eval_stride", self.eval_stride),
            ("median_window", self.median_window),
            ("d_model", self.d_model),
            ("embed_width", self.embed_width),
            ("tkan_layers", self.tkan_layers),
            ("sublayers", self.sublayers),
            ("kan_width", self.kan_width),
            ("grid_intervals", self.grid_intervals),
            ("alloc_hidden1", self.alloc_hidden[0]),
            ("alloc_hidden2", self.alloc_hidden[1]),
            ("batch_size", self.batch_size),
        ];
        for (k, v) in positive {
            if v == 0 {
                p.push(format!("{k} must be positive"));
            }
        }
        if self.horizon < 2 {
            p.push("horizon must be at least 2".into());
        }
        if self.signature_len < self.lookback {
            p.push("signature_len must be at least lookback".into());
        }
        if !(1..=4).contains(&self.signature_depth) {
            p.push("signature_depth must be in 1..=4".into());
        }
        if self.sublayers > 8 {
            p.push("sublayers must be at most 8".into());
        }
        if self.variant.attention() && (self.heads == 0 || self.d_model % self.heads != 0) {
            p.push(format!("heads = {} must divide d_model = {}", self.heads, self.d_model));
        }
        if self.variant.signature() && self.batch_size < 2 {
            p.push("signature normalization needs batch_size >= 2".into());
        }
        if !(self.grid_range > 0.0) {
            p.push("grid_range must be positive".into());
        }
        if !(self.learning_rate >= 0.0) {
            p.push("learning_rate must be non-negative".into());
        }
        if !(self.lr_factor > 0.0 && self.lr_factor <= 1.0) {
            p.push("lr_factor must lie in (0, 1]".into());
        }
        for (k, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                p.push(format!("{k} must lie in [0, 1)"));
            }
        }
        if !(self.adam_eps > 0.0) {
            p.push("adam_eps must be positive".into());
        }
        for (k, v) in [
            ("train_fraction", self.train_fraction),
            ("validation_fraction", self.validation_fraction),
        ] {
            if !(v > 0.0 && v < 1.0) {
                p.push(format!("{k} must lie in (0, 1)"));
            }
        }
        if self.seeds.is_empty() {
            p.push("seeds must list at least one seed".into());
        }
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p))
        }
    }

    /// Applies `key = value` overrides. Unknown keys and bad values are all
    /// reported together.
    pub fn apply_pairs<'a>(&mut self, pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<()> {
        let mut problems = Vec::new();
        for (k, v) in pairs {
            if let Err(e) = self.set(k.trim(), v.trim()) {
                problems.push(e);
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut pairs = Vec::new();
        let mut problems = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            match line.split_once('=') {
                Some((k, v)) => pairs.push((k.trim(), v.trim())),
                None => problems.push(format!("line {}: expected key = value", i + 1)),
            }
        }
        if let Err(Error::Config(more)) = self.apply_pairs(pairs) {
            problems.extend(more);
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("{key}: cannot parse {v:?}"))
        }
        match key {
            "variant" => self.variant = value.parse().map_err(|e: Error| e.to_string())?,
            "seed" => self.seed = num(key, value)?,
            "seeds" => {
                self.seeds = value
                    .split(',')
                    .map(|s| num(key, s.trim()))
                    .collect::<std::result::Result<_, _>>()?
            }
            "lookback" => self.lookback = num(key, value)?,
            "signature_len" => self.signature_len = num(key, value)?,
            "horizon" => self.horizon = num(key, value)?,
            "train_stride" => self.train_stride = num(key, value)?,
            "eval_stride" => self.eval_stride = num(key, value)?,
            "median_window" => self.median_window = num(key, value)?,
            "median_shift" => self.median_shift = num(key, value)?,
            "train_fraction" => self.train_fraction = num(key, value)?,
            "validation_fraction" => self.validation_fraction = num(key, value)?,
            "d_model" => self.d_model = num(key, value)?,
            "heads" => self.heads = num(key, value)?,
            "embed_width" => self.embed_width = num(key, value)?,
            "tkan_layers" => self.tkan_layers = num(key, value)?,
            "sublayers" => self.sublayers = num(key, value)?,
            "kan_width" => self.kan_width = num(key, value)?,
            "grid_intervals" => self.grid_intervals = num(key, value)?,
            "grid_range" => self.grid_range = num(key, value)?,
            "signature_depth" => self.signature_depth = num(key, value)?,
            "alloc_hidden1" => self.alloc_hidden[0] = num(key, value)?,
            "alloc_hidden2" => self.alloc_hidden[1] = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "learning_rate" => self.learning_rate = num(key, value)?,
            "beta1" => self.beta1 = num(key, value)?,
            "beta2" => self.beta2 = num(key, value)?,
            "adam_eps" => self.adam_eps = num(key, value)?,
            "max_epochs" => self.max_epochs = num(key, value)?,
            "lr_patience" => self.lr_patience = num(key, value)?,
            "lr_factor" => self.lr_factor = num(key, value)?,
            "min_lr" => self.min_lr = num(key, value)?,
            "stop_patience" => self.stop_patience = num(key, value)?,
            "workers" => self.workers = num(key, value)?,
            "adjusters" => self.adjusters = num(key, value)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Renders every key; parsing the output reproduces `self`.
    pub fn to_text(&self) -> String {
        let seeds: Vec<String> = self.seeds.iter().map(|s| s.to_string()).collect();
        let rows: Vec<(&str, String)> = vec![
            ("variant", self.variant.label().into()),
            ("seed", self.seed.to_string()),
            ("seeds", seeds.join(",")),
            ("lookback", self.lookback.to_string()),
            ("signature_len", self.signature_len.to_string()),
            ("horizon", self.horizon.to_string()),
            ("train_stride", self.train_stride.to_string()),
            ("eval_stride", self.eval_stride.to_string()),
            ("median_window", self.median_window.to_string()),
            ("median_shift", self.median_shift.to_string()),
            ("train_fraction", self.train_fraction.to_string()),
            ("validation_fraction", self.validation_fraction.to_string()),
            ("d_model", self.d_model.to_string()),
            ("heads", self.heads.to_string()),
            ("embed_width", self.embed_width.to_string()),
            ("tkan_layers", self.tkan_layers.to_string()),
            ("sublayers", self.sublayers.to_string()),
            ("kan_width", self.kan_width.to_string()),
            ("grid_intervals", self.grid_intervals.to_string()),
            ("grid_range", self.grid_range.to_string()),
            ("signature_depth", self.signature_depth.to_string()),
            ("alloc_hidden1", self.alloc_hidden[0].to_string()),
            ("alloc_hidden2", self.alloc_hidden[1].to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("adam_eps", self.adam_eps.to_string()),
            ("max_epochs", self.max_epochs.to_string()),
            ("lr_patience", self.lr_patience.to_string()),
            ("lr_factor", self.lr_factor.to_string()),
            ("min_lr", self.min_lr.to_string()),
            ("stop_patience", self.stop_patience.to_string()),
            ("workers", self.workers.to_string()),
            ("adjusters", self.adjusters.to_string()),
        ];
        rows.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_flags() {
        assert!(!Variant::Afd.attention() && !Variant::Afd.signature() && Variant::Afd.per_asset());
        assert!(!Variant::Gfd.attention() && !Variant::Gfd.per_asset());
        assert!(Variant::Gft.attention() && !Variant::Gft.signature());
        assert!(Variant::GftSig.attention() && Variant::GftSig.signature());
        assert_eq!("gft-sig".parse::<Variant>().unwrap(), Variant::GftSig);
    }

    #[test]
    fn profiles_validate() {
        for v in Variant::ALL {
            ExperimentConfig::tiny(v).validate().unwrap();
            ExperimentConfig::full(v).validate().unwrap();
        }
    }

    #[test]
    fn text_round_trip() {
        let mut c = ExperimentConfig::tiny(Variant::Gft);
        c.learning_rate = 3.5e-4;
        c.seeds = vec![1, 2];
        let mut d = ExperimentConfig::full(Variant::Afd);
        d.apply_text(&c.to_text()).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn all_problems_reported() {
        let mut c = ExperimentConfig::tiny(Variant::Gft);
        let err = c
            .apply_text("bogus = 1\nlookback = x\n# comment\nno equals here\nheads = 5\n")
            .unwrap_err();
        let Error::Config(list) = err else { panic!() };
        assert_eq!(list.len(), 3, "{list:?}");
        let err = c.validate().unwrap_err();
        assert!(err.to_string().contains("heads = 5"));
    }
}
