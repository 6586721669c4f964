//! VWAP benchmark prices, execution losses, the slippage decomposition and
//! improvement reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::allocator::AllocationCurve;
use crate::error::{Error, Result};

pub const BASIS_POINT: f64 = 1e-4;
pub const MILLIONTH: f64 = 1e-6;

/// `Σ P_t V_t / Σ V_t`.
pub fn market_vwap(prices: &[f64], volumes: &[f64]) -> Result<f64> {
    check_lengths(prices.len(), volumes.len())?;
    let total: f64 = volumes.iter().sum();
    if total <= 0.0 || !total.is_finite() {
        return Err(Error::ZeroVolume);
    }
    Ok(prices.iter().zip(volumes).map(|(p, v)| p * v).sum::<f64>() / total)
}

/// `Σ P_t q_t` for a normalized allocation.
pub fn exec_price(prices: &[f64], allocation: &AllocationCurve) -> Result<f64> {
    if prices.len() != allocation.len() {
        return Err(Error::InvalidAllocation(format!(
            "{} bins for {} prices",
            allocation.len(),
            prices.len()
        )));
    }
    Ok(prices.iter().zip(allocation.weights()).map(|(p, q)| p * q).sum())
}

fn check_lengths(p: usize, v: usize) -> Result<()> {
    if p != v || p == 0 {
        return Err(Error::InvalidArgument(format!(
            "{p} prices and {v} volumes"
        )));
    }
    Ok(())
}

/// One order's horizon: realized bar prices and volumes plus the schedule.
#[derive(Clone, Debug)]
pub struct ExecutionRecord {
    pub prices: Vec<f64>,
    pub volumes: Vec<f64>,
    pub allocation: AllocationCurve,
}

impl ExecutionRecord {
    pub fn new(prices: Vec<f64>, volumes: Vec<f64>, allocation: AllocationCurve) -> Result<Self> {
        check_lengths(prices.len(), volumes.len())?;
        if allocation.len() != prices.len() {
            return Err(Error::InvalidAllocation(format!(
                "{} bins for a {}-bin horizon",
                allocation.len(),
                prices.len()
            )));
        }
        Ok(Self {
            prices,
            volumes,
            allocation,
        })
    }

    /// Market volume fractions `Ṽ_t`.
    pub fn market_fractions(&self) -> Result<Vec<f64>> {
        let total: f64 = self.volumes.iter().sum();
        if total <= 0.0 {
            return Err(Error::ZeroVolume);
        }
        Ok(self.volumes.iter().map(|v| v / total).collect())
    }
}

/// Relative deviation of the execution price from market VWAP.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossReport {
    pub signed: f64,
    pub absolute: f64,
    pub quadratic: f64,
}

impl LossReport {
    pub fn from_deviation(dev: f64) -> Self {
        Self {
            signed: dev,
            absolute: dev.abs(),
            quadratic: dev * dev,
        }
    }

    pub fn absolute_bp(&self) -> f64 {
        self.absolute / BASIS_POINT
    }

    pub fn quadratic_millionths(&self) -> f64 {
        self.quadratic / MILLIONTH
    }
}

pub fn vwap_losses(record: &ExecutionRecord) -> Result<LossReport> {
    let vwap = market_vwap(&record.prices, &record.volumes)?;
    if vwap == 0.0 {
        return Err(Error::ZeroVwap);
    }
    let exec = exec_price(&record.prices, &record.allocation)?;
    Ok(LossReport::from_deviation(exec / vwap - 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlippageDecomposition {
    pub price_deviation: f64,
    pub allocation_error: f64,
    pub realized: f64,
}

impl SlippageDecomposition {
    pub fn bound(&self) -> f64 {
        self.price_deviation + self.allocation_error
    }
}

/// Splits realized slippage into participation-weighted price deviation and
/// allocation error against per-bin VWAPs.
pub fn slippage_bound(record: &ExecutionRecord, bin_vwap: &[f64]) -> Result<SlippageDecomposition> {
    if bin_vwap.len() != record.prices.len() {
        return Err(Error::InvalidArgument(format!(
            "{} per-bin VWAPs for {} bins",
            bin_vwap.len(),
            record.prices.len()
        )));
    }
    let frac = record.market_fractions()?;
    let q = record.allocation.weights();
    let mut price_deviation = 0.0;
    let mut allocation_error = 0.0;
    let mut exec = 0.0;
    let mut market = 0.0;
    for t in 0..q.len() {
        price_deviation += ((record.prices[t] - bin_vwap[t]) * q[t]).abs();
        allocation_error += (bin_vwap[t] * (q[t] - frac[t])).abs();
        exec += record.prices[t] * q[t];
        market += bin_vwap[t] * frac[t];
    }
    let out = SlippageDecomposition {
        price_deviation,
        allocation_error,
        realized: (exec - market).abs(),
    };
    let slack = 1e-12 * (1.0 + market.abs());
    if out.realized > out.bound() + slack {
        return Err(Error::InvalidAllocation(format!(
            "slippage {} exceeds its bound {}",
            out.realized,
            out.bound()
        )));
    }
    Ok(out)
}

/// `1 − mean(model) / mean(baseline)`.
pub fn improvement_vs_baseline(model: &[f64], baseline: &[f64]) -> Result<f64> {
    if model.len() != baseline.len() || model.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} model losses vs {} baseline losses",
            model.len(),
            baseline.len()
        )));
    }
    let b: f64 = baseline.iter().sum::<f64>() / baseline.len() as f64;
    if b == 0.0 {
        return Err(Error::ZeroBaseline);
    }
    let m: f64 = model.iter().sum::<f64>() / model.len() as f64;
    Ok(1.0 - m / b)
}

/// A model and the naive schedule, evaluated on the same order.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleEvaluation {
    pub variant: String,
    pub split: String,
    pub asset: String,
    pub duration_min: u64,
    pub model: LossReport,
    pub naive: LossReport,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Improvement {
    pub absolute: Option<f64>,
    pub quadratic: Option<f64>,
}

fn improvement(samples: &[&SampleEvaluation]) -> Improvement {
    let pick = |f: fn(&LossReport) -> f64| {
        let m: Vec<f64> = samples.iter().map(|s| f(&s.model)).collect();
        let n: Vec<f64> = samples.iter().map(|s| f(&s.naive)).collect();
        improvement_vs_baseline(&m, &n).ok()
    };
    Improvement {
        absolute: pick(|l| l.absolute),
        quadratic: pick(|l| l.quadratic),
    }
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Option<Vec<f64>> = values.collect();
    let v = v?;
    if v.is_empty() {
        None
    } else {
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PooledRow {
    pub variant: String,
    pub split: String,
    pub samples: usize,
    pub sample_weighted: Improvement,
    pub asset_weighted: Improvement,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AssetRow {
    pub split: String,
    pub asset: String,
    /// Improvement per variant, in `Report::variants` order.
    pub by_variant: Vec<Option<Improvement>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DurationRow {
    pub variant: String,
    pub duration_min: u64,
    pub asset: String,
    pub orders: usize,
    pub naive_abs_bp: f64,
    pub naive_quad_millionths: f64,
    pub model_abs_bp: f64,
    pub model_quad_millionths: f64,
    pub change_abs: Option<f64>,
    pub change_quad: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub variants: Vec<String>,
    pub pooled: Vec<PooledRow>,
    pub per_asset: Vec<AssetRow>,
    pub durations: Vec<DurationRow>,
}

/// Groups per-sample evaluations into pooled, per-asset and (when order
/// durations differ) per-duration tables. The duration table uses the test
/// split when one is present. `variants` fixes the row and
/// column order; variants without samples are skipped.
pub fn report_tables(samples: &[SampleEvaluation], variants: &[String]) -> Report {
    let mut pooled = Vec::new();
    let mut splits: Vec<&str> = Vec::new();
    for s in samples {
        if !splits.contains(&s.split.as_str()) {
            splits.push(&s.split);
        }
    }
    splits.sort_by_key(|s| std::cmp::Reverse(s.to_string()));

    for v in variants {
        for split in &splits {
            let rows: Vec<&SampleEvaluation> = samples
                .iter()
                .filter(|s| &s.variant == v && s.split == *split)
                .collect();
            if rows.is_empty() {
                continue;
            }
            let mut by_asset: BTreeMap<&str, Vec<&SampleEvaluation>> = BTreeMap::new();
            for r in &rows {
                by_asset.entry(&r.asset).or_default().push(r);
            }
            let per: Vec<Improvement> = by_asset.values().map(|g| improvement(g)).collect();
            pooled.push(PooledRow {
                variant: v.clone(),
                split: split.to_string(),
                samples: rows.len(),
                sample_weighted: improvement(&rows),
                asset_weighted: Improvement {
                    absolute: mean_of(per.iter().map(|i| i.absolute)),
                    quadratic: mean_of(per.iter().map(|i| i.quadratic)),
                },
            });
        }
    }

    let mut keys: Vec<(&str, &str)> = samples.iter().map(|s| (s.split.as_str(), s.asset.as_str())).collect();
    keys.sort_by(|a, b| b.0.cmp(a.0).then(a.1.cmp(b.1)));
    keys.dedup();
    let per_asset = keys
        .into_iter()
        .map(|(split, asset)| AssetRow {
            split: split.to_string(),
            asset: asset.to_string(),
            by_variant: variants
                .iter()
                .map(|v| {
                    let g: Vec<&SampleEvaluation> = samples
                        .iter()
                        .filter(|s| &s.variant == v && s.split == split && s.asset == asset)
                        .collect();
                    (!g.is_empty()).then(|| improvement(&g))
                })
                .collect(),
        })
        .collect();

    let held_out: Vec<&SampleEvaluation> = if samples.iter().any(|s| s.split == "test") {
        samples.iter().filter(|s| s.split == "test").collect()
    } else {
        samples.iter().collect()
    };
    let mut durations: Vec<u64> = held_out.iter().map(|s| s.duration_min).collect();
    durations.sort_unstable();
    durations.dedup();
    let mut duration_rows = Vec::new();
    if durations.len() > 1 {
        for v in variants {
            for &d in &durations {
                let mut by_asset: BTreeMap<&str, Vec<&SampleEvaluation>> = BTreeMap::new();
                for s in held_out.iter().filter(|s| &s.variant == v && s.duration_min == d) {
                    by_asset.entry(&s.asset).or_default().push(s);
                }
                for (asset, g) in by_asset {
                    let n = g.len() as f64;
                    let mean = |f: &dyn Fn(&SampleEvaluation) -> f64| g.iter().map(|s| f(s)).sum::<f64>() / n;
                    let na = mean(&|s| s.naive.absolute);
                    let nq = mean(&|s| s.naive.quadratic);
                    let ma = mean(&|s| s.model.absolute);
                    let mq = mean(&|s| s.model.quadratic);
                    duration_rows.push(DurationRow {
                        variant: v.clone(),
                        duration_min: d,
                        asset: asset.to_string(),
                        orders: g.len(),
                        naive_abs_bp: na / BASIS_POINT,
                        naive_quad_millionths: nq / MILLIONTH,
                        model_abs_bp: ma / BASIS_POINT,
                        model_quad_millionths: mq / MILLIONTH,
                        change_abs: (na > 0.0).then(|| ma / na - 1.0),
                        change_quad: (nq > 0.0).then(|| mq / nq - 1.0),
                    });
                }
            }
        }
    }

    Report {
        variants: variants.to_vec(),
        pooled,
        per_asset,
        durations: duration_rows,
    }
}

pub fn format_percent(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{:.2}%", 100.0 * x),
        None => "n/a".to_string(),
    }
}

fn format_change(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{:.0}%", 100.0 * x),
        None => "n/a".to_string(),
    }
}

impl Report {
    fn pooled_table(&self) -> (Vec<&'static str>, Vec<Vec<String>>) {
        let header = vec![
            "Model",
            "Train/Test",
            "Samples",
            "Absolute VWAP Loss Improvement",
            "Quadratic VWAP Loss Improvement",
            "Absolute (asset-weighted)",
            "Quadratic (asset-weighted)",
        ];
        let rows = self
            .pooled
            .iter()
            .map(|r| {
                vec![
                    r.variant.clone(),
                    title_case(&r.split),
                    r.samples.to_string(),
                    format_percent(r.sample_weighted.absolute),
                    format_percent(r.sample_weighted.quadratic),
                    format_percent(r.asset_weighted.absolute),
                    format_percent(r.asset_weighted.quadratic),
                ]
            })
            .collect();
        (header, rows)
    }

    fn asset_table(&self) -> (Vec<String>, Vec<Vec<String>>) {
        let mut header = vec!["Train/Test".to_string(), "Asset".to_string()];
        for kind in ["Abs", "Quad"] {
            for v in &self.variants {
                header.push(format!("{kind} {v}"));
            }
        }
        let rows = self
            .per_asset
            .iter()
            .map(|r| {
                let mut row = vec![title_case(&r.split), r.asset.clone()];
                row.extend(r.by_variant.iter().map(|i| format_percent(i.and_then(|i| i.absolute))));
                row.extend(r.by_variant.iter().map(|i| format_percent(i.and_then(|i| i.quadratic))));
                row
            })
            .collect();
        (header, rows)
    }

    fn duration_table(&self) -> (Vec<&'static str>, Vec<Vec<String>>) {
        let header = vec![
            "Model",
            "Duration (min)",
            "Asset",
            "Order Count",
            "Naive Abs (bp)",
            "Naive Quad (1e-6)",
            "Model Abs (bp)",
            "Model Quad (1e-6)",
            "Change Abs",
            "Change Quad",
        ];
        let rows = self
            .durations
            .iter()
            .map(|r| {
                vec![
                    r.variant.clone(),
                    r.duration_min.to_string(),
                    r.asset.clone(),
                    r.orders.to_string(),
                    format!("{:.2}", r.naive_abs_bp),
                    format!("{:.2}", r.naive_quad_millionths),
                    format!("{:.2}", r.model_abs_bp),
                    format!("{:.2}", r.model_quad_millionths),
                    format_change(r.change_abs),
                    format_change(r.change_quad),
                ]
            })
            .collect();
        (header, rows)
    }

    /// Aligned plain-text rendering.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let (h, rows) = self.pooled_table();
        section(&mut out, "Improvement versus naive", &strings(&h), &rows);
        let (h, rows) = self.asset_table();
        section(&mut out, "Improvement versus naive per asset", &h, &rows);
        if !self.durations.is_empty() {
            let (h, rows) = self.duration_table();
            section(&mut out, "Deviation by order duration", &strings(&h), &rows);
        }
        out.push_str("Improvement = 1 - mean(model loss) / mean(naive loss).\n");
        out.push_str("Absolute deviation in basis points (1e-4), quadratic in millionths (1e-6).\n");
        out
    }

    /// Comma-separated rendering, one block per table separated by a
    /// `# title` line.
    pub fn render_csv(&self) -> String {
        let mut out = String::new();
        let mut block = |title: &str, header: Vec<String>, rows: Vec<Vec<String>>| {
            let _ = writeln!(out, "# {title}");
            let _ = writeln!(out, "{}", header.join(","));
            for r in rows {
                let _ = writeln!(out, "{}", r.join(","));
            }
        };
        let (h, r) = self.pooled_table();
        block("pooled", strings(&h), r);
        let (h, r) = self.asset_table();
        block("per_asset", h, r);
        if !self.durations.is_empty() {
            let (h, r) = self.duration_table();
            block("durations", strings(&h), r);
        }
        out
    }
}

fn strings(h: &[&str]) -> Vec<String> {
    h.iter().map(|s| s.to_string()).collect()
}

fn title_case(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn section(out: &mut String, title: &str, header: &[String], rows: &[Vec<String>]) {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: &[String]| {
        cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect::<Vec<_>>()
            .join("  ")
    };
    let _ = writeln!(out, "{title}");
    let rule = "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1));
    let _ = writeln!(out, "{}", line(header));
    let _ = writeln!(out, "{rule}");
    for r in rows {
        let _ = writeln!(out, "{}", line(r));
    }
    out.push('\n');
}

const SAMPLE_HEADER: [&str; 8] = [
    "variant",
    "split",
    "asset",
    "duration_min",
    "model_dev",
    "naive_dev",
    "model_abs",
    "model_quad",
];

/// Per-sample evaluations as CSV with full round-trip precision so reports
/// can be regenerated exactly. Model losses are stored explicitly since a
/// seed-averaged row is not a function of its mean deviation.
pub fn samples_to_csv(samples: &[SampleEvaluation]) -> String {
    let mut out = SAMPLE_HEADER.join(",");
    out.push('\n');
    for s in samples {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            s.variant,
            s.split,
            s.asset,
            s.duration_min,
            s.model.signed,
            s.naive.signed,
            s.model.absolute,
            s.model.quadratic
        );
    }
    out
}

pub fn samples_from_csv(text: &str) -> Result<Vec<SampleEvaluation>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::Parse { line: 1, message: e.to_string() })?;
    if header.iter().ne(SAMPLE_HEADER) {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header {}", SAMPLE_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Parse { line, message: e.to_string() })?;
        let num = |j: usize| -> Result<f64> {
            rec[j].parse().map_err(|_| Error::Parse {
                line,
                message: format!("bad number {:?}", &rec[j]),
            })
        };
        out.push(SampleEvaluation {
            variant: rec[0].to_string(),
            split: rec[1].to_string(),
            asset: rec[2].to_string(),
            duration_min: rec[3].parse().map_err(|_| Error::Parse {
                line,
                message: format!("bad duration {:?}", &rec[3]),
            })?,
            model: LossReport {
                signed: num(4)?,
                absolute: num(6)?,
                quadratic: num(7)?,
            },
            naive: LossReport::from_deviation(num(5)?),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocator::naive_allocation;

    fn record(prices: Vec<f64>, volumes: Vec<f64>, q: Vec<f64>) -> ExecutionRecord {
        ExecutionRecord::new(prices, volumes, AllocationCurve::new(q).unwrap()).unwrap()
    }

    #[test]
    fn vwap_examples() {
        assert_eq!(market_vwap(&[10.0, 10.0], &[1.0, 7.0]).unwrap(), 10.0);
        assert_eq!(market_vwap(&[10.0, 20.0], &[1.0, 3.0]).unwrap(), 17.5);
        assert_eq!(market_vwap(&[42.0], &[3.0]).unwrap(), 42.0);
        assert!(matches!(market_vwap(&[1.0, 2.0], &[0.0, 0.0]), Err(Error::ZeroVolume)));
    }

    #[test]
    fn exec_examples() {
        let p = [10.0, 20.0];
        assert_eq!(exec_price(&p, &naive_allocation(2).unwrap()).unwrap(), 15.0);
        assert_eq!(exec_price(&p, &AllocationCurve::new(vec![1.0, 0.0]).unwrap()).unwrap(), 10.0);
        let q = AllocationCurve::new(vec![0.25, 0.75]).unwrap();
        assert_eq!(exec_price(&p, &q).unwrap(), market_vwap(&p, &[1.0, 3.0]).unwrap());
        assert!(exec_price(&[1.0], &q).is_err());
    }

    #[test]
    fn loss_units() {
        let l = LossReport::from_deviation(100.10 / 100.0 - 1.0);
        assert!((l.absolute - 1e-3).abs() < 1e-15);
        assert!((l.absolute_bp() - 10.0).abs() < 1e-9);
        assert!((l.quadratic_millionths() - 1.0).abs() < 1e-9);
        assert!(LossReport::from_deviation(-2e-4).signed < 0.0);
    }

    #[test]
    fn matching_market_fractions_is_lossless() {
        let r = record(vec![10.0, 12.0, 9.0], vec![2.0, 1.0, 1.0], vec![0.5, 0.25, 0.25]);
        let l = vwap_losses(&r).unwrap();
        assert!(l.absolute < 1e-15 && l.quadratic < 1e-30);
        let s = slippage_bound(&r, &r.prices).unwrap();
        assert!(s.allocation_error < 1e-15);
    }

    #[test]
    fn constant_prices_have_no_slippage() {
        let r = record(vec![5.0; 3], vec![1.0, 2.0, 3.0], vec![0.6, 0.2, 0.2]);
        let s = slippage_bound(&r, &r.prices).unwrap();
        assert_eq!(s.price_deviation, 0.0);
        assert!(s.realized.abs() < 1e-12);
    }

    #[test]
    fn improvement_examples() {
        assert_eq!(improvement_vs_baseline(&[1.0, 3.0], &[1.0, 3.0]).unwrap(), 0.0);
        assert_eq!(improvement_vs_baseline(&[0.5, 1.5], &[1.0, 3.0]).unwrap(), 0.5);
        assert!(matches!(improvement_vs_baseline(&[1.0], &[0.0]), Err(Error::ZeroBaseline)));
    }

    fn eval(variant: &str, split: &str, asset: &str, m: f64, n: f64) -> SampleEvaluation {
        SampleEvaluation {
            variant: variant.into(),
            split: split.into(),
            asset: asset.into(),
            duration_min: 720,
            model: LossReport::from_deviation(m),
            naive: LossReport::from_deviation(n),
        }
    }

    #[test]
    fn single_asset_single_variant() {
        let s = vec![eval("GFT-Sig", "test", "A", 1e-3, 2e-3)];
        let r = report_tables(&s, &["GFT-Sig".to_string()]);
        assert_eq!(r.pooled.len(), 1);
        assert_eq!(r.per_asset.len(), 1);
        assert!(r.durations.is_empty());
        assert_eq!(r.pooled[0].sample_weighted.absolute, Some(0.5));
        assert_eq!(r.pooled[0].sample_weighted.quadratic, Some(0.75));
    }

    #[test]
    fn negative_improvements_keep_sign() {
        let s = vec![eval("GFT", "test", "XMR", 3e-3, 1e-3)];
        let r = report_tables(&s, &["GFT".to_string()]);
        assert!(r.render_text().contains("-200.00%"));
        assert!(r.render_csv().contains("-800.00%"));
    }

    #[test]
    fn sample_and_asset_weighting_differ() {
        let mut s = vec![eval("V", "test", "A", 1e-3, 2e-3)];
        for _ in 0..3 {
            s.push(eval("V", "test", "B", 2e-3, 2e-3));
        }
        let r = report_tables(&s, &["V".to_string()]);
        let row = &r.pooled[0];
        assert!((row.sample_weighted.absolute.unwrap() - (1.0 - 7.0 / 8.0)).abs() < 1e-12);
        assert!((row.asset_weighted.absolute.unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn sample_csv_round_trip() {
        let s = vec![eval("GFT-Sig", "test", "A", 1.234567890123e-3, -2e-3), eval("GFD", "train", "B", 0.1, 0.3)];
        assert_eq!(samples_from_csv(&samples_to_csv(&s)).unwrap(), s);
        assert!(samples_from_csv("a,b\n").is_err());
    }
}
