use std::ops::Range;

use crate::error::{Error, Result};

/// Chronological train / validation / test proportions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    /// Share of the series used for fitting (train + validation).
    pub train_fraction: f64,
    /// Share of the fitting portion, taken from its end, held out for validation.
    pub validation_fraction: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            validation_fraction: 0.2,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, f) in [
            ("train fraction", self.train_fraction),
            ("validation fraction", self.validation_fraction),
        ] {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::InvalidArgument(format!("{name} {f} must lie in (0, 1)")));
            }
        }
        Ok(())
    }
}

/// Contiguous, non-overlapping row ranges in time order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitRanges {
    pub train: Range<usize>,
    pub validation: Range<usize>,
    pub test: Range<usize>,
}

/// Splits `n_rows` rows; every segment must hold at least `min_segment` rows
/// (the span of one sample window).
pub fn temporal_split(n_rows: usize, spec: &SplitSpec, min_segment: usize) -> Result<SplitRanges> {
    spec.validate()?;
    let fit = (n_rows as f64 * spec.train_fraction).floor() as usize;
    let val = (fit as f64 * spec.validation_fraction).floor() as usize;
    let train = fit - val;
    let test = n_rows - fit;
    let min_segment = min_segment.max(1);
    if train.min(val).min(test) < min_segment {
        // smallest share must still hold one window
        let smallest = (spec.train_fraction * spec.validation_fraction)
            .min(spec.train_fraction * (1.0 - spec.validation_fraction))
            .min(1.0 - spec.train_fraction);
        let need = (min_segment as f64 / smallest).ceil() as usize;
        return Err(Error::TooShort {
            have: n_rows,
            need,
            detail: format!(
                "each segment needs {min_segment} rows; segments would be {train}/{val}/{test}"
            ),
        });
    }
    Ok(SplitRanges {
        train: 0..train,
        validation: train..fit,
        test: fit..n_rows,
    })
}
