//! Uniformly binned time series, the universal I/O record of the crate.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// What the bin values of a [`TimeTrace`] mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TraceUnit {
    /// Detection (or model) rate in Hz.
    #[default]
    RateHz,
    /// Raw counts accumulated per bin.
    CountsPerBin,
}

/// A uniformly binned photon-count or rate time series.
///
/// `counts[k]` is the value associated with time `t0 + k * bin_width`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeTrace {
    /// Start time of the first bin, s.
    pub t0: f64,
    /// Bin width, s (> 0).
    pub bin_width: f64,
    /// Nonnegative, finite bin values.
    pub counts: Vec<f64>,
    /// Meaning of the bin values; defaults to a rate in Hz.
    #[serde(default)]
    pub unit: TraceUnit,
}

impl TimeTrace {
    pub fn new(t0: f64, bin_width: f64, counts: Vec<f64>) -> Result<Self> {
        Self::with_unit(t0, bin_width, counts, TraceUnit::RateHz)
    }

    pub fn with_unit(t0: f64, bin_width: f64, counts: Vec<f64>, unit: TraceUnit) -> Result<Self> {
        if !t0.is_finite() {
            return Err(Error::InvalidParameters(format!("non-finite t0: {t0}")));
        }
        if !bin_width.is_finite() || bin_width <= 0.0 {
            return Err(Error::InvalidParameters(format!(
                "bin width must be positive and finite, got {bin_width}"
            )));
        }
        if let Some(bad) = counts.iter().find(|c| !c.is_finite() || **c < 0.0) {
            return Err(Error::InvalidParameters(format!(
                "trace values must be finite and >= 0, got {bad}"
            )));
        }
        Ok(Self {
            t0,
            bin_width,
            counts,
            unit,
        })
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Time of bin `k` (its left edge / sample point).
    pub fn bin_time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.bin_width
    }

    /// Index of the first bin at or after time `t`, with a half-ulp of
    /// slack so that on-grid times land on their own bin.
    pub fn first_bin_at(&self, t: f64) -> usize {
        let slack = 1e-9 * self.bin_width;
        let raw = (t - self.t0 - slack) / self.bin_width;
        if raw <= 0.0 {
            0
        } else {
            raw.ceil() as usize
        }
    }

    /// Mean of `n` bins starting at index `from`.
    pub fn mean_over(&self, from: usize, n: usize) -> Result<f64> {
        if n == 0 {
            return Err(Error::TraceRange("window of zero bins".into()));
        }
        let end = from
            .checked_add(n)
            .ok_or_else(|| Error::TraceRange("window overflows".into()))?;
        if end > self.counts.len() {
            return Err(Error::TraceRange(format!(
                "window [{from}, {end}) exceeds trace length {}",
                self.counts.len()
            )));
        }
        Ok(self.counts[from..end].iter().sum::<f64>() / n as f64)
    }
}
