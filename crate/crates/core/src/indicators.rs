//! Simple moving averages and Bollinger Bands.
//!
//! Every output is right-aligned to its window: element `i` summarizes
//! `closes[i..i + window]`, so an output sequence is `window - 1` shorter than
//! its input and never carries leading fill values.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorSpec {
    pub sma_windows: Vec<usize>,
    pub bb_window: usize,
    pub bb_k: f64,
}

impl Default for IndicatorSpec {
    fn default() -> Self {
        Self {
            sma_windows: vec![7, 25],
            bb_window: 20,
            bb_k: 2.0,
        }
    }
}

impl IndicatorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.sma_windows.iter().any(|&w| w < 2) || self.bb_window < 2 {
            return Err(Error::param("indicator windows must be at least 2"));
        }
        if !(self.bb_k > 0.0) {
            return Err(Error::param("bollinger multiplier must be positive"));
        }
        Ok(())
    }
}

fn check_window(len: usize, window: usize) -> Result<()> {
    if window == 0 || window > len {
        return Err(Error::param(format!(
            "window {window} does not fit a series of {len} values"
        )));
    }
    Ok(())
}

pub fn sma(closes: &[f64], window: usize) -> Result<Vec<f64>> {
    check_window(closes.len(), window)?;
    Ok(closes
        .windows(window)
        .map(|w| w.iter().sum::<f64>() / window as f64)
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BollingerBands {
    pub mid: Vec<f64>,
    pub upper: Vec<f64>,
    pub lower: Vec<f64>,
}

/// Mid band is the SMA; the envelope is `k` population standard deviations.
pub fn bollinger(closes: &[f64], spec: &IndicatorSpec) -> Result<BollingerBands> {
    spec.validate()?;
    check_window(closes.len(), spec.bb_window)?;
    let n = spec.bb_window as f64;
    let mut bands = BollingerBands {
        mid: Vec::new(),
        upper: Vec::new(),
        lower: Vec::new(),
    };
    for w in closes.windows(spec.bb_window) {
        let mean = w.iter().sum::<f64>() / n;
        let var = w.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        let half = spec.bb_k * var.sqrt();
        bands.mid.push(mean);
        bands.upper.push(mean + half);
        bands.lower.push(mean - half);
    }
    Ok(bands)
}
