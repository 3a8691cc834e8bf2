//! Synthetic price series with a visible, label-determining trend.

use chrono::{Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::ingest::{OhlcvBar, OhlcvSeries};

/// Consecutive blocks of `block_len` daily bars. Each block trends up or
/// down (random sign) by `drift` per day with uniform noise of amplitude
/// `noise`. With `block_len >= lookback + horizon` and stride `block_len`,
/// every window and its forward horizon sit inside one block, so the label
/// is the block's trend direction.
#[derive(Debug, Clone, PartialEq)]
pub struct TrendSpec {
    pub blocks: usize,
    pub block_len: usize,
    pub drift: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for TrendSpec {
    fn default() -> Self {
        Self {
            blocks: 400,
            block_len: 40,
            drift: 0.01,
            noise: 0.002,
            seed: 0,
        }
    }
}

pub fn trend_series(spec: &TrendSpec) -> Result<OhlcvSeries> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let start = NaiveDate::from_ymd_opt(2000, 1, 1).expect("valid date");
    let mut bars = Vec::with_capacity(spec.blocks * spec.block_len);
    let mut prev = 100.0f64;
    for _ in 0..spec.blocks {
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        for _ in 0..spec.block_len {
            let step = sign * spec.drift + rng.random_range(-spec.noise..=spec.noise);
            let open = prev;
            let close = prev * (1.0 + step);
            let wick = |rng: &mut ChaCha8Rng| 1.0 + rng.random_range(0.0..=spec.noise.max(1e-6));
            let high = open.max(close) * wick(&mut rng);
            let low = open.min(close) / wick(&mut rng);
            let volume = rng.random_range(1000.0..2000.0);
            bars.push(OhlcvBar {
                date: start + Duration::days(bars.len() as i64),
                open,
                high,
                low,
                close,
                volume,
            });
            prev = close;
        }
    }
    OhlcvSeries::new("synthetic-trend", bars)
}
