//! Gramian Angular Summation Field encoders.
//!
//! A series is min-max rescaled to `[-1, 1]`, read as polar angles
//! `phi = arccos(x)`, and expanded to the matrix `cos(phi_i + phi_j)`. The
//! image encoders map that matrix affinely to `[0, 1]` and resize it to the
//! target resolution with nearest-neighbor sampling.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::ingest::OhlcvBar;

/// Rescales to `[-1, 1]`; a constant series maps to all zeros.
pub fn minmax_rescale(x: &[f64]) -> Vec<f64> {
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.0; x.len()];
    }
    x.iter().map(|v| 2.0 * (v - lo) / (hi - lo) - 1.0).collect()
}

/// Symmetric `n x n` matrix with entries in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GafMatrix {
    n: usize,
    values: Vec<f64>,
}

impl GafMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

pub fn gasf(x: &[f64]) -> Result<GafMatrix> {
    if x.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(gasf_of_rescaled(&minmax_rescale(x)))
}

/// GASF of values already in `[-1, 1]` (clamped before `arccos`).
pub fn gasf_of_rescaled(scaled: &[f64]) -> GafMatrix {
    let n = scaled.len();
    let phi: Vec<f64> = scaled.iter().map(|v| v.clamp(-1.0, 1.0).acos()).collect();
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let g = (phi[i] + phi[j]).cos();
            values[i * n + j] = g;
            values[j * n + i] = g;
        }
    }
    GafMatrix { n, values }
}

/// Nearest-neighbor lookup of a square matrix at `size x size`: output
/// `(r, c)` samples source `(floor(r * n / size), floor(c * n / size))`.
fn resized_plane(m: &GafMatrix, size: usize) -> Vec<f32> {
    let n = m.n();
    let mut out = Vec::with_capacity(size * size);
    for r in 0..size {
        let sr = r * n / size;
        for c in 0..size {
            let sc = c * n / size;
            out.push(((m.get(sr, sc) + 1.0) / 2.0).clamp(0.0, 1.0) as f32);
        }
    }
    out
}

fn interleave(planes: [&[f32]; 3], size: usize) -> Result<Image> {
    let mut data = Vec::with_capacity(size * size * 3);
    for p in 0..size * size {
        data.extend(planes.iter().map(|plane| plane[p]));
    }
    Image::from_data(size, size, data)
}

fn check_window(window: &[OhlcvBar], resolution: usize) -> Result<()> {
    if window.len() < 2 {
        return Err(Error::param("GAF windows need at least 2 bars"));
    }
    if resolution == 0 {
        return Err(Error::param("resolution must be positive"));
    }
    Ok(())
}

/// Close-price GASF replicated into three identical channels.
pub fn gaf_image(window: &[OhlcvBar], resolution: usize) -> Result<Image> {
    check_window(window, resolution)?;
    let closes: Vec<f64> = window.iter().map(|b| b.close).collect();
    let plane = resized_plane(&gasf(&closes)?, resolution);
    interleave([&plane, &plane, &plane], resolution)
}

/// Channels: GASF of opens, of the per-bar `high - low` range, of closes.
pub fn gaf_multichannel(window: &[OhlcvBar], resolution: usize) -> Result<Image> {
    check_window(window, resolution)?;
    let series = |f: fn(&OhlcvBar) -> f64| window.iter().map(f).collect::<Vec<f64>>();
    let open = resized_plane(&gasf(&series(|b| b.open))?, resolution);
    let range = resized_plane(&gasf(&series(|b| b.high - b.low))?, resolution);
    let close = resized_plane(&gasf(&series(|b| b.close))?, resolution);
    interleave([&open, &range, &close], resolution)
}

#[cfg(test)]
mod tests {
    use chrono::NaiveDate;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random_window(rng: &mut ChaCha8Rng, n: usize) -> Vec<OhlcvBar> {
        let start = NaiveDate::from_ymd_opt(2019, 5, 1).unwrap();
        (0..n)
            .map(|i| {
                let open = rng.random_range(90.0..110.0);
                let close = rng.random_range(90.0..110.0);
                OhlcvBar {
                    date: start + chrono::Days::new(i as u64),
                    open,
                    high: open.max(close) + rng.random_range(0.0..3.0),
                    low: open.min(close) - rng.random_range(0.0..3.0),
                    close,
                    volume: 1.0,
                }
            })
            .collect()
    }

    #[test]
    fn rescale_examples() {
        assert_eq!(minmax_rescale(&[0.0, 5.0, 10.0]), vec![-1.0, 0.0, 1.0]);
        assert_eq!(minmax_rescale(&[7.0, 7.0, 7.0]), vec![0.0, 0.0, 0.0]);
        assert_eq!(minmax_rescale(&[-3.0, 1.0]), vec![-1.0, 1.0]);
    }

    #[test]
    fn gasf_exact_values() {
        let m = gasf_of_rescaled(&[1.0, -1.0]);
        let expected = [1.0, -1.0, -1.0, 1.0];
        for (a, b) in m.values().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        let m = gasf_of_rescaled(&[0.0]);
        assert!((m.get(0, 0) + 1.0).abs() < 1e-12);
        assert!(gasf(&[]).is_err());
    }

    #[test]
    fn gasf_matches_product_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x: Vec<f64> = (0..8).map(|_| rng.random_range(-10.0..10.0)).collect();
        let m = gasf(&x).unwrap();
        let scaled = minmax_rescale(&x);
        for i in 0..8 {
            for j in 0..8 {
                let (ci, cj) = (scaled[i], scaled[j]);
                let (si, sj) = ((1.0 - ci * ci).max(0.0).sqrt(), (1.0 - cj * cj).max(0.0).sqrt());
                assert!((m.get(i, j) - (ci * cj - si * sj)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gaf_image_two_bar_example() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut window = random_window(&mut rng, 2);
        window[0].close = 110.0;
        window[0].high = 115.0;
        window[1].close = 90.0;
        window[1].low = 80.0;
        let im = gaf_image(&window, 2).unwrap();
        let expected = [[1.0, 0.0], [0.0, 1.0]];
        for r in 0..2 {
            for c in 0..2 {
                let p = im.pixel(r, c);
                assert_eq!(p[0], p[1]);
                assert_eq!(p[1], p[2]);
                assert!((p[0] - expected[r][c]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn resize_is_identity_at_native_size_and_nearest_otherwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let window = random_window(&mut rng, 30);
        let closes: Vec<f64> = window.iter().map(|b| b.close).collect();
        let m = gasf(&closes).unwrap();
        let native = gaf_image(&window, 30).unwrap();
        for r in 0..30 {
            for c in 0..30 {
                let v = ((m.get(r, c) + 1.0) / 2.0) as f32;
                assert_eq!(native.channel_value(r, c, 0), v);
            }
        }
        let big = gaf_image(&window, 128).unwrap();
        for r in 0..128 {
            for c in 0..128 {
                assert_eq!(
                    big.channel_value(r, c, 0),
                    native.channel_value(r * 30 / 128, c * 30 / 128, 0)
                );
            }
        }
    }

    #[test]
    fn multichannel_constant_range_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut window = random_window(&mut rng, 10);
        for b in &mut window {
            b.high = b.open.max(b.close) + 1.0;
            b.low = b.high - 25.0;
        }
        let im = gaf_multichannel(&window, 10).unwrap();
        for r in 0..10 {
            for c in 0..10 {
                assert!(im.channel_value(r, c, 1).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn multichannel_swaps_with_open_close_swap() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let window = random_window(&mut rng, 12);
        let swapped: Vec<OhlcvBar> = window
            .iter()
            .map(|b| OhlcvBar {
                open: b.close,
                close: b.open,
                ..*b
            })
            .collect();
        let a = gaf_multichannel(&window, 24).unwrap();
        let b = gaf_multichannel(&swapped, 24).unwrap();
        for r in 0..24 {
            for c in 0..24 {
                assert_eq!(a.channel_value(r, c, 0), b.channel_value(r, c, 2));
                assert_eq!(a.channel_value(r, c, 2), b.channel_value(r, c, 0));
                assert_eq!(a.channel_value(r, c, 1), b.channel_value(r, c, 1));
            }
        }
    }

    #[test]
    fn multichannel_channels_equal_single_channel_encodings() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let window = random_window(&mut rng, 16);
        let mc = gaf_multichannel(&window, 40).unwrap();
        // Route each component series through the close-only encoder.
        let as_close = |f: fn(&OhlcvBar) -> f64| -> Vec<OhlcvBar> {
            window
                .iter()
                .map(|b| {
                    let v = f(b);
                    OhlcvBar {
                        open: v,
                        high: v,
                        low: v,
                        close: v,
                        ..*b
                    }
                })
                .collect()
        };
        let open = gaf_image(&as_close(|b| b.open), 40).unwrap();
        let range = gaf_image(&as_close(|b| b.high - b.low), 40).unwrap();
        let close = gaf_image(&window, 40).unwrap();
        for r in 0..40 {
            for c in 0..40 {
                assert_eq!(mc.channel_value(r, c, 0), open.channel_value(r, c, 0));
                assert_eq!(mc.channel_value(r, c, 1), range.channel_value(r, c, 0));
                assert_eq!(mc.channel_value(r, c, 2), close.channel_value(r, c, 0));
            }
        }
    }

    proptest! {
        #[test]
        fn gasf_structure(x in prop::collection::vec(-1e3f64..1e3, 1..40)) {
            let m = gasf(&x).unwrap();
            let s = minmax_rescale(&x);
            for i in 0..x.len() {
                prop_assert!((m.get(i, i) - (2.0 * s[i] * s[i] - 1.0)).abs() < 1e-12);
                for j in 0..x.len() {
                    prop_assert_eq!(m.get(i, j), m.get(j, i));
                    prop_assert!(m.get(i, j).abs() <= 1.0 + 1e-12);
                }
            }
        }
    }
}
