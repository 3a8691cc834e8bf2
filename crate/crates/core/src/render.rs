//! Deterministic candlestick rasterizer.
//!
//! The plot area is pure data ink: no axes, grid or text. The `N` bars of a
//! window occupy equal slots of `floor(W / N)` pixels (left-aligned, leftover
//! columns become a right margin). Within a slot the body spans all but the
//! last column, which stays background as the inter-candle gap, and the wick
//! is the body's center column. Prices map to rows through [`price_to_row`]; the
//! only floating-point step in placement is that single affine evaluation per
//! point, so renders are reproducible bit for bit.

use crate::error::{Error, Result};
use crate::image::{Image, Rgb, WHITE};
use crate::indicators::{bollinger, sma, IndicatorSpec};
use crate::ingest::OhlcvBar;

pub const UP: Rgb = [0.0, 1.0, 0.0];
pub const DOWN: Rgb = [1.0, 0.0, 0.0];
pub const BACKGROUND: Rgb = WHITE;
pub const VOLUME: Rgb = [0.5, 0.5, 0.5];
/// Colors for the SMA lines, in the order of `IndicatorSpec::sma_windows`
/// (cycled if there are more windows).
pub const SMA_COLORS: [Rgb; 2] = [[0.0, 0.0, 1.0], [1.0, 0.5, 0.0]];
pub const BAND: Rgb = [0.5, 0.0, 1.0];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct Components {
    pub volume: bool,
    pub sma: bool,
    pub bollinger: bool,
}

impl Components {
    pub const PRICE_ONLY: Components = Components {
        volume: false,
        sma: false,
        bollinger: false,
    };
    pub const ALL: Components = Components {
        volume: true,
        sma: true,
        bollinger: true,
    };

    /// Parses `none`, `all`, or a `+`/`,`-separated list of
    /// `volume`, `sma`, `bollinger` (alias `bb`).
    pub fn parse(text: &str) -> Option<Self> {
        let text = text.trim().to_ascii_lowercase();
        match text.as_str() {
            "none" | "price" | "price_only" => return Some(Self::PRICE_ONLY),
            "all" => return Some(Self::ALL),
            _ => {}
        }
        let mut out = Self::PRICE_ONLY;
        for part in text.split(['+', ',']).map(str::trim) {
            match part {
                "volume" | "vol" => out.volume = true,
                "sma" => out.sma = true,
                "bollinger" | "bb" => out.bollinger = true,
                _ => return None,
            }
        }
        Some(out)
    }

    pub fn label(&self) -> String {
        let parts: Vec<&str> = [
            (self.volume, "volume"),
            (self.sma, "sma"),
            (self.bollinger, "bollinger"),
        ]
        .iter()
        .filter(|(on, _)| *on)
        .map(|(_, name)| *name)
        .collect();
        if parts.is_empty() {
            "none".to_string()
        } else {
            parts.join("+")
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChartSpec {
    pub lookback: usize,
    /// Output is `resolution x resolution`.
    pub resolution: usize,
    pub components: Components,
    pub indicators: IndicatorSpec,
    pub volume_panel_fraction: f64,
}

impl ChartSpec {
    pub fn new(lookback: usize, resolution: usize, components: Components) -> Self {
        Self {
            lookback,
            resolution,
            components,
            indicators: IndicatorSpec::default(),
            volume_panel_fraction: 0.25,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution < 32 {
            return Err(Error::param("chart resolution must be at least 32"));
        }
        if self.lookback < 2 {
            return Err(Error::param("chart lookback must be at least 2"));
        }
        if self.resolution / self.lookback < 2 {
            return Err(Error::param(format!(
                "{} bars do not fit {} pixels with a body and a gap column each",
                self.lookback, self.resolution
            )));
        }
        if !(0.0..1.0).contains(&self.volume_panel_fraction) {
            return Err(Error::param("volume panel fraction must be in [0, 1)"));
        }
        self.indicators.validate()
    }

    pub fn layout(&self) -> Result<ChartLayout> {
        self.validate()?;
        let size = self.resolution;
        let volume_rows = if self.components.volume {
            (size as f64 * self.volume_panel_fraction).floor() as usize
        } else {
            0
        };
        Ok(ChartLayout {
            size,
            slot_width: size / self.lookback,
            price_top: 0,
            price_height: size - volume_rows,
            volume_rows,
        })
    }
}

/// Pixel geometry of one chart configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChartLayout {
    pub size: usize,
    pub slot_width: usize,
    pub price_top: usize,
    pub price_height: usize,
    /// Height of the bottom volume panel; 0 when volume is off.
    pub volume_rows: usize,
}

impl ChartLayout {
    pub fn body_columns(&self, slot: usize) -> std::ops::Range<usize> {
        let left = slot * self.slot_width;
        left..left + self.slot_width - 1
    }

    pub fn center_column(&self, slot: usize) -> usize {
        slot * self.slot_width + (self.slot_width - 1) / 2
    }

    pub fn volume_top(&self) -> usize {
        self.size - self.volume_rows
    }
}

/// Maps a price onto a panel row: `max` lands on the top row, `min` on the
/// bottom row, intermediate values round half up. A degenerate range maps
/// everything to the panel's midline.
pub fn price_to_row(price: f64, min: f64, max: f64, top: usize, height: usize) -> usize {
    let last = height.saturating_sub(1);
    if !(max > min) {
        return top + last / 2;
    }
    let offset = (max - price) / (max - min) * last as f64;
    let row = (offset + 0.5).floor();
    top + (row.max(0.0) as usize).min(last)
}

/// Rasterizes one window into a `resolution x resolution` RGB chart.
pub fn render_chart(window: &[OhlcvBar], spec: &ChartSpec) -> Result<Image> {
    if window.len() != spec.lookback {
        return Err(Error::shape(format!(
            "window has {} bars, chart expects {}",
            window.len(),
            spec.lookback
        )));
    }
    for bar in window {
        bar.validate()?;
    }
    let layout = spec.layout()?;
    let closes: Vec<f64> = window.iter().map(|b| b.close).collect();
    let n = window.len();

    // Right-aligned overlays: (color, first slot, values).
    let mut lines: Vec<(Rgb, usize, Vec<f64>)> = Vec::new();
    let mut lo = window.iter().map(|b| b.low).fold(f64::INFINITY, f64::min);
    let mut hi = window.iter().map(|b| b.high).fold(f64::NEG_INFINITY, f64::max);
    if spec.components.bollinger && n >= spec.indicators.bb_window {
        let bands = bollinger(&closes, &spec.indicators)?;
        let first = spec.indicators.bb_window - 1;
        lo = bands.lower.iter().copied().fold(lo, f64::min);
        hi = bands.upper.iter().copied().fold(hi, f64::max);
        lines.push((BAND, first, bands.upper));
        lines.push((BAND, first, bands.mid));
        lines.push((BAND, first, bands.lower));
    }
    if spec.components.sma {
        for (i, &w) in spec.indicators.sma_windows.iter().enumerate() {
            if n >= w {
                lines.push((SMA_COLORS[i % SMA_COLORS.len()], w - 1, sma(&closes, w)?));
            }
        }
    }

    let mut image = Image::filled(layout.size, layout.size, BACKGROUND);
    let row = |p: f64| price_to_row(p, lo, hi, layout.price_top, layout.price_height);

    for (slot, bar) in window.iter().enumerate() {
        let color = if bar.close >= bar.open { UP } else { DOWN };
        let center = layout.center_column(slot);
        for r in row(bar.high)..=row(bar.low) {
            image.set_pixel(r, center, color);
        }
        let (a, b) = (row(bar.open), row(bar.close));
        for r in a.min(b)..=a.max(b) {
            for c in layout.body_columns(slot) {
                image.set_pixel(r, c, color);
            }
        }
    }

    if layout.volume_rows > 0 {
        let max_volume = window.iter().map(|b| b.volume).fold(0.0, f64::max);
        if max_volume > 0.0 {
            let bottom = layout.size;
            for (slot, bar) in window.iter().enumerate() {
                let rows = layout.volume_rows as f64;
                let h = ((bar.volume * rows / max_volume + 0.5).floor() as usize)
                    .min(layout.volume_rows);
                for r in bottom - h..bottom {
                    for c in layout.body_columns(slot) {
                        image.set_pixel(r, c, VOLUME);
                    }
                }
            }
        }
    }

    for (color, first, values) in &lines {
        let points: Vec<(usize, usize)> = values
            .iter()
            .enumerate()
            .map(|(i, &v)| (layout.center_column(first + i), row(v)))
            .collect();
        if let [only] = points.as_slice() {
            image.set_pixel(only.1, only.0, *color);
        }
        for pair in points.windows(2) {
            draw_line(&mut image, pair[0], pair[1], *color);
        }
    }
    Ok(image)
}

/// Integer Bresenham segment between `(col, row)` points, endpoints included.
fn draw_line(image: &mut Image, from: (usize, usize), to: (usize, usize), color: Rgb) {
    let (mut x, mut y) = (from.0 as i64, from.1 as i64);
    let (x1, y1) = (to.0 as i64, to.1 as i64);
    let dx = (x1 - x).abs();
    let dy = -(y1 - y).abs();
    let sx = if x < x1 { 1 } else { -1 };
    let sy = if y < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        image.set_pixel(y as usize, x as usize, color);
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}
