//! OHLCV ingestion, regime labeling and chronological splitting.
//!
//! Input is a Yahoo-style daily CSV (`Date,Open,High,Low,Close[,Adj Close],Volume`).
//! Rows must already be in strictly increasing date order; the parser checks
//! order and never sorts. `Adj Close` is accepted and ignored, raw `Close`
//! drives every label.

use std::fmt::Write as _;
use std::ops::Range;

use chrono::NaiveDate;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OhlcvBar {
    pub date: NaiveDate,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: f64,
}

impl OhlcvBar {
    /// Checks price positivity, volume sign and the high/low envelope.
    pub fn validate(&self) -> Result<()> {
        let fail = |reason: &str| {
            Err(Error::InvalidBar {
                date: self.date.to_string(),
                reason: reason.to_string(),
            })
        };
        let prices = [self.open, self.high, self.low, self.close];
        if prices.iter().any(|p| !p.is_finite() || *p <= 0.0) {
            return fail("prices must be finite and positive");
        }
        if !self.volume.is_finite() || self.volume < 0.0 {
            return fail("volume must be finite and non-negative");
        }
        if self.low > self.high {
            return fail("low exceeds high");
        }
        if self.low > self.open.min(self.close) {
            return fail("low exceeds min(open, close)");
        }
        if self.high < self.open.max(self.close) {
            return fail("high below max(open, close)");
        }
        Ok(())
    }
}

/// Validated, strictly date-ordered bars for one asset.
#[derive(Debug, Clone, PartialEq)]
pub struct OhlcvSeries {
    asset_id: String,
    bars: Vec<OhlcvBar>,
}

impl OhlcvSeries {
    pub fn new(asset_id: impl Into<String>, bars: Vec<OhlcvBar>) -> Result<Self> {
        if bars.is_empty() {
            return Err(Error::EmptySeries);
        }
        for (i, bar) in bars.iter().enumerate() {
            bar.validate()?;
            if i > 0 && bar.date <= bars[i - 1].date {
                return Err(Error::NonIncreasingDate {
                    line: i + 2,
                    date: bar.date.to_string(),
                });
            }
        }
        Ok(Self {
            asset_id: asset_id.into(),
            bars,
        })
    }

    pub fn asset_id(&self) -> &str {
        &self.asset_id
    }

    pub fn bars(&self) -> &[OhlcvBar] {
        &self.bars
    }

    pub fn len(&self) -> usize {
        self.bars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bars.is_empty()
    }

    pub fn closes(&self) -> Vec<f64> {
        self.bars.iter().map(|b| b.close).collect()
    }
}

/// Parses a daily OHLCV CSV document.
///
/// Column lookup is by header name, so column order is free and extra columns
/// (including `Adj Close`) are ignored.
pub fn parse_csv(text: &str, asset_id: &str) -> Result<OhlcvSeries> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let column = |name: &'static str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or(Error::MissingColumn(name))
    };
    let date_col = column("Date")?;
    let open_col = column("Open")?;
    let high_col = column("High")?;
    let low_col = column("Low")?;
    let close_col = column("Close")?;
    let volume_col = column("Volume")?;

    let mut bars: Vec<OhlcvBar> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        let field = |col: usize| record.get(col).unwrap_or("");
        let number = |col: usize, name: &str| -> Result<f64> {
            field(col).parse::<f64>().map_err(|_| Error::Parse {
                line,
                message: format!("unparseable {name} `{}`", field(col)),
            })
        };
        let date = NaiveDate::parse_from_str(field(date_col), "%Y-%m-%d").map_err(|_| {
            Error::Parse {
                line,
                message: format!("unparseable date `{}`", field(date_col)),
            }
        })?;
        if let Some(prev) = bars.last() {
            if date <= prev.date {
                return Err(Error::NonIncreasingDate {
                    line,
                    date: date.to_string(),
                });
            }
        }
        let bar = OhlcvBar {
            date,
            open: number(open_col, "open")?,
            high: number(high_col, "high")?,
            low: number(low_col, "low")?,
            close: number(close_col, "close")?,
            volume: number(volume_col, "volume")?,
        };
        bar.validate()?;
        bars.push(bar);
    }
    OhlcvSeries::new(asset_id, bars)
}

/// Writes a series back out in the canonical column order (no `Adj Close`).
pub fn write_csv(series: &OhlcvSeries) -> String {
    let mut out = String::from("Date,Open,High,Low,Close,Volume\n");
    for b in series.bars() {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            b.date, b.open, b.high, b.low, b.close, b.volume
        );
    }
    out
}

/// Forward horizon `k` and bull threshold `tau` of the regime label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelParams {
    pub horizon: usize,
    pub tau: f64,
}

impl Default for LabelParams {
    fn default() -> Self {
        Self {
            horizon: 7,
            tau: 0.02,
        }
    }
}

impl LabelParams {
    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 {
            return Err(Error::param("horizon must be at least 1"));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::param("tau must be positive"));
        }
        Ok(())
    }
}

/// Forward return from bar `t` to `t + horizon` and its bull (1) / bear (0) label.
///
/// The label uses a strict comparison, so a return exactly equal to `tau` is bear.
pub fn label_regime(series: &OhlcvSeries, t: usize, params: &LabelParams) -> Result<(f64, u8)> {
    params.validate()?;
    let bars = series.bars();
    if t + params.horizon >= bars.len() {
        return Err(Error::HorizonOutOfRange {
            t,
            horizon: params.horizon,
            len: bars.len(),
        });
    }
    let now = bars[t].close;
    let later = bars[t + params.horizon].close;
    let forward_return = (later - now) / now;
    Ok((forward_return, u8::from(forward_return > params.tau)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegimeSample {
    /// The `lookback` bars ending at (and including) the anchor.
    pub window: Vec<OhlcvBar>,
    /// Series index of the window's last bar.
    pub anchor: usize,
    pub forward_return: f64,
    pub label: u8,
}

impl RegimeSample {
    pub fn anchor_date(&self) -> NaiveDate {
        self.window.last().expect("windows are never empty").date
    }
}

/// Slides a `lookback`-bar window over the series with the given stride.
///
/// Anchors sit at `lookback - 1`, `lookback - 1 + stride`, ... as long as the
/// label horizon still fits, giving `floor((L - lookback - k) / stride) + 1`
/// samples.
pub fn build_samples(
    series: &OhlcvSeries,
    lookback: usize,
    params: &LabelParams,
    stride: usize,
) -> Result<Vec<RegimeSample>> {
    params.validate()?;
    if lookback < 1 {
        return Err(Error::param("lookback must be at least 1"));
    }
    if stride < 1 {
        return Err(Error::param("stride must be at least 1"));
    }
    let needed = lookback + params.horizon;
    if series.len() < needed {
        return Err(Error::SeriesTooShort {
            needed,
            have: series.len(),
        });
    }
    let bars = series.bars();
    (lookback - 1..series.len() - params.horizon)
        .step_by(stride)
        .map(|anchor| {
            let (forward_return, label) = label_regime(series, anchor, params)?;
            Ok(RegimeSample {
                window: bars[anchor + 1 - lookback..=anchor].to_vec(),
                anchor,
                forward_return,
                label,
            })
        })
        .collect()
}

/// Keeps only the `max` most recent samples.
pub fn keep_most_recent(mut samples: Vec<RegimeSample>, max: usize) -> Vec<RegimeSample> {
    if samples.len() > max {
        samples.drain(..samples.len() - max);
    }
    samples
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.70,
            val: 0.15,
            test: 0.15,
        }
    }
}

/// Contiguous chronological train/validation/test index ranges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl DatasetSplit {
    pub fn len(&self) -> usize {
        self.test.end
    }

    pub fn is_empty(&self) -> bool {
        self.test.end == 0
    }

    pub fn part_of(&self, index: usize) -> Option<SplitPart> {
        if self.train.contains(&index) {
            Some(SplitPart::Train)
        } else if self.val.contains(&index) {
            Some(SplitPart::Val)
        } else if self.test.contains(&index) {
            Some(SplitPart::Test)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SplitPart {
    Train,
    Val,
    Test,
}

impl SplitPart {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitPart::Train => "train",
            SplitPart::Val => "val",
            SplitPart::Test => "test",
        }
    }
}

/// Splits `n` chronologically ordered samples: train and validation take the
/// floor of their fraction, test takes the remainder.
pub fn split_chrono(n: usize, fractions: SplitFractions) -> Result<DatasetSplit> {
    let SplitFractions { train, val, test } = fractions;
    if [train, val, test].iter().any(|f| !(*f > 0.0)) || ((train + val + test) - 1.0).abs() > 1e-9
    {
        return Err(Error::param("split fractions must be positive and sum to 1"));
    }
    // 0.7 * 30 evaluates to 20.999999999999996; nudge before flooring.
    let floor = |f: f64| (f * n as f64 + 1e-9).floor() as usize;
    let n_train = floor(train);
    let n_val = floor(val);
    if n_train == 0 || n_val == 0 || n_train + n_val >= n {
        return Err(Error::param(format!(
            "{n} samples leave an empty split (train {n_train}, val {n_val})"
        )));
    }
    Ok(DatasetSplit {
        train: 0..n_train,
        val: n_train..n_train + n_val,
        test: n_train + n_val..n,
    })
}

/// `n_negative / n_positive`, the weight applied to positive examples in the loss.
pub fn class_pos_weight(labels: &[u8]) -> Result<f64> {
    let positives = labels.iter().filter(|&&y| y == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::SingleClass {
            positives,
            negatives,
        });
    }
    Ok(negatives as f64 / positives as f64)
}

/// Renders the `anchor_date,forward_return,label,split` manifest.
pub fn samples_manifest(samples: &[RegimeSample], split: &DatasetSplit) -> String {
    let mut out = String::from("anchor_date,forward_return,label,split\n");
    for (i, s) in samples.iter().enumerate() {
        let part = split.part_of(i).map_or("none", SplitPart::as_str);
        let _ = writeln!(
            out,
            "{},{},{},{}",
            s.anchor_date(),
            s.forward_return,
            s.label,
            part
        );
    }
    out
}
