//! Binary classification metrics.
//!
//! Predictions are `score >= threshold`. AUC-ROC is the Mann-Whitney pair
//! statistic (ties count one half), average precision is the step-wise
//! (non-interpolated) sum over the descending-score ranking.

use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// Harmonic mean of precision and recall; 0 when both are 0.
    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn check_inputs(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::EmptyInput);
    }
    if scores.len() != labels.len() {
        return Err(Error::shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::param("scores contain NaN"));
    }
    if labels.iter().any(|&y| y > 1) {
        return Err(Error::param("labels must be 0 or 1"));
    }
    Ok(())
}

fn class_counts(labels: &[u8]) -> (usize, usize) {
    let pos = labels.iter().filter(|&&y| y == 1).count();
    (pos, labels.len() - pos)
}

fn require_both_classes(labels: &[u8]) -> Result<(usize, usize)> {
    let (pos, neg) = class_counts(labels);
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass {
            positives: pos,
            negatives: neg,
        });
    }
    Ok((pos, neg))
}

pub fn confusion_at(scores: &[f64], labels: &[u8], threshold: f64) -> Result<Confusion> {
    check_inputs(scores, labels)?;
    let mut c = Confusion::default();
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdEval {
    pub threshold: f64,
    pub confusion: Confusion,
    pub accuracy: f64,
    pub f1: f64,
}

pub fn evaluate_at_threshold(scores: &[f64], labels: &[u8], threshold: f64) -> Result<ThresholdEval> {
    let confusion = confusion_at(scores, labels, threshold)?;
    Ok(ThresholdEval {
        threshold,
        confusion,
        accuracy: confusion.accuracy(),
        f1: confusion.f1(),
    })
}

/// Indices sorted by descending score; equal scores keep their input order.
fn descending_order(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx
}

/// Probability that a random positive outscores a random negative.
pub fn auc_roc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_inputs(scores, labels)?;
    let (pos, neg) = require_both_classes(labels)?;
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Mid-ranks over tie groups, 1-based.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mid_rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            if labels[k] == 1 {
                rank_sum_pos += mid_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

/// Step-wise average precision: the mean of precision@rank over the ranks
/// of the positives.
pub fn average_precision(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_inputs(scores, labels)?;
    let (pos, _) = class_counts(labels);
    if pos == 0 {
        return Err(Error::SingleClass {
            positives: 0,
            negatives: labels.len(),
        });
    }
    let mut tp = 0usize;
    let mut ap = 0.0;
    for (rank, &i) in descending_order(scores).iter().enumerate() {
        if labels[i] == 1 {
            tp += 1;
            ap += (1.0 / pos as f64) * (tp as f64 / (rank + 1) as f64);
        }
    }
    Ok(ap)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Curves {
    /// `(fpr, tpr)` from `(0, 0)` through one point per distinct score.
    pub roc: Vec<(f64, f64)>,
    /// `(recall, precision)` from the `(0, 1)` sentinel through one point per
    /// distinct score.
    pub pr: Vec<(f64, f64)>,
}

pub fn curves(scores: &[f64], labels: &[u8]) -> Result<Curves> {
    check_inputs(scores, labels)?;
    let (pos, neg) = require_both_classes(labels)?;
    let order = descending_order(scores);
    let mut roc = vec![(0.0, 0.0)];
    let mut pr = vec![(0.0, 1.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        roc.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
        pr.push((tp as f64 / pos as f64, tp as f64 / (tp + fp) as f64));
    }
    Ok(Curves { roc, pr })
}

/// Trapezoidal area under a polyline of `(x, y)` points.
pub fn trapezoid_area(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub threshold: f64,
    pub confusion: Confusion,
    pub accuracy: f64,
    pub f1: f64,
    pub auc_roc: f64,
    pub avg_precision: f64,
    pub curves: Curves,
}

/// Full evaluation of scores at a fixed threshold.
pub fn evaluate(scores: &[f64], labels: &[u8], threshold: f64) -> Result<EvalReport> {
    let at = evaluate_at_threshold(scores, labels, threshold)?;
    Ok(EvalReport {
        threshold,
        confusion: at.confusion,
        accuracy: at.accuracy,
        f1: at.f1,
        auc_roc: auc_roc(scores, labels)?,
        avg_precision: average_precision(scores, labels)?,
        curves: curves(scores, labels)?,
    })
}

impl EvalReport {
    /// Flat `key = value` document.
    pub fn to_text(&self) -> String {
        let c = &self.confusion;
        let mut out = String::new();
        let _ = writeln!(out, "threshold = {}", self.threshold);
        let _ = writeln!(out, "n = {}", c.total());
        let _ = writeln!(out, "tp = {}", c.tp);
        let _ = writeln!(out, "fp = {}", c.fp);
        let _ = writeln!(out, "tn = {}", c.tn);
        let _ = writeln!(out, "fn = {}", c.fn_);
        let _ = writeln!(out, "accuracy = {}", self.accuracy);
        let _ = writeln!(out, "f1 = {}", self.f1);
        let _ = writeln!(out, "auc_roc = {}", self.auc_roc);
        let _ = writeln!(out, "avg_precision = {}", self.avg_precision);
        out
    }

    pub fn roc_csv(&self) -> String {
        points_csv("fpr,tpr", &self.curves.roc)
    }

    pub fn pr_csv(&self) -> String {
        points_csv("recall,precision", &self.curves.pr)
    }

    /// Two-by-two confusion table, actual classes as rows.
    pub fn confusion_table(&self) -> String {
        let c = &self.confusion;
        let mut out = String::new();
        let _ = writeln!(out, "{:>12} {:>10} {:>10}", "", "pred_bear", "pred_bull");
        let _ = writeln!(out, "{:>12} {:>10} {:>10}", "actual_bear", c.tn, c.fp);
        let _ = writeln!(out, "{:>12} {:>10} {:>10}", "actual_bull", c.fn_, c.tp);
        out
    }
}

fn points_csv(header: &str, points: &[(f64, f64)]) -> String {
    let mut out = format!("{header}\n");
    for (x, y) in points {
        let _ = writeln!(out, "{x},{y}");
    }
    out
}
