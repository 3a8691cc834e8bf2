//! Result tables, per-run artifacts and SVG dashboards.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::run::RunResult;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub experiment: String,
    pub variant: String,
    pub seed: u64,
    pub accuracy: f64,
    pub f1: f64,
    pub auc_roc: f64,
    pub avg_precision: f64,
    pub threshold: f64,
    pub train_epochs: usize,
}

pub const RESULTS_HEADER: &str =
    "experiment,variant,seed,accuracy,f1,auc_roc,avg_precision,threshold,train_epochs";

pub fn results_csv(rows: &[ReportRow]) -> String {
    let mut out = format!("{RESULTS_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.experiment,
            r.variant,
            r.seed,
            r.accuracy,
            r.f1,
            r.auc_roc,
            r.avg_precision,
            r.threshold,
            r.train_epochs
        );
    }
    out
}

pub fn parse_results_csv(text: &str) -> Result<Vec<ReportRow>> {
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| Error::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    if headers.iter().collect::<Vec<_>>().join(",") != RESULTS_HEADER {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `{RESULTS_HEADER}`"),
        });
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        let field = |k: usize| record.get(k).unwrap_or("");
        let num = |k: usize| -> Result<f64> {
            field(k).parse().map_err(|_| Error::Parse {
                line,
                message: format!("bad number `{}`", field(k)),
            })
        };
        let int = |k: usize| -> Result<u64> {
            field(k).parse().map_err(|_| Error::Parse {
                line,
                message: format!("bad integer `{}`", field(k)),
            })
        };
        rows.push(ReportRow {
            experiment: field(0).to_string(),
            variant: field(1).to_string(),
            seed: int(2)?,
            accuracy: num(3)?,
            f1: num(4)?,
            auc_roc: num(5)?,
            avg_precision: num(6)?,
            threshold: num(7)?,
            train_epochs: int(8)? as usize,
        });
    }
    Ok(rows)
}

/// Per-variant medians over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub experiment: String,
    pub variant: String,
    pub runs: usize,
    pub accuracy: f64,
    pub f1: f64,
    pub auc_roc: f64,
    pub avg_precision: f64,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => (v[n / 2 - 1] + v[n / 2]) / 2.0,
    }
}

/// Groups by (experiment, variant) in order of first appearance.
pub fn summarize(rows: &[ReportRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(&str, &str)> = Vec::new();
    for r in rows {
        let k = (r.experiment.as_str(), r.variant.as_str());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(e, v)| {
            let group: Vec<&ReportRow> = rows
                .iter()
                .filter(|r| r.experiment == e && r.variant == v)
                .collect();
            let med = |f: fn(&ReportRow) -> f64| median(&group.iter().map(|r| f(r)).collect::<Vec<_>>());
            SummaryRow {
                experiment: e.to_string(),
                variant: v.to_string(),
                runs: group.len(),
                accuracy: med(|r| r.accuracy),
                f1: med(|r| r.f1),
                auc_roc: med(|r| r.auc_roc),
                avg_precision: med(|r| r.avg_precision),
            }
        })
        .collect()
}

pub fn summary_csv(summary: &[SummaryRow]) -> String {
    let mut out = String::from(
        "experiment,variant,runs,median_accuracy,median_f1,median_auc_roc,median_avg_precision\n",
    );
    for s in summary {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            s.experiment, s.variant, s.runs, s.accuracy, s.f1, s.auc_roc, s.avg_precision
        );
    }
    out
}

pub const ACCURACY_COLOR: &str = "#1f77b4";
pub const AUC_COLOR: &str = "#2ca02c";

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Grouped bars of median accuracy (blue) and AUC-ROC (green) per variant.
pub fn dashboard_svg(experiment: &str, summary: &[SummaryRow]) -> String {
    const GROUP: f64 = 80.0;
    const BAR: f64 = 26.0;
    const LEFT: f64 = 50.0;
    const TOP: f64 = 50.0;
    const PLOT_H: f64 = 220.0;
    let width = LEFT + GROUP * summary.len().max(1) as f64 + 20.0;
    let height = TOP + PLOT_H + 50.0;
    let base = TOP + PLOT_H;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{LEFT:.0}" y="20" font-size="14">{}</text>"#,
        xml_escape(experiment)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT:.0}" y="28" width="10" height="10" fill="{ACCURACY_COLOR}"/><text x="{:.0}" y="37">accuracy</text>"#,
        LEFT + 14.0
    );
    let _ = writeln!(
        s,
        r#"<rect x="{:.0}" y="28" width="10" height="10" fill="{AUC_COLOR}"/><text x="{:.0}" y="37">AUC-ROC</text>"#,
        LEFT + 90.0,
        LEFT + 104.0
    );
    for tick in 0..=4 {
        let v = tick as f64 / 4.0;
        let y = base - v * PLOT_H;
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT:.0}" y1="{y:.1}" x2="{:.0}" y2="{y:.1}" stroke="#dddddd"/><text x="{:.0}" y="{:.1}" text-anchor="end">{v:.2}</text>"##,
            width - 20.0,
            LEFT - 6.0,
            y + 4.0
        );
    }
    for (i, row) in summary.iter().enumerate() {
        let x0 = LEFT + GROUP * i as f64 + (GROUP - 2.0 * BAR - 4.0) / 2.0;
        for (j, (class, value, color)) in [
            ("accuracy", row.accuracy, ACCURACY_COLOR),
            ("auc", row.auc_roc, AUC_COLOR),
        ]
        .into_iter()
        .enumerate()
        {
            let v = if value.is_finite() { value.clamp(0.0, 1.0) } else { 0.0 };
            let h = v * PLOT_H;
            let x = x0 + j as f64 * (BAR + 4.0);
            let _ = writeln!(
                s,
                r#"<rect class="{class}" x="{x:.1}" y="{:.1}" width="{BAR:.0}" height="{h:.1}" fill="{color}"><title>{} {class} {value:.3}</title></rect>"#,
                base - h,
                xml_escape(&row.variant)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.0}" text-anchor="middle">{}</text>"#,
            LEFT + GROUP * (i as f64 + 0.5),
            base + 16.0,
            xml_escape(&row.variant)
        );
    }
    let _ = writeln!(
        s,
        r#"<line x1="{LEFT:.0}" y1="{base:.0}" x2="{:.0}" y2="{base:.0}" stroke="black"/>"#,
        width - 20.0
    );
    s.push_str("</svg>\n");
    s
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
    std::fs::write(path, contents).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    Ok(path.to_path_buf())
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))
}

/// Writes `summary.csv` and one `{experiment}.svg` per experiment.
pub fn emit_summary(rows: &[ReportRow], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if rows.is_empty() {
        return Err(Error::EmptyInput);
    }
    ensure_dir(out_dir)?;
    let summary = summarize(rows);
    let mut written = vec![write(&out_dir.join("summary.csv"), summary_csv(&summary))?];
    let mut experiments: Vec<&str> = Vec::new();
    for s in &summary {
        if !experiments.contains(&s.experiment.as_str()) {
            experiments.push(&s.experiment);
        }
    }
    for e in experiments {
        let group: Vec<SummaryRow> = summary.iter().filter(|s| s.experiment == e).cloned().collect();
        written.push(write(&out_dir.join(format!("{e}.svg")), dashboard_svg(e, &group))?);
    }
    Ok(written)
}

/// Directory holding the per-run artifacts of one experiment.
pub fn runs_dir(out_dir: &Path, experiment: &str) -> PathBuf {
    out_dir.join("runs").join(experiment)
}

/// Writes `results.csv`, the summary and dashboards, and per run: checkpoint,
/// resolved config, training history, ROC/PR curves, confusion table and
/// evaluation report.
pub fn emit_report(results: &[RunResult], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if results.is_empty() {
        return Err(Error::EmptyInput);
    }
    ensure_dir(out_dir)?;
    let rows: Vec<ReportRow> = results.iter().map(|r| r.row.clone()).collect();
    let mut written = vec![write(&out_dir.join("results.csv"), results_csv(&rows))?];
    written.extend(emit_summary(&rows, out_dir)?);
    for r in results {
        let dir = runs_dir(out_dir, &r.row.experiment);
        ensure_dir(&dir)?;
        let stem = format!("{}_{}", r.row.variant, r.row.seed);
        let mut spec = r.spec.clone();
        if let Ok(abs) = std::fs::canonicalize(&spec.asset) {
            spec.asset = abs;
        }
        written.push(write(&dir.join(format!("{stem}.cvck")), r.trained.to_checkpoint_bytes())?);
        written.push(write(
            &dir.join(format!("{stem}.cfg")),
            spec.to_config_text(&r.row.experiment, r.row.seed),
        )?);
        written.push(write(&dir.join(format!("{stem}_history.csv")), r.trained.history_csv())?);
        written.push(write(&dir.join(format!("{stem}_roc.csv")), r.report.roc_csv())?);
        written.push(write(&dir.join(format!("{stem}_pr.csv")), r.report.pr_csv())?);
        written.push(write(&dir.join(format!("{stem}_confusion.txt")), r.report.confusion_table())?);
        written.push(write(&dir.join(format!("{stem}_eval.txt")), r.report.to_text())?);
    }
    Ok(written)
}
