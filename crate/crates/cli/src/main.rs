//! `chartregime` command-line interface.
//!
//! Exit codes: 0 on success, 1 for invalid input (bad arguments, data or
//! configs), 2 for runtime failures such as unreadable or unwritable files.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chartregime::experiments::{
    self, emit_report, emit_summary, encode_window, evaluate_test, load_series, load_spec,
    parse_results_csv, prepare_data, run_experiment_with, samples_for, summarize,
    synthetic::{trend_series, TrendSpec},
    Encoding, ExperimentSpec, RunSpec,
};
use chartregime::gradcam::{gradcam_map, write_triptych, CamTarget};
use chartregime::image::Image;
use chartregime::ingest::{
    class_pos_weight, samples_manifest, split_chrono, write_csv, LabelParams, SplitFractions,
};
use chartregime::model::TrainedModel;
use chartregime::render::{ChartSpec, Components};
use chartregime::{Error, Result};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "chartregime", version, about = "Chart-image market regime prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Candlestick,
    Gasf,
    #[value(name = "gaf-mc")]
    GafMc,
}

#[derive(Subcommand)]
enum Command {
    /// Label lookback windows and print the sample manifest.
    Ingest {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long, default_value_t = 30)]
        lookback: usize,
        #[arg(long, default_value_t = 7)]
        horizon: usize,
        #[arg(long, default_value_t = 0.02)]
        tau: f64,
        #[arg(long, default_value_t = 5)]
        stride: usize,
        /// Keep only the most recent samples.
        #[arg(long)]
        max_samples: Option<usize>,
        /// Write the manifest here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Encode one lookback window as an image (.png or .cvim by extension).
    Encode {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long, value_enum, default_value = "candlestick")]
        method: Method,
        #[arg(long, default_value_t = 224)]
        resolution: usize,
        #[arg(long, default_value_t = 30)]
        lookback: usize,
        #[arg(long)]
        volume: bool,
        #[arg(long)]
        sma: bool,
        #[arg(long)]
        bb: bool,
        /// Date of the window's last bar; defaults to the latest bar.
        #[arg(long)]
        end: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one variant of a config and save its checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Variant to train; defaults to the first.
        #[arg(long)]
        variant: Option<String>,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on its test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Run config; defaults to the `.cfg` next to the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory for curve CSVs and the confusion table.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// GradCAM triptychs for one sample or the whole test split.
    Gradcam {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Anchor date of the sample; defaults to every test sample.
        #[arg(long)]
        sample: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Explain the bear class (negated logit).
        #[arg(long)]
        bear: bool,
        #[arg(long, default_value = "gradcam")]
        out: PathBuf,
    },
    /// Run every variant and seed of an experiment config.
    Experiment {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rebuild summary and dashboards from a results directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Write a synthetic trend-block OHLCV CSV.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 400)]
        blocks: usize,
        #[arg(long, default_value_t = 40)]
        block_len: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    std::fs::write(path, contents).map_err(|e| io_error(format!("writing {}", path.display()), e))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_error(format!("creating {}", dir.display()), e))
}

fn io_error(context: String, source: std::io::Error) -> Error {
    Error::Io { context, source }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Ingest {
            csv,
            lookback,
            horizon,
            tau,
            stride,
            max_samples,
            out,
        } => ingest(&csv, lookback, LabelParams { horizon, tau }, stride, max_samples, out),
        Command::Encode {
            csv,
            method,
            resolution,
            lookback,
            volume,
            sma,
            bb,
            end,
            out,
        } => {
            let components = Components {
                volume,
                sma,
                bollinger: bb,
            };
            encode(&csv, method, resolution, lookback, components, end, &out)
        }
        Command::Train {
            config,
            seed,
            variant,
            out,
        } => train(&config, seed, variant.as_deref(), &out),
        Command::Eval {
            checkpoint,
            config,
            out,
        } => eval(&checkpoint, config, out),
        Command::Gradcam {
            checkpoint,
            sample,
            config,
            bear,
            out,
        } => gradcam(&checkpoint, sample.as_deref(), config, bear, &out),
        Command::Experiment { spec, out } => experiment(&spec, &out),
        Command::Report { input } => report(&input),
        Command::Synth {
            out,
            blocks,
            block_len,
            seed,
        } => {
            let series = trend_series(&TrendSpec {
                blocks,
                block_len,
                seed,
                ..TrendSpec::default()
            })?;
            write_file(&out, write_csv(&series))?;
            println!("wrote {} bars to {}", series.len(), out.display());
            Ok(())
        }
    }
}

fn ingest(
    csv: &Path,
    lookback: usize,
    label: LabelParams,
    stride: usize,
    max_samples: Option<usize>,
    out: Option<PathBuf>,
) -> Result<()> {
    label.validate()?;
    if lookback == 0 || stride == 0 {
        return Err(Error::InvalidParameter("lookback and stride must be positive".into()));
    }
    let series = load_series(csv)?;
    let run = RunSpec {
        asset: csv.to_path_buf(),
        encoding: Encoding::Candlestick,
        chart: ChartSpec::new(lookback, 224, Components::PRICE_ONLY),
        label,
        train: Default::default(),
        stride,
        max_samples,
    };
    let samples = samples_for(&run, &series)?;
    let split = split_chrono(samples.len(), SplitFractions::default())?;
    let manifest = samples_manifest(&samples, &split);
    let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
    let bulls = labels.iter().filter(|&&y| y == 1).count();
    eprintln!(
        "{} bars, {} samples, {} bull ({:.1}%), split {}/{}/{}",
        series.len(),
        samples.len(),
        bulls,
        100.0 * bulls as f64 / samples.len() as f64,
        split.train.len(),
        split.val.len(),
        split.test.len()
    );
    if let Ok(w) = class_pos_weight(&labels[split.train.clone()]) {
        eprintln!("train positive-class weight {w:.4}");
    }
    match out {
        Some(path) => write_file(&path, manifest),
        None => {
            print!("{manifest}");
            Ok(())
        }
    }
}

fn encode(
    csv: &Path,
    method: Method,
    resolution: usize,
    lookback: usize,
    components: Components,
    end: Option<String>,
    out: &Path,
) -> Result<()> {
    if !experiments::RESOLUTIONS.contains(&resolution) {
        return Err(Error::InvalidParameter(format!(
            "resolution {resolution} not one of {:?}",
            experiments::RESOLUTIONS
        )));
    }
    let series = load_series(csv)?;
    let bars = series.bars();
    let last = match &end {
        Some(date) => bars
            .iter()
            .position(|b| b.date.to_string() == *date)
            .ok_or_else(|| Error::InvalidParameter(format!("no bar dated {date}")))?,
        None => bars.len() - 1,
    };
    if lookback == 0 || last + 1 < lookback {
        return Err(Error::SeriesTooShort {
            needed: lookback,
            have: last + 1,
        });
    }
    let run = RunSpec {
        asset: csv.to_path_buf(),
        encoding: match method {
            Method::Candlestick => Encoding::Candlestick,
            Method::Gasf => Encoding::Gasf,
            Method::GafMc => Encoding::GafMultichannel,
        },
        chart: ChartSpec::new(lookback, resolution, components),
        label: LabelParams::default(),
        train: Default::default(),
        stride: 1,
        max_samples: None,
    };
    let image = encode_window(&bars[last + 1 - lookback..=last], &run)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    match out.extension().and_then(|e| e.to_str()) {
        Some("cvim") => image.write_cvim(out)?,
        _ => image.write_png(out)?,
    }
    println!("wrote {}x{} image to {}", image.height(), image.width(), out.display());
    Ok(())
}

fn pick_variant<'a>(spec: &'a ExperimentSpec, name: Option<&str>) -> Result<&'a experiments::Variant> {
    match name {
        Some(n) => spec
            .variant(n)
            .ok_or_else(|| Error::InvalidParameter(format!("no variant named `{n}`"))),
        None => Ok(&spec.variants[0]),
    }
}

fn train(config: &Path, seed: u64, variant: Option<&str>, out: &Path) -> Result<()> {
    let spec = load_spec(config)?;
    let variant = pick_variant(&spec, variant)?;
    let series = load_series(&variant.spec.asset)?;
    let data = prepare_data(&variant.spec, &series)?;
    let trained = experiments::train_on(&variant.spec, &data, seed)?;
    create_dir(out)?;
    let stem = format!("{}_{seed}", variant.name);
    let mut run = variant.spec.clone();
    if let Ok(abs) = std::fs::canonicalize(&run.asset) {
        run.asset = abs;
    }
    let checkpoint = out.join(format!("{stem}.cvck"));
    trained.save(&checkpoint)?;
    write_file(&out.join(format!("{stem}.cfg")), run.to_config_text(&spec.name, seed))?;
    write_file(&out.join(format!("{stem}_history.csv")), trained.history_csv())?;
    for r in &trained.history {
        println!(
            "epoch {:>3}  train {:.4}  val {:.4}  lr {:.2e}",
            r.epoch, r.train_loss, r.val_loss, r.lr
        );
    }
    println!(
        "best epoch {}, threshold {:.4} (val F1 {:.4}), checkpoint {}",
        trained.best_epoch,
        trained.threshold,
        trained.val_f1,
        checkpoint.display()
    );
    Ok(())
}

/// Loads a checkpoint with the run config stored beside it (or `config`).
fn load_run(checkpoint: &Path, config: Option<PathBuf>) -> Result<(TrainedModel, RunSpec)> {
    let trained = TrainedModel::load(checkpoint)?;
    let config = config.unwrap_or_else(|| checkpoint.with_extension("cfg"));
    let spec = load_spec(&config)?;
    Ok((trained, spec.variants[0].spec.clone()))
}

fn eval(checkpoint: &Path, config: Option<PathBuf>, out: Option<PathBuf>) -> Result<()> {
    let (trained, run) = load_run(checkpoint, config)?;
    let series = load_series(&run.asset)?;
    let data = prepare_data(&run, &series)?;
    let report = evaluate_test(&trained, &data)?;
    print!("{}", report.to_text());
    print!("{}", report.confusion_table());
    if let Some(dir) = out {
        create_dir(&dir)?;
        write_file(&dir.join("eval.txt"), report.to_text())?;
        write_file(&dir.join("roc.csv"), report.roc_csv())?;
        write_file(&dir.join("pr.csv"), report.pr_csv())?;
        write_file(&dir.join("confusion.txt"), report.confusion_table())?;
    }
    Ok(())
}

fn gradcam(
    checkpoint: &Path,
    sample: Option<&str>,
    config: Option<PathBuf>,
    bear: bool,
    out: &Path,
) -> Result<()> {
    let (trained, run) = load_run(checkpoint, config)?;
    let series = load_series(&run.asset)?;
    let data = prepare_data(&run, &series)?;
    let indices: Vec<usize> = match sample {
        Some(date) => vec![data
            .find_sample(date)
            .ok_or_else(|| Error::InvalidParameter(format!("no sample anchored on {date}")))?],
        None => data.dataset.split().test.clone().collect(),
    };
    let target = if bear { CamTarget::Bear } else { CamTarget::Bull };
    create_dir(out)?;
    let (mut right_sum, mut left_sum) = (0.0, 0.0);
    println!("sample,label,pred,score,right_quarter,left_quarter");
    for &i in &indices {
        let s = &data.samples[i];
        let image: Image = encode_window(&s.window, &run)?;
        let score = trained.predict(&[&image], 1)?[0];
        let pred = u8::from(score >= trained.threshold);
        let map = gradcam_map(&trained, &image, target)?;
        let (right, left) = map.right_left_attention();
        right_sum += right;
        left_sum += left;
        let id = s.anchor_date().to_string();
        write_triptych(out, &id, s.label, pred, &image, &map)?;
        println!("{id},{},{pred},{score:.4},{right:.4},{left:.4}", s.label);
    }
    let n = indices.len() as f64;
    eprintln!(
        "mean attention: right quarter {:.4}, left quarter {:.4} over {} samples",
        right_sum / n,
        left_sum / n,
        indices.len()
    );
    Ok(())
}

fn experiment(spec_path: &Path, out: &Path) -> Result<()> {
    let spec = load_spec(spec_path)?;
    eprintln!(
        "{}: {} variant(s) x {} seed(s)",
        spec.name,
        spec.variants.len(),
        spec.repeats
    );
    let results = run_experiment_with(&spec, |r| {
        eprintln!(
            "  {} seed {}: acc {:.3} f1 {:.3} auc {:.3} ap {:.3} ({} epochs)",
            r.row.variant,
            r.row.seed,
            r.row.accuracy,
            r.row.f1,
            r.row.auc_roc,
            r.row.avg_precision,
            r.row.train_epochs
        );
    })?;
    emit_report(&results, out)?;
    println!("wrote {}", out.join("results.csv").display());
    Ok(())
}

fn report(dir: &Path) -> Result<()> {
    let path = dir.join("results.csv");
    let text = std::fs::read_to_string(&path)
        .map_err(|e| io_error(format!("reading {}", path.display()), e))?;
    let rows = parse_results_csv(&text)?;
    emit_summary(&rows, dir)?;
    println!("experiment,variant,runs,median_accuracy,median_f1,median_auc_roc,median_avg_precision");
    for s in summarize(&rows) {
        println!(
            "{},{},{},{:.3},{:.3},{:.3},{:.3}",
            s.experiment, s.variant, s.runs, s.accuracy, s.f1, s.auc_roc, s.avg_precision
        );
    }
    Ok(())
}

