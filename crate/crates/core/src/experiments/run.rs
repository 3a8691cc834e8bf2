//! End-to-end runs: ingest, encode, fit, evaluate on the test split.

use std::path::Path;

use super::config::{Encoding, ExperimentSpec, RunSpec, Variant};
use super::report::ReportRow;
use crate::error::{Error, Result};
use crate::gaf::{gaf_image, gaf_multichannel};
use crate::image::Image;
use crate::ingest::{
    build_samples, keep_most_recent, parse_csv, split_chrono, OhlcvBar, OhlcvSeries, RegimeSample,
    SplitFractions, SplitPart,
};
use crate::metrics::{evaluate, EvalReport};
use crate::model::{fit, CnnConfig, ImageDataset, SimpleCnn, TrainedModel};
use crate::render::render_chart;

pub fn load_series(path: &Path) -> Result<OhlcvSeries> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let asset_id = path
        .file_stem()
        .map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    parse_csv(&text, &asset_id).map_err(|e| e.context(path.display().to_string()))
}

pub fn encode_window(window: &[OhlcvBar], run: &RunSpec) -> Result<Image> {
    match run.encoding {
        Encoding::Candlestick => render_chart(window, &run.chart),
        Encoding::Gasf => gaf_image(window, run.resolution()),
        Encoding::GafMultichannel => gaf_multichannel(window, run.resolution()),
    }
}

/// Labeled samples of one run with their encoded images.
#[derive(Debug)]
pub struct PreparedData {
    pub samples: Vec<RegimeSample>,
    pub dataset: ImageDataset,
}

impl PreparedData {
    pub fn labels(&self) -> Vec<u8> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Position of the sample anchored on `date` (`YYYY-MM-DD`).
    pub fn find_sample(&self, date: &str) -> Option<usize> {
        self.samples
            .iter()
            .position(|s| s.anchor_date().to_string() == date)
    }
}

pub fn samples_for(run: &RunSpec, series: &OhlcvSeries) -> Result<Vec<RegimeSample>> {
    let samples = build_samples(series, run.lookback(), &run.label, run.stride)?;
    Ok(match run.max_samples {
        Some(m) => keep_most_recent(samples, m),
        None => samples,
    })
}

pub fn prepare_data(run: &RunSpec, series: &OhlcvSeries) -> Result<PreparedData> {
    let samples = samples_for(run, series)?;
    let split = split_chrono(samples.len(), SplitFractions::default())?;
    let images = samples
        .iter()
        .map(|s| encode_window(&s.window, run))
        .collect::<Result<Vec<_>>>()?;
    let labels = samples.iter().map(|s| s.label).collect();
    let dataset = ImageDataset::new(images, labels, split)?;
    Ok(PreparedData { samples, dataset })
}

/// Training-loop seed derived from the run seed, so initialization and
/// shuffling draw from different streams.
pub fn train_seed(seed: u64) -> u64 {
    seed ^ 0x9e37_79b9_7f4a_7c15
}

/// Fits a fresh default network on the train/val splits of `data`.
pub fn train_on(run: &RunSpec, data: &PreparedData, seed: u64) -> Result<TrainedModel> {
    let model = SimpleCnn::new(CnnConfig::default(), seed)?;
    let mut config = run.train.clone();
    config.seed = train_seed(seed);
    fit(
        model,
        &data.dataset.view(SplitPart::Train),
        &data.dataset.view(SplitPart::Val),
        &config,
    )
}

/// Scores the test split at the model's tuned threshold.
pub fn evaluate_test(trained: &TrainedModel, data: &PreparedData) -> Result<EvalReport> {
    let test = data.dataset.view(SplitPart::Test);
    let images: Vec<&Image> = (0..test.len()).map(|i| test.image(i)).collect();
    let scores = trained.predict(&images, 32)?;
    evaluate(&scores, test.labels(), trained.threshold)
}


#[derive(Debug, Clone)]
pub struct RunResult {
    pub row: ReportRow,
    pub spec: RunSpec,
    pub report: EvalReport,
    pub trained: TrainedModel,
    /// Test-split reads observed between data preparation and evaluation.
    pub test_reads_during_fit: usize,
}

fn run_prepared(
    experiment: &str,
    variant: &Variant,
    data: &PreparedData,
    seed: u64,
) -> Result<RunResult> {
    let context = format!("{experiment}/{} seed {seed}", variant.name);
    let before = data.dataset.reads(SplitPart::Test);
    let trained = train_on(&variant.spec, data, seed).map_err(|e| e.context(context.clone()))?;
    let test_reads_during_fit = data.dataset.reads(SplitPart::Test) - before;
    if test_reads_during_fit != 0 {
        return Err(Error::param(format!("{context}: training touched the test split")));
    }
    let report = evaluate_test(&trained, data).map_err(|e| e.context(format!("{context}, test split")))?;
    let row = ReportRow {
        experiment: experiment.to_string(),
        variant: variant.name.clone(),
        seed,
        accuracy: report.accuracy,
        f1: report.f1,
        auc_roc: report.auc_roc,
        avg_precision: report.avg_precision,
        threshold: report.threshold,
        train_epochs: trained.epochs_run(),
    };
    Ok(RunResult {
        row,
        spec: variant.spec.clone(),
        report,
        trained,
        test_reads_during_fit,
    })
}

pub fn run_variant(experiment: &str, variant: &Variant, seed: u64) -> Result<RunResult> {
    let series = load_series(&variant.spec.asset)?;
    let data = prepare_data(&variant.spec, &series)
        .map_err(|e| e.context(format!("{experiment}/{}", variant.name)))?;
    run_prepared(experiment, variant, &data, seed)
}

/// One result per (variant, seed), variants in file order.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<RunResult>> {
    run_experiment_with(spec, |_| {})
}

/// Like [`run_experiment`], calling `progress` after every finished run.
pub fn run_experiment_with(
    spec: &ExperimentSpec,
    mut progress: impl FnMut(&RunResult),
) -> Result<Vec<RunResult>> {
    let mut out = Vec::new();
    for variant in &spec.variants {
        let series = load_series(&variant.spec.asset)?;
        let data = prepare_data(&variant.spec, &series)
            .map_err(|e| e.context(format!("{}/{}", spec.name, variant.name)))?;
        for seed in spec.seeds() {
            let result = run_prepared(&spec.name, variant, &data, seed)?;
            progress(&result);
            out.push(result);
        }
    }
    Ok(out)
}
