//! Config-driven experiment runs and their reports.

mod config;
mod report;
mod run;
pub mod synthetic;

pub use config::{load_spec, parse_spec, Encoding, ExperimentSpec, RunSpec, Variant, LOOKBACKS, RESOLUTIONS};
pub use report::{
    dashboard_svg, emit_report, emit_summary, median, parse_results_csv, results_csv, runs_dir,
    summarize, summary_csv, ReportRow, SummaryRow, ACCURACY_COLOR, AUC_COLOR, RESULTS_HEADER,
};
pub use run::{
    encode_window, evaluate_test, load_series, prepare_data, run_experiment, run_experiment_with,
    run_variant, samples_for, train_on, train_seed, PreparedData, RunResult,
};
