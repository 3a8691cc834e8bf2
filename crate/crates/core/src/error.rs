use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
///
/// Variants split into two families: input/contract violations (bad CSV rows,
/// bad configs, shape mismatches, single-class label sets) and runtime
/// failures (I/O, corrupt binary files). [`Error::is_validation`] tells them
/// apart; the CLI maps the former to exit code 1 and the latter to 2.
#[derive(Debug, Error)]
pub enum Error {
    #[error("csv: missing required column `{0}`")]
    MissingColumn(&'static str),
    #[error("csv line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("csv line {line}: date {date} does not follow the previous row's date")]
    NonIncreasingDate { line: usize, date: String },
    #[error("invalid bar on {date}: {reason}")]
    InvalidBar { date: String, reason: String },
    #[error("series is empty")]
    EmptySeries,
    #[error("series too short: need {needed} bars, have {have}")]
    SeriesTooShort { needed: usize, have: usize },
    #[error("index {t} with horizon {horizon} is out of range for {len} bars")]
    HorizonOutOfRange { t: usize, horizon: usize, len: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("labels must contain both classes ({positives} positive, {negatives} negative)")]
    SingleClass { positives: usize, negatives: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("config {path}:{line}: {message}")]
    Config {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("empty input")]
    EmptyInput,
    #[error("bad {kind} file: {message}")]
    Format { kind: &'static str, message: String },
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
    #[error("png encoding: {0}")]
    Png(#[from] png::EncodingError),
}

impl Error {
    /// True for errors caused by invalid user input rather than the environment.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Context { source, .. } => source.is_validation(),
            other => !matches!(other, Error::Io { .. } | Error::Png(_) | Error::Format { .. }),
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn param(message: impl Into<String>) -> Self {
        Error::InvalidParameter(message.into())
    }

    pub(crate) fn shape(message: impl Into<String>) -> Self {
        Error::Shape(message.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
