//! Chart-image market regime prediction.
//!
//! The pipeline turns daily OHLCV bars into labeled lookback windows
//! ([`ingest`]), encodes each window as an RGB image (candlestick charts via
//! [`render`], Gramian angular fields via [`gaf`]), trains a small CNN built
//! on a from-scratch autograd engine ([`autograd`], [`model`]), tunes the
//! decision threshold on validation data, scores the test split
//! ([`metrics`]) and explains predictions with GradCAM ([`gradcam`]).
//! [`experiments`] wires all of it into config-driven ablation runs.

pub mod autograd;
pub mod error;
pub mod experiments;
pub mod gaf;
pub mod gradcam;
pub mod image;
pub mod indicators;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod render;

pub use error::{Error, Result};
