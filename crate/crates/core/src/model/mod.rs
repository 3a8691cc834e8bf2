//! The Simple CNN, its optimizer and the training protocol.

mod cnn;
mod optim;
mod train;

pub use cnn::{CnnConfig, Forward, SimpleCnn};
pub use optim::{AdamW, AdamWConfig, EarlyStopping, PlateauScheduler, StopDecision};
pub use train::{
    fit, tune_threshold, EpochRecord, ImageDataset, SplitView, TrainConfig, TrainedModel,
};
