//! A small, fully specified convolutional classifier with BCE-with-logits
//! loss, AdamW, plateau learning-rate decay, early stopping, and binary
//! checkpointing.

pub mod backbone;
pub mod checkpoint;
pub mod loss;
pub mod optim;
pub mod schedule;
pub mod train;

pub use backbone::{BackboneGradients, TinyBackbone};
pub use checkpoint::{Checkpoint, CheckpointError, NamedArray};
pub use loss::bce_with_logits;
pub use optim::{adamw_step, AdamHyper, AdamState};
pub use schedule::{
    early_stop, plateau_scheduler, EarlyStopTracker, PlateauAction, PlateauTracker, StopAction,
};
pub use train::{evaluate_model, EpochStats, FitSummary, Model, ModelGradients, TrainConfig, Trainer};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Layer(#[from] crate::multiwindow::LayerError),
    #[error(transparent)]
    Pipe(#[from] crate::imagepipe::PipeError),
    #[error(transparent)]
    Metrics(#[from] crate::metrics::MetricsError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}
