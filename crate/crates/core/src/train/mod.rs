//! Training, sliding-window inference, count metrics and ablation sweeps.

mod data;
mod metrics;
mod optim;
mod sweep;
mod trainer;
mod window;

use std::path::PathBuf;

use thiserror::Error;

use crate::annotations::AnnotationError;
use crate::imageio::ImageError;
use crate::labelmaps::MapError;
use crate::model::ModelError;
use crate::tensor::TensorError;

pub use data::{crop_chw, load_dataset, load_split, reflect_pad, Sample};
pub use metrics::{compute_metrics, metrics_csv, MetricsReport};
pub use optim::Adam;
pub use sweep::{ablation_sweep, median, method_name, sweep_csv, sweep_config, SweepAxis, SweepRow};
pub use trainer::{
    constant_baseline, evaluate, history_csv, run_experiment, train, EpochLoss, TrainConfig, TrainOutcome,
};
pub use window::{predict_image, sliding_window_positions, ImagePrediction, PatchPredictor, DEFAULT_STEP};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("no metric pairs")]
    EmptyMetrics,
    #[error("non-finite loss at epoch {epoch}, step {step} (L = {loss})")]
    NonFinite { epoch: usize, step: usize, loss: f64 },
    #[error("image {width}x{height} is smaller than the {patch}x{patch} patch; pad it first")]
    ImageTooSmall { width: usize, height: usize, patch: usize },
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("{path}: {reason}")]
    Dataset { path: PathBuf, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}
