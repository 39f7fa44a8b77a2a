//! Experiment orchestration: configuration, dataset ingestion, synthetic
//! data generation, the training loop, checkpointing, end-to-end evaluation,
//! and single-image inference.

mod checkpoint;
mod config;
mod dataset;
mod evaluate;
mod synth;
mod train;
mod verify;

pub use checkpoint::{load_checkpoint, restore_network, save_checkpoint, Checkpoint};
pub use config::{AugmentKind, ExperimentConfig, InputMode};
pub use dataset::{load_dataset, DatasetIndex, DatasetRecord, Split};
pub use evaluate::{
    build_network_input, evaluate, evaluate_with, predict_probability, read_probability_map,
    segment, write_probability_map, EvalOutcome,
};
pub use synth::{generate_synthetic, SyntheticSpec};
pub use train::{train, Adam, TrainOutcome};
pub use verify::{gradient_verification_suite, CheckOutcome};

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("dataset directory {0} does not exist")]
    MissingDataDir(PathBuf),
    #[error("no images found for split '{split}' under {dir}")]
    EmptySplit { split: String, dir: PathBuf },
    #[error("image {0} has no annotation file ({1} not found)")]
    MissingAnnotation(PathBuf, PathBuf),
    #[error("{image}: image is {iw}x{ih} but annotation {anno} is {aw}x{ah}")]
    AnnotationDimensionMismatch {
        image: PathBuf,
        iw: usize,
        ih: usize,
        anno: PathBuf,
        aw: usize,
        ah: usize,
    },
    #[error("unreadable file {path}: {detail}")]
    Unreadable { path: PathBuf, detail: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("checkpoint {0} is malformed: {1}")]
    BadCheckpoint(PathBuf, String),
    #[error("file {0} is malformed: {1}")]
    BadFile(PathBuf, String),
    #[error("checkpoint/config mismatch: {0}")]
    CheckpointMismatch(String),
    #[error("training loss became non-finite at step {step} (l_final = {value})")]
    NonFiniteLoss { step: usize, value: f32 },
    #[error(transparent)]
    Preprocess(#[from] crate::preprocess::PreprocessError),
    #[error(transparent)]
    Network(#[from] crate::network::NetworkError),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
    #[error(transparent)]
    Metrics(#[from] crate::metrics::MetricsError),
    #[error(transparent)]
    Mask(#[from] crate::mask::MaskError),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}
