//! Training loop with concurrent preprocessing, checkpoints, reconstruction
//! and evaluation.

mod checkpoint;
mod config;
mod infer;
mod prefetch;
mod train;

use std::path::PathBuf;

use thiserror::Error;

pub use checkpoint::{Checkpoint, FORMAT_VERSION, MAGIC};
pub use config::TrainConfig;
pub use infer::{evaluate, evaluate_with, reconstruct, CaseReport, EvalReport, Summary};
pub use prefetch::Prefetcher;
pub use train::{load_sample, preprocess, train, volume_to_tensor, EpochStats, Sample, TrainOutcome};

use crate::dataset::{DatasetError, Split};
use crate::io::FormatError;
use crate::nn::NnError;
use crate::ops::OpsError;
use crate::optim::OptimError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("data file {path}: {source}")]
    Data {
        path: PathBuf,
        #[source]
        source: FormatError,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Ops(#[from] OpsError),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("checkpoint does not match the current config: {0}")]
    ResumeMismatch(String),
    #[error("corrupt checkpoint: {0}")]
    CheckpointCorrupt(String),
    #[error("checkpoint format version {found}, this build reads version {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("split {0} has no usable pairs")]
    EmptySplit(Split),
}
