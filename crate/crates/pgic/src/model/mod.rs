//! The full codec model: analysis/synthesis transforms with per-stage
//! feature modulation, the progressive training objective, and persistence.

mod config;
mod io;
mod loss;
mod pipeline;
mod train;
mod transform;

pub use config::ModelConfig;
pub use io::{load_model, save_model, MODEL_MAGIC, MODEL_VERSION};
pub use loss::{commitment_loss, lambda_weights, progressive_loss};
pub use pipeline::{
    crop_to_original, decode_stream_bytes, encode_to_stream_bytes, eval_stage_mse, pad_to_multiple,
    stage_reconstructions,
};
pub use train::{init_stack_kmeans, EpochMetrics, StageTrainMetrics, Trainer, TrainerOptions};
pub use transform::{
    AnalysisTransform, DepthwiseBlock, FfnBlock, Model, ModulationTable, PointwiseConv,
    SynthesisBlock, SynthesisTransform,
};

use std::fmt;

use crate::rvq::RvqError;
use crate::tensor::TensorError;

pub type ModelResult<T> = Result<T, ModelError>;

#[derive(Debug)]
pub enum ModelError {
    Tensor(TensorError),
    Rvq(RvqError),
    /// Input dims must be multiples of the total downsample factor;
    /// callers pad first (see `pad_to_multiple`).
    NeedsPadding {
        height: usize,
        width: usize,
        factor: usize,
    },
    /// Synthesis stage outside 1..=N.
    StageOutOfRange { stage: usize, n: usize },
    /// A config field violates its invariants.
    BadConfig(String),
    /// Loss lists passed to the progressive objective disagree in length.
    LossLengthMismatch { expected: usize, got: usize },
    /// Weighting ratio p outside [0, 1].
    BadWeightRatio { p: f32 },
    /// Training aborted on a non-finite loss.
    NonFiniteLoss { step: usize, value: f32 },
    /// Training needs a non-empty dataset.
    EmptyDataset,
    /// Model file problems.
    BadMagic,
    UnsupportedVersion(u8),
    TruncatedFile,
    FileInconsistent(String),
    Io(String),
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelError::Tensor(e) => write!(f, "{e}"),
            ModelError::Rvq(e) => write!(f, "{e}"),
            ModelError::NeedsPadding { height, width, factor } => write!(
                f,
                "input {width}x{height} not divisible by {factor}; pad the image first"
            ),
            ModelError::StageOutOfRange { stage, n } => {
                write!(f, "stage {stage} outside valid range 1..={n}")
            }
            ModelError::BadConfig(why) => write!(f, "invalid model config: {why}"),
            ModelError::LossLengthMismatch { expected, got } => {
                write!(f, "expected {expected} per-stage entries, got {got}")
            }
            ModelError::BadWeightRatio { p } => {
                write!(f, "weighting ratio p must be in [0, 1], got {p}")
            }
            ModelError::NonFiniteLoss { step, value } => {
                write!(f, "non-finite loss {value} at step {step}")
            }
            ModelError::EmptyDataset => write!(f, "training dataset is empty"),
            ModelError::BadMagic => write!(f, "not a model file (bad magic)"),
            ModelError::UnsupportedVersion(v) => write!(f, "unsupported model file version {v}"),
            ModelError::TruncatedFile => write!(f, "model file is truncated"),
            ModelError::FileInconsistent(why) => {
                write!(f, "model file inconsistent with its config: {why}")
            }
            ModelError::Io(why) => write!(f, "model file I/O error: {why}"),
        }
    }
}

impl std::error::Error for ModelError {}

impl From<TensorError> for ModelError {
    fn from(e: TensorError) -> Self {
        ModelError::Tensor(e)
    }
}

impl From<RvqError> for ModelError {
    fn from(e: RvqError) -> Self {
        ModelError::Rvq(e)
    }
}
