//! Residual vector quantization: codebooks, the stage-wise residual
//! recursion, EMA codebook learning, and index-usage analysis.

mod codebook;
mod kmeans;
mod stack;

pub use codebook::{index_entropy, Codebook, EPS_COUNT};
pub use kmeans::kmeans_init;
pub use stack::{RvqEncoding, RvqStack, StageIndices};

use std::fmt;

pub type RvqResult<T> = Result<T, RvqError>;

#[derive(Clone, Debug, PartialEq)]
pub enum RvqError {
    /// Codebook size must be a power of two (K = 2^L).
    NotPowerOfTwo { k: usize },
    /// Vector length does not match the codebook dimension.
    DimensionMismatch { expected: usize, got: usize },
    /// All codebooks in a stack must share K and D.
    MismatchedCodebooks,
    /// Requested stage count outside 1..=N.
    StageOutOfRange { stage: usize, n: usize },
    /// Decoding requires a contiguous stage prefix 1..=i.
    NonContiguousStages { expected: usize, got: usize },
    /// Stage grids must share one spatial shape.
    GridShapeMismatch,
    /// A stored index exceeds the codebook size.
    IndexOutOfRange { index: usize, k: usize },
    /// k-means needs at least K samples.
    TooFewSamples { samples: usize, k: usize },
    /// EMA decay must lie strictly inside (0, 1).
    InvalidDecay { decay: f32 },
    /// Entropy of an empty histogram is undefined.
    EmptyHistogram,
    /// Dead-codeword reseeding needs a non-empty sample pool.
    EmptySamples,
}

impl fmt::Display for RvqError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RvqError::NotPowerOfTwo { k } => write!(f, "codebook size {k} is not a power of two"),
            RvqError::DimensionMismatch { expected, got } => {
                write!(f, "vector dimension {got} does not match codebook dimension {expected}")
            }
            RvqError::MismatchedCodebooks => {
                write!(f, "all codebooks in a stack must share size and dimension")
            }
            RvqError::StageOutOfRange { stage, n } => {
                write!(f, "stage {stage} outside valid range 1..={n}")
            }
            RvqError::NonContiguousStages { expected, got } => {
                write!(f, "expected stage {expected} next in prefix, got {got}")
            }
            RvqError::GridShapeMismatch => write!(f, "stage grids have differing spatial shapes"),
            RvqError::IndexOutOfRange { index, k } => {
                write!(f, "codeword index {index} out of range for codebook of size {k}")
            }
            RvqError::TooFewSamples { samples, k } => {
                write!(f, "k-means needs at least {k} samples, got {samples}")
            }
            RvqError::InvalidDecay { decay } => {
                write!(f, "EMA decay must be in (0, 1), got {decay}")
            }
            RvqError::EmptyHistogram => write!(f, "index histogram is empty"),
            RvqError::EmptySamples => write!(f, "sample pool is empty"),
        }
    }
}

impl std::error::Error for RvqError {}
