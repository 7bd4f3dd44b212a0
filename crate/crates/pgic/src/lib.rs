//! Progressive image codec built on residual vector quantization.
//!
//! The pipeline: a learned analysis transform maps an RGB image to a latent
//! grid, an N-stage residual vector quantizer turns each latent vector into N
//! codeword indices, and a stage-aligned container makes any prefix of the
//! stream decodable into a usable preview whose quality grows with every
//! stage received. Training, inference, and the wire format are all CPU-only
//! and deterministic under a fixed seed.
//!
//! See the `examples/` directory for one runnable walkthrough per capability,
//! and the `pgic` binary for the command-line surface.

pub mod bitstream;
pub mod cli;
pub mod image;
pub mod metrics;
pub mod model;
pub mod rvq;
pub mod synthetic;
pub mod tensor;

pub use bitstream::{BitstreamHeader, DecodedStream};
pub use model::{Model, ModelConfig};
pub use rvq::{Codebook, RvqStack, StageIndices};
pub use tensor::{Parameter, Tape, Tensor};
