//! Command-line surface: train, encode, decode, preview, inspect, and the
//! packetized-transmission simulation.
//!
//! Every report is printed twice: a human-readable table and line-delimited
//! machine records (`REC<TAB>kind<TAB>fields...`, field order documented in
//! the README). Exit codes are fixed for scripting: 0 success, 2 usage
//! error, 3 format error, 4 numerical failure.

mod commands;

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::image::ImageError;
use crate::model::ModelError;
use crate::rvq::RvqError;
use crate::tensor::TensorError;

/// Environment variable consulted when --model is omitted.
pub const MODEL_ENV: &str = "PGIC_MODEL";

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, missing files, out-of-range values. Exit 2.
    Usage(String),
    /// Malformed streams, model files, or images. Exit 3.
    Format(String),
    /// Non-finite losses or gradients. Exit 4.
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Format(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Format(m) => write!(f, "{m}"),
            CliError::Numeric(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::NonFiniteLoss { .. } => CliError::Numeric(e.to_string()),
            ModelError::Tensor(TensorError::NonFiniteGrad { .. }) => {
                CliError::Numeric(e.to_string())
            }
            ModelError::BadMagic
            | ModelError::UnsupportedVersion(_)
            | ModelError::TruncatedFile
            | ModelError::FileInconsistent(_)
            | ModelError::Io(_) => CliError::Format(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<crate::bitstream::StreamError> for CliError {
    fn from(e: crate::bitstream::StreamError) -> Self {
        use crate::bitstream::StreamError::*;
        match e {
            BadPayloadSize => CliError::Usage(e.to_string()),
            _ => CliError::Format(e.to_string()),
        }
    }
}

impl From<ImageError> for CliError {
    fn from(e: ImageError) -> Self {
        match e {
            ImageError::Io(_) => CliError::Usage(e.to_string()),
            _ => CliError::Format(e.to_string()),
        }
    }
}

impl From<RvqError> for CliError {
    fn from(e: RvqError) -> Self {
        CliError::Usage(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "pgic",
    about = "Progressive image codec: residual vector quantization with a prefix-decodable bitstream",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model on a directory of images or on synthetic textures.
    Train(TrainArgs),
    /// Encode an image into a .pgic stream.
    Encode(EncodeArgs),
    /// Decode a .pgic stream (optionally only a stage prefix) to an image.
    Decode(DecodeArgs),
    /// Write one preview image per available stage, plus a quality report.
    Preview(PreviewArgs),
    /// Inspect a stream or model file; optionally measure index entropy.
    Inspect(InspectArgs),
    /// Simulate fixed-payload packet transmission of an encoded image.
    PacketSim(PacketSimArgs),
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Directory of training images (.ppm). Omit with --synthetic.
    pub data_dir: Option<PathBuf>,
    /// Train on the built-in seeded synthetic textures instead of files.
    #[arg(long)]
    pub synthetic: bool,
    /// Number of synthetic images to generate.
    #[arg(long, default_value_t = 64)]
    pub synthetic_count: usize,
    /// Total optimizer steps to run.
    #[arg(long, default_value_t = 2000)]
    pub iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output model path.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Quantization stages N.
    #[arg(long)]
    pub stages: Option<u32>,
    /// Bits per index L (codebooks hold 2^L codewords).
    #[arg(long)]
    pub l_bits: Option<u32>,
    /// Trunk channel width.
    #[arg(long)]
    pub c1: Option<u32>,
    /// Latent channel width.
    #[arg(long)]
    pub c2: Option<u32>,
    /// Encoder block pairs.
    #[arg(long)]
    pub m_enc: Option<u32>,
    /// Decoder block pairs.
    #[arg(long)]
    pub m_dec: Option<u32>,
    /// Total downsample factor f (must be even).
    #[arg(long)]
    pub downsample: Option<u32>,
    #[arg(long)]
    pub crop: Option<u32>,
    #[arg(long)]
    pub batch: Option<u32>,
    #[arg(long)]
    pub lr: Option<f32>,
    /// Progressive weighting ratio p in [0, 1].
    #[arg(long)]
    pub p_weight: Option<f32>,
}

#[derive(Args, Debug)]
pub struct EncodeArgs {
    /// Input image (.ppm).
    pub image: PathBuf,
    /// Model file; falls back to $PGIC_MODEL.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Stages to emit (default: all N).
    #[arg(long)]
    pub stages: Option<usize>,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct DecodeArgs {
    /// Input .pgic stream.
    pub stream: PathBuf,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Decode with at most this many stages (default: all present).
    #[arg(long)]
    pub stages: Option<usize>,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PreviewArgs {
    pub stream: PathBuf,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Original image; enables the MSE/PSNR columns.
    #[arg(long)]
    pub original: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    /// A .pgic stream or a model file (detected by magic).
    pub input: PathBuf,
    /// Encode this image directory and report per-stage index entropy
    /// (requires the input, or --model, to be a model file).
    #[arg(long)]
    pub entropy: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PacketSimArgs {
    pub image: PathBuf,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Compressed payload bytes carried per packet.
    #[arg(long, default_value_t = 320)]
    pub payload: usize,
    /// Seconds between packets, used to label the timeline.
    #[arg(long, default_value_t = 60.0)]
    pub interval_label: f64,
    /// Write a preview image at each stage completion.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

/// Execute a parsed command line.
pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train(args) => commands::train(args),
        Command::Encode(args) => commands::encode(args),
        Command::Decode(args) => commands::decode(args),
        Command::Preview(args) => commands::preview(args),
        Command::Inspect(args) => commands::inspect(args),
        Command::PacketSim(args) => commands::packet_sim(args),
    }
}
