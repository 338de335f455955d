//! `sdn`: generate data, train, evaluate, sample from and benchmark SDN VAEs.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 numerical
//! abort, 4 I/O or file-format error.

mod bench;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sdn_core::vae::DecoderKind;
use sdn_core::{Error, Float};

#[derive(Parser)]
#[command(name = "sdn", version, about = "Spatial dependency network VAEs: data, training, evaluation and benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic scene dataset to a binary file.
    GenerateData(GenerateArgs),
    /// Train a VAE, writing a CSV log and checkpoints to the output directory.
    Train(TrainArgs),
    /// Negative ELBO and optionally the IWAE bound, in bits per dimension.
    Eval(EvalArgs),
    /// β-VAE or FactorVAE disentanglement score of a trained model.
    Metrics(MetricsArgs),
    /// Decode prior samples into a PPM grid.
    Sample(SampleArgs),
    /// Decode a latent interpolation between two dataset images into a PPM strip.
    Interpolate(InterpolateArgs),
    /// Parameter counts, layer runtimes or Jacobian support.
    #[command(subcommand)]
    Bench(BenchCommand),
}

#[derive(Args)]
struct GenerateArgs {
    /// Output dataset file.
    #[arg(long)]
    out: PathBuf,
    /// Image side length in pixels (at least 8).
    #[arg(long, default_value_t = 32, value_parser = clap::value_parser!(u32).range(1..))]
    size: u32,
    /// Seed of the storage order.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum DecoderArg {
    Cnn,
    Sdn,
}

impl From<DecoderArg> for DecoderKind {
    fn from(d: DecoderArg) -> Self {
        match d {
            DecoderArg::Cnn => DecoderKind::Cnn,
            DecoderArg::Sdn => DecoderKind::Sdn,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Run configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Decoder variant; overrides model.decoder.
    #[arg(long, value_enum)]
    decoder: Option<DecoderArg>,
    /// KL weight; overrides train.beta.
    #[arg(long)]
    beta: Option<Float>,
    /// Training seed; overrides train.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Dataset file; overrides data.path.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Extra `section.key=value` overrides, applied after the file and before the flags above.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory for the log, checkpoint and resolved config.
    #[arg(long)]
    out: PathBuf,
    /// Continue from the checkpoint in the output directory when one exists.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Importance samples for the IWAE bound.
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    iwae: Option<u32>,
    /// Seed of the posterior noise.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Evaluate only the first N images of the evaluation set.
    #[arg(long)]
    limit: Option<usize>,
    /// Images per forward pass.
    #[arg(long, default_value_t = 64, value_parser = clap::value_parser!(u32).range(1..))]
    batch: u32,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Betavae,
    Factorvae,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Complete, labeled dataset file.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum)]
    metric: MetricArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV file to append the result row to; the header is written when the file is new.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Prior standard deviation scale; 0 decodes the prior mean.
    #[arg(long, default_value_t = 1.0)]
    temperature: Float,
    /// Grid shape as ROWSxCOLS.
    #[arg(long, default_value = "4x8", value_parser = commands::parse_grid)]
    grid: (usize, usize),
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Draw each pixel from its distribution instead of taking the most probable bin.
    #[arg(long)]
    random_pixels: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InterpolateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    index_a: usize,
    #[arg(long)]
    index_b: usize,
    /// Decoded points on the segment, both ends included.
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u32).range(2..))]
    steps: u32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Parameter counts of the reference layers.
    Params {
        #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u32).range(1..))]
        channels: u32,
    },
    /// Forward wall time of 3x3 / 5x5 conv and 1- / 2-direction SDN layers over input scales, as CSV.
    Runtime(bench::RuntimeArgs),
    /// Jacobian support of one layer on a small grid, as a PGM image.
    Jacobian(bench::JacobianArgs),
}

/// Maps an error to its process exit code.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Invalid(_) | Error::Shape { .. } => 2,
        Error::NonFinite { .. } | Error::Degenerate(_) => 3,
        Error::Io(_) | Error::Format { .. } => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenerateData(a) => commands::generate_data(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Metrics(a) => commands::metrics(a),
        Command::Sample(a) => commands::sample(a),
        Command::Interpolate(a) => commands::interpolate(a),
        Command::Bench(BenchCommand::Params { channels }) => bench::params(channels as usize),
        Command::Bench(BenchCommand::Runtime(a)) => bench::runtime(a),
        Command::Bench(BenchCommand::Jacobian(a)) => bench::jacobian(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(exit_code(&e))
        }
    }
}
