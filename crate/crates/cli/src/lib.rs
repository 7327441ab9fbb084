//! Command-line driver: dataset generation, training, evaluation,
//! one-shot convolution and gradient audits.
//!
//! Exit codes: 0 success, 1 usage/parse/I/O, 2 geometry/domain, 3 failed
//! gradient check.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;

pub mod commands;
pub mod config;
pub mod format;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] convtensor::Error),
    #[error("gradient check failed")]
    GradCheckFailed,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Io(_) | CliError::Parse { .. } | CliError::Config(_) => 1,
            CliError::Core(convtensor::Error::Config(_)) => 1,
            CliError::Core(_) => 2,
            CliError::GradCheckFailed => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "convtensor", version, about = "Tensor-contraction CNNs trained by batch backpropagation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write train/validation datasets labelled by a teacher network.
    Generate {
        /// Run configuration; its network is the teacher.
        #[arg(long)]
        config: PathBuf,
        /// Output directory for train.txt, validation.txt and teacher.model.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Training samples.
        #[arg(long, default_value_t = 32)]
        count: usize,
        /// Validation samples.
        #[arg(long, default_value_t = 8)]
        validation_count: usize,
    },
    /// Train a network and write the final model.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Training set; overrides the config's data.train.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Validation set; overrides the config's data.validation.
        #[arg(long)]
        validation: Option<PathBuf>,
        /// Model output path.
        #[arg(long)]
        out: PathBuf,
        /// Initialization seed; overrides training.seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print the batch loss of a model on a dataset.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "mse")]
        loss: String,
    },
    /// Convolve a tensor file with a filter and print the result row-major.
    Conv {
        /// Filter coordinates, comma-separated, row-major.
        #[arg(long, allow_hyphen_values = true)]
        filter: String,
        /// Filter dims; defaults to a vector.
        #[arg(long)]
        filter_dims: Option<String>,
        /// Strides; default 1 along every order.
        #[arg(long)]
        strides: Option<String>,
        #[arg(long, default_value = "valid")]
        padding: String,
        /// Input tensor file.
        #[arg(long)]
        data: PathBuf,
    },
    /// Compare analytic gradients with central differences on a random instance.
    Gradcheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Samples in the random batch.
        #[arg(long, default_value_t = 4)]
        count: usize,
        /// Perturb the analytic gradient of the first filter (detector self-test).
        #[arg(long, hide = true)]
        corrupt: bool,
    },
}

/// Runs the CLI on `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    match commands::dispatch(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
