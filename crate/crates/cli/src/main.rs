//! `afx`: train, evaluate, analyze and run audio effect models.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use afx_autodiff::Precision;
use clap::{Args, Parser, Subcommand, ValueEnum};

use commands::Run;

/// Exit status 2.
const EXIT_CONFIG: u8 = 2;
/// Exit status 3.
const EXIT_RUNTIME: u8 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad input: config, checkpoint, flags or audio format.
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Runtime(#[from] afx_core::Error),
}

#[derive(Debug, Parser)]
#[command(name = "afx", version, about = "Differentiable audio effect modeling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model; resumes when --checkpoint is given.
    Train(Common),
    /// Report losses on the test split.
    Test(Common),
    /// Write frequency, amplitude and parameter reports.
    Analyze(Common),
    /// Process a WAV file at fixed control values.
    Render {
        #[command(flatten)]
        common: Common,
        /// Input WAV file.
        #[arg(long)]
        input: PathBuf,
        /// Control values in [0, 1], comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        controls: Vec<f64>,
        /// File name of the output inside the output directory.
        #[arg(long, default_value = "rendered.wav")]
        output: String,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PrecisionArg {
    F32,
    F64,
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Model checkpoint; without one the seeded initial model is used.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Overrides the training and initialization seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to the config's output_dir, else
    /// $AFX_OUTPUT_ROOT/<config name>.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Arithmetic precision; f32 for training and f64 otherwise by default.
    #[arg(long, value_enum)]
    precision: Option<PrecisionArg>,
}

impl Common {
    fn resolve(&self, default_precision: Precision) -> Result<Run, CliError> {
        let mut exp = config::load(&self.config).map_err(|e| CliError::Config(e.to_string()))?;
        if let Some(s) = self.seed {
            exp.config.train.seed = s;
        }
        let env_root = std::env::var_os("AFX_OUTPUT_ROOT").map(PathBuf::from);
        let out_dir = exp.output_dir(self.output_dir.as_deref(), env_root.as_deref());
        let precision = match self.precision {
            Some(PrecisionArg::F32) => Precision::F32,
            Some(PrecisionArg::F64) => Precision::F64,
            None => default_precision,
        };
        Ok(Run { exp, checkpoint: self.checkpoint.clone(), out_dir, precision })
    }
}

fn dispatch(cmd: &Command) -> Result<(), CliError> {
    match cmd {
        Command::Train(c) => commands::train(&c.resolve(Precision::F32)?),
        Command::Test(c) => commands::test(&c.resolve(Precision::F64)?),
        Command::Analyze(c) => commands::analyze(&c.resolve(Precision::F64)?),
        Command::Render { common, input, controls, output } => {
            commands::render(&common.resolve(Precision::F64)?, input, controls, output)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                CliError::Config(_) => EXIT_CONFIG,
                CliError::Runtime(_) => EXIT_RUNTIME,
            })
        }
    }
}
