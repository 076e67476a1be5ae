//! `bgret`: experiment driver for phase retrieval with a known background.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Process exit status.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Ok = 0,
    Usage = 1,
    Data = 2,
    CheckFailed = 3,
}

#[derive(Parser, Debug)]
#[command(name = "bgret", version, about = "Fourier phase retrieval with background information")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// TOML experiment configuration; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (default `out`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (0 = one per core). Falls back to BGRET_WORKERS.
    #[arg(long, global = true, env = "BGRET_WORKERS")]
    pub workers: Option<usize>,
    /// Default sizes and trial counts.
    #[arg(long, global = true, value_enum, default_value_t = Preset::Desk)]
    pub preset: Preset,
    /// Write wall_ms as 0 so result files are byte-reproducible.
    #[arg(long, global = true)]
    pub no_timing: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// 1-D n=100, 2-D 64×64, short runs.
    Desk,
    /// 2-D 256×256 and 100 trials everywhere.
    Paper,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PlacementArg {
    Leading,
    Centered,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a test signal (gaussian, chirp or file).
    GenSignal(commands::GenSignalArgs),
    /// Write a Gaussian background with zeros on the support.
    GenBackground(commands::GenBackgroundArgs),
    /// Compute Fourier intensities of a sample placed in a background.
    Forward(commands::ForwardArgs),
    /// Recover a sample from intensities and its background.
    Solve(commands::SolveArgs),
    /// Recovery rate over a grid of background ratios.
    Sweep(commands::SweepArgs),
    /// Compare methods on one image over repeated backgrounds.
    ImageBench(commands::ImageBenchArgs),
    /// Recovery quality as a function of the support position.
    LocationBias(commands::LocationArgs),
    /// Compare PGD, BDR and BDR1 on noisy measurements.
    NoiseBench(commands::NoiseBenchArgs),
    /// Monte Carlo checks of the linear-algebra guarantees.
    #[command(subcommand)]
    Verify(commands::VerifyCommand),
    /// Compare an estimate against a reference.
    Metrics(commands::MetricsArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { Status::Usage } else { Status::Ok };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let status = match commands::dispatch(&cli) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_data_error() {
                Status::Data
            } else {
                Status::Usage
            }
        }
    };
    ExitCode::from(status as u8)
}
