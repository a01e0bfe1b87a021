//! Command-line front end for the channel-estimation pipeline: dataset
//! synthesis, model initialization, fusion, calibration, quantization,
//! inference with any of the three engines, NMSE evaluation, cycle
//! estimation, and a self-test of the oracle-equivalence properties.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

mod commands;
mod config;
mod estimates;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

use commands::Engine;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Config(_) => ExitCode::from(2),
            CliError::Runtime(_) => ExitCode::from(1),
        }
    }
}

#[derive(Parser)]
#[command(name = "swiftchannel", version, about = "5G channel-estimation pipeline tools")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic pilot dataset
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write seeded float model weights
    InitModel {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Emit block convolutions in composite (fusable) form
        #[arg(long)]
        rep: bool,
    },
    /// Collapse composite conv groups into single convolutions
    Fuse {
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Record activation ranges of a float model over a dataset
    Calibrate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Quantize float weights using a recorded calibration
    Quantize {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        calibration: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run channel estimation over a dataset and write estimate files
    Infer {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        engine: Engine,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Compare estimates against dataset ground truth, per SNR point
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        est_dir: PathBuf,
    },
    /// Print the per-block cycle estimate for the configured model
    Cycles {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Run all oracle-equivalence checks
    Selftest,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Command::Synth { config, out } => {
            let cfg = config::parse_config(config.as_deref())?;
            commands::cmd_synth(&cfg, &out)
        }
        Command::InitModel { config, out, rep } => {
            let cfg = config::parse_config(config.as_deref())?;
            commands::cmd_init_model(&cfg, &out, rep)
        }
        Command::Fuse { input, out } => commands::cmd_fuse(&input, &out),
        Command::Calibrate {
            config,
            dataset,
            weights,
            out,
        } => {
            let cfg = config::parse_config(config.as_deref())?;
            commands::cmd_calibrate(&cfg, &dataset, &weights, &out)
        }
        Command::Quantize {
            config,
            weights,
            calibration,
            out,
        } => {
            let cfg = config::parse_config(config.as_deref())?;
            commands::cmd_quantize(&cfg, &weights, &calibration, &out)
        }
        Command::Infer {
            config,
            engine,
            dataset,
            weights,
            out_dir,
        } => {
            let cfg = config::parse_config(config.as_deref())?;
            commands::cmd_infer(&cfg, engine, &dataset, &weights, &out_dir)
        }
        Command::Eval {
            config,
            dataset,
            est_dir,
        } => {
            let cfg = config::parse_config(config.as_deref())?;
            commands::cmd_eval(&cfg, &dataset, &est_dir)
        }
        Command::Cycles { config, json } => {
            let cfg = config::parse_config(config.as_deref())?;
            commands::cmd_cycles(&cfg, json)
        }
        Command::Selftest => commands::cmd_selftest(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
