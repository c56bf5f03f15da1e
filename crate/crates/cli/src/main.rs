use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod analyze;
mod bbp;
mod dft;
mod esd;
mod rescale;
mod train;

#[derive(Parser, Debug)]
#[command(name = "spectrascope", version, about = "Weight-spectrum diagnostics and grokking lab")]
struct Cli {
    /// Seed for every stochastic step (shuffles, init, data splits).
    #[arg(long, global = true, env = "SPECTRASCOPE_SEED", default_value_t = 0)]
    seed: u64,

    /// Worker threads for layer analysis (default: logical cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Spectral analysis of a checkpoint or every snapshot of a run.
    Analyze(analyze::AnalyzeArgs),
    /// Train one of the lab models, writing log-spaced snapshots.
    Train(train::TrainArgs),
    /// Token-DFT profiles, rule kernel and key bank of a modadd checkpoint.
    Dft(dft::DftArgs),
    /// Multiply every weight of a checkpoint by a constant.
    Rescale(rescale::RescaleArgs),
    /// Planted-spike sweep across the BBP transition.
    Bbp(bbp::BbpArgs),
    /// Plot one layer's ESD with its power-law and MP fits.
    Esd(esd::EsdArgs),
}

/// Failure with the process exit code it maps to.
pub struct Failure {
    code: u8,
    message: String,
}

impl From<spectrascope_core::Error> for Failure {
    fn from(e: spectrascope_core::Error) -> Self {
        let code = match &e {
            spectrascope_core::Error::DivergedLoss { .. } => 3,
            e if e.is_input_error() => 2,
            _ => 4,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self {
            code: 4,
            message: e.to_string(),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast::<spectrascope_core::Error>() {
            Ok(core) => core.into(),
            Err(other) => Self {
                code: 4,
                message: format!("{other:#}"),
            },
        }
    }
}

pub struct Globals {
    pub seed: u64,
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(4);
        }
    }
    let globals = Globals {
        seed: cli.seed,
        out: cli.out,
    };
    let result = match cli.command {
        Command::Analyze(args) => analyze::run(&globals, args),
        Command::Train(args) => train::run(&globals, args),
        Command::Dft(args) => dft::run(&globals, args),
        Command::Rescale(args) => rescale::run(&globals, args),
        Command::Bbp(args) => bbp::run(&globals, args),
        Command::Esd(args) => esd::run(&globals, args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
