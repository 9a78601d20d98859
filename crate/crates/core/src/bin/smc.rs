use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use smc_core::certify::DEFAULT_TRIALS;
use smc_core::cli;

#[derive(Parser)]
#[command(name = "smc", version, about = "Sliding mode control with a decomposed gain matrix")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a closed-loop experiment and write trajectory CSV and summary JSON.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `sim.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Runs seeds `seed..seed+trials` in parallel.
        #[arg(long, default_value_t = 1)]
        trials: usize,
    },
    /// Run a randomized property suite; exits 1 on any failure.
    Certify {
        #[arg(long)]
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_TRIALS)]
        trials: usize,
        /// Bound matrix as JSON rows, replacing the random draw (negative control).
        #[arg(long = "inject-f-bar")]
        inject_f_bar: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Search a gain decomposition for the plant's uncertainty box; exits 4
    /// when the best two-norm is not below one.
    Decompose {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `decompose.pso.seed`.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SMC_LOG", "warn")).init();
    let code = match Args::parse().command {
        Command::Simulate {
            config,
            seed,
            out,
            trials,
        } => cli::cmd_simulate(&config, seed, out.as_deref(), trials),
        Command::Certify {
            suite,
            seed,
            trials,
            inject_f_bar,
            out,
        } => cli::cmd_certify(&suite, seed, trials, inject_f_bar.as_deref(), out.as_deref()),
        Command::Decompose { config, seed, out } => cli::cmd_decompose(&config, seed, out.as_deref()),
    };
    ExitCode::from(code as u8)
}
