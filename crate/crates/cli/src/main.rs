//! `bplf`: train, sample from, evaluate and verify normalizing-flow models.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure, 3 verification
//! failure.

mod cmd_check;
mod cmd_data_build;
mod cmd_eval;
mod cmd_sample;
mod cmd_train;
mod util;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use util::CliError;

#[derive(Parser)]
#[command(name = "bplf", version, about = "Bi-parallel linear flow trainer and sampler")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a flow on a built dataset and write a checkpoint.
    Train(cmd_train::TrainArgs),
    /// Decode prior samples from a checkpoint into PGM images.
    Sample(cmd_sample::SampleArgs),
    /// Report mean NLL and bits/dim of a checkpoint on a dataset split.
    Eval(cmd_eval::EvalArgs),
    /// Build a dataset manifest + pixel store from raw sources.
    DataBuild(cmd_data_build::DataBuildArgs),
    /// Run the self-verification suites.
    Check(cmd_check::CheckArgs),
}

fn init_threads() -> Result<(), CliError> {
    let threads = match std::env::var("FLOW_THREADS") {
        Ok(v) => Some(v.parse::<usize>().map_err(|_| {
            CliError::Usage(format!("FLOW_THREADS must be a positive integer, got {v:?}"))
        })?),
        Err(_) => None,
    };
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::Usage("FLOW_THREADS must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(format!("thread pool init failed: {e}")))?;
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    match cli.command {
        Command::Train(args) => cmd_train::run(args),
        Command::Sample(args) => cmd_sample::run(args),
        Command::Eval(args) => cmd_eval::run(args),
        Command::DataBuild(args) => cmd_data_build::run(args),
        Command::Check(args) => cmd_check::run(args),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {}", e.message());
            std::process::exit(e.exit_code());
        }
    }
}
