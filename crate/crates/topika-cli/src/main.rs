//! `topika`: train, evaluate, grid-search and time topic models from the
//! command line.

mod commands;
mod config;
mod manifest;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use topika::Algorithm;

use config::{resolve, Defaults, RunArgs};

#[derive(Parser)]
#[command(name = "topika", version, about = "Topic models over bag-of-words corpora")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model on the training split
    Train(RunArgs),
    /// Held-out perplexity (and classification scores) of saved models
    Evaluate(RunArgs),
    /// Grid search over alpha and eta, resumable
    Grid(RunArgs),
    /// Time each learner to a validation perplexity threshold
    Bench(RunArgs),
    /// Compare Gibbs sampling against exact enumeration on tiny corpora
    OracleCheck(RunArgs),
}

/// `TOPIKA_THREADS` caps the thread pool and the parallel workers.
fn thread_cap() -> Option<usize> {
    std::env::var("TOPIKA_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

fn run(cli: Cli, threads: Option<usize>) -> anyhow::Result<()> {
    use Algorithm::*;
    let single = Defaults {
        algorithms: &[Cvb0],
        ..Defaults::default()
    };
    match cli.command {
        Command::Train(a) => commands::train_cmd(&resolve(a, single, threads)?),
        Command::Evaluate(a) => commands::evaluate_cmd(&resolve(a, single, threads)?),
        Command::Grid(a) => commands::grid_cmd(&resolve(a, single, threads)?),
        Command::Bench(a) => {
            let d = Defaults {
                algorithms: &[Cvb0, Cvb, Vb, Cgs],
                ..Defaults::default()
            };
            commands::bench_cmd(&resolve(a, d, threads)?)
        }
        Command::OracleCheck(a) => {
            let d = Defaults {
                algorithms: &[Cgs],
                topics: 2,
                samples: 100_000,
                strength: 0.5,
            };
            commands::oracle_cmd(&resolve(a, d, threads)?)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let threads = thread_cap();
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread pool: {e}");
        }
    }
    match run(cli, threads) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
