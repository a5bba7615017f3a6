//! `fird`: fit, detect, generate, evaluate and bench from the command line.
//!
//! Exit codes: 0 on success, 1 on numeric failure, 2 on usage or input errors.

mod bench;
mod detect;
mod evaluate;
mod fit;
mod generate;
mod manifest;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fird::FirdError;

#[derive(Parser, Debug)]
#[command(
    name = "fird",
    version,
    about = "Mixture of adversarial multinomial pairs for categorical data"
)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "FIRD_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a model to a CSV dataset.
    Fit(fit::FitArgs),
    /// Score rows and groups of a dataset under a fitted model.
    Detect(detect::DetectArgs),
    /// Generate synthetic data with ground truth.
    Generate(generate::GenerateArgs),
    /// Compare predictions or scores with ground truth.
    Evaluate(evaluate::EvaluateArgs),
    /// Time EM iterations over the runtime sweep.
    Bench(bench::BenchArgs),
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<FirdError>() {
        Some(e) if e.is_numeric() => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Fit(a) => fit::run(a),
        Command::Detect(a) => detect::run(a),
        Command::Generate(a) => generate::run(a),
        Command::Evaluate(a) => evaluate::run(a),
        Command::Bench(a) => bench::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
