//! `facewarp`: fitting, synthetic data, training, inference, evaluation,
//! gradient audits and timing from the command line.
//!
//! Errors go to stderr as one JSON object `{"error": kind, "message": ...}`
//! with exit status 1; argument errors exit with status 2.

mod error;
mod eval;
mod files;
mod fit;
mod model;
mod tools;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::CliResult;

#[derive(Parser)]
#[command(name = "facewarp", version, about = "3D thin-plate-spline face alignment toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the face model to 2D landmarks (or to an image through a trained model).
    Fit(fit::FitArgs),
    /// Generate a synthetic training set.
    Synth(model::SynthArgs),
    /// Train the estimator on a synthetic set.
    Train(model::TrainArgs),
    /// Run a trained estimator on images.
    Infer(model::InferArgs),
    /// NME records, pose table and CED curve for predicted landmarks.
    Eval(eval::EvalArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(tools::GradcheckArgs),
    /// Single-image, single-threaded latency.
    Bench(tools::BenchArgs),
    /// Write the built-in mean face mesh and its landmark sidecar.
    GenMesh(tools::GenMeshArgs),
}

/// Caps the global thread pool when `FACEWARP_THREADS` is set.
fn init_threads() -> CliResult<()> {
    if let Ok(v) = std::env::var("FACEWARP_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| error::invalid(format!("FACEWARP_THREADS must be a positive integer, got {v:?}")))?;
        if n == 0 {
            return Err(error::invalid("FACEWARP_THREADS must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| error::invalid(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    init_threads()?;
    match cli.command {
        Command::Fit(a) => fit::run(a),
        Command::Synth(a) => model::synth(a),
        Command::Train(a) => model::train(a),
        Command::Infer(a) => model::infer(a),
        Command::Eval(a) => eval::run(a),
        Command::Gradcheck(a) => tools::gradcheck(a),
        Command::Bench(a) => tools::bench(a),
        Command::GenMesh(a) => tools::gen_mesh(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
