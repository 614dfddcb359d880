use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gsnr::experiment::config::{ExperimentConfig, ExperimentKind};
use gsnr::experiment::runner::run_experiment;
use gsnr::solver::{BURN_IN, DIVERGENCE_GUARD};
use gsnr::Error;

fn after_help() -> String {
    format!(
        "Exit codes: 0 success, 2 config error, 3 numerical failure, 1 other errors.\n\n\
         Fixed solver constants: a run stops with a numerical failure once the error norm \
         (or the iterate norm without a reference) exceeds {DIVERGENCE_GUARD:e}; contraction \
         rates are measured after a burn-in of {BURN_IN} iterations."
    )
}

#[derive(Parser)]
#[command(name = "gsnr", version, about = "Graph-smooth null-space experiments", after_help = after_help())]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Smallest eigenvalues of the null-restricted Laplacian per topology.
    #[command(after_help = after_help())]
    Spectrum(RunArgs),
    /// Closed-form and empirical null-space coverage curves.
    #[command(after_help = after_help())]
    Coverage(RunArgs),
    /// Per-mode predictability of null coefficients against its bound.
    #[command(after_help = after_help())]
    Predictability(RunArgs),
    /// Automatic choice of the number of modes.
    #[command(name = "select-p", after_help = after_help())]
    SelectP(RunArgs),
    /// Minimax width with its witness and sampled residuals.
    #[command(after_help = after_help())]
    Minimax(RunArgs),
    /// Paired reconstruction trials: baseline PnP against GSNR arms.
    #[command(after_help = after_help())]
    Reconstruct(RunArgs),
    /// Reconstruction trials over the graph-energy weights, with step-size spectra.
    #[command(name = "ablate-convergence", after_help = after_help())]
    AblateConvergence(RunArgs),
    /// Reconstruction trials with an inexact forward operator.
    #[command(after_help = after_help())]
    Perturb(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to the config's `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl Command {
    fn split(self) -> (ExperimentKind, RunArgs) {
        match self {
            Command::Spectrum(a) => (ExperimentKind::Spectrum, a),
            Command::Coverage(a) => (ExperimentKind::Coverage, a),
            Command::Predictability(a) => (ExperimentKind::Predictability, a),
            Command::SelectP(a) => (ExperimentKind::SelectP, a),
            Command::Minimax(a) => (ExperimentKind::MinimaxBound, a),
            Command::Reconstruct(a) => (ExperimentKind::Reconstruct, a),
            Command::AblateConvergence(a) => (ExperimentKind::ConvergenceAblation, a),
            Command::Perturb(a) => (ExperimentKind::PerturbedOperator, a),
        }
    }
}

fn run(kind: ExperimentKind, args: RunArgs) -> Result<(), Error> {
    let mut cfg = ExperimentConfig::load(&args.config).map_err(|e| match e {
        Error::Io { path, source } => Error::Config(format!("cannot read {}: {source}", path.display())),
        other => other,
    })?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let out = args
        .out
        .or_else(|| cfg.out.clone())
        .ok_or_else(|| Error::Config("no output directory: pass --out or set `out`".into()))?;
    let outcome = run_experiment(&cfg, kind, &out)?;
    for file in &outcome.files {
        println!("{}", out.join(file).display());
    }
    eprintln!("{} finished in {:.2} s", kind.command(), outcome.wall_seconds);
    Ok(())
}

fn main() -> ExitCode {
    let (kind, args) = Cli::parse().command.split();
    match run(kind, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = if e.is_config() {
                2
            } else if e.is_numerical() {
                3
            } else {
                1
            };
            ExitCode::from(code)
        }
    }
}
