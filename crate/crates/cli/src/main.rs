mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "pluc",
    version,
    about = "Constrained policy learning with targeted confidence bounds"
)]
struct Cli {
    /// Worker threads for grid cells (needs the `parallel` feature).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a synthetic dataset with its potential outcomes.
    Simulate(SimulateArgs),
    /// Learn, assess and select a policy on a dataset.
    Fit(FitArgs),
    /// Score a policy against a scenario's truth or with targeted bounds on data.
    Evaluate(EvaluateArgs),
    /// Replicated fits across scenarios and modes, as one long CSV.
    Sweep(SweepArgs),
    /// Audit the Frank-Wolfe convergence bound on a toy problem.
    Certify(CertifyArgs),
}

#[derive(Args, Debug)]
pub struct ScenarioFlags {
    /// linear, threshold, small_adverse or realistic
    #[arg(long)]
    pub scenario: Option<String>,
    #[arg(long)]
    pub with_baseline: bool,
    /// x2 or x5
    #[arg(long)]
    pub propensity: Option<String>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub scenario: ScenarioFlags,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// naive, pluc or oracle
    #[arg(long)]
    pub mode: Option<String>,
    /// glm or oracle
    #[arg(long)]
    pub nuisance: Option<String>,
    #[command(flatten)]
    pub scenario: ScenarioFlags,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Logistic atoms without an intercept term.
    #[arg(long)]
    pub no_intercept: bool,
    /// Assess every cell instead of stopping each row at the first feasible one.
    #[arg(long)]
    pub exhaustive_grid: bool,
    /// The data is on its raw scale; min-max scale it before fitting.
    #[arg(long)]
    pub raw: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub policy: PathBuf,
    #[command(flatten)]
    pub scenario: ScenarioFlags,
    #[arg(long, conflicts_with = "scenario")]
    pub data: Option<PathBuf>,
    #[arg(long, requires = "data")]
    pub raw: bool,
    /// Transform written by `simulate --scenario realistic`.
    #[arg(long)]
    pub preprocessing: Option<PathBuf>,
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    #[arg(long, default_value_t = pluc::synthdata::DEFAULT_MC_N)]
    pub mc_n: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long, default_value_t = 10)]
    pub replicates: usize,
    /// Comma-separated scenario names.
    #[arg(long, default_value = "linear")]
    pub scenarios: String,
    /// Comma-separated modes.
    #[arg(long, default_value = "naive,pluc")]
    pub modes: String,
    #[arg(long, default_value_t = 3000)]
    pub n: usize,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Monte Carlo draws for each cell's oracle metrics.
    #[arg(long, default_value_t = 20_000)]
    pub mc_n: usize,
    #[arg(long)]
    pub no_intercept: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CertifyArgs {
    /// TOML description of the toy problem; flags override it.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    /// exact or sgd
    #[arg(long)]
    pub oracle: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads(cli.threads) {
        eprintln!("error: {e:#}");
        return ExitCode::from(1);
    }
    let outcome = match cli.command {
        Command::Simulate(a) => commands::simulate(&a),
        Command::Fit(a) => commands::fit(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Sweep(a) => commands::sweep(&a),
        Command::Certify(a) => commands::certify(&a),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

#[cfg(feature = "parallel")]
fn configure_threads(threads: Option<usize>) -> anyhow::Result<()> {
    if let Some(t) = threads {
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global()?;
    }
    Ok(())
}

#[cfg(not(feature = "parallel"))]
fn configure_threads(threads: Option<usize>) -> anyhow::Result<()> {
    if threads.is_some_and(|t| t > 1) {
        eprintln!("note: built without the `parallel` feature; running on one thread");
    }
    Ok(())
}
