//! `gcomm`: fit, generate and evaluate generalized community structure.
//!
//! Exit status is 0 on success, 2 when an iteration cap stopped the run
//! before convergence (outputs are still written), and 1 on any error.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gcomm_core::BpSchedule;

#[derive(Debug, Parser)]
#[command(
    name = "gcomm",
    version,
    about = "Generalized community structure by EM with belief propagation"
)]
struct Cli {
    /// More log output on standard error (repeat for more).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the model to an edge list.
    Infer(InferArgs),
    /// Sample a synthetic network.
    #[command(subcommand)]
    Generate(GenerateCommand),
    /// Rerun BP under a saved fit and report the objective.
    Eval(EvalArgs),
    /// Exact marginals by enumeration on a tiny graph.
    #[command(hide = true)]
    Oracle(OracleArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum ScheduleArg {
    Sequential,
    Synchronous,
}

impl From<ScheduleArg> for BpSchedule {
    fn from(s: ScheduleArg) -> Self {
        match s {
            ScheduleArg::Sequential => BpSchedule::Sequential,
            ScheduleArg::Synchronous => BpSchedule::Synchronous,
        }
    }
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Whitespace-separated edge list, one edge per line.
    pub edgelist: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Bernstein degree of the edge function.
    #[arg(long, default_value_t = 4)]
    pub degree: usize,
    /// Quadrature points.
    #[arg(long, default_value_t = 12)]
    pub grid: usize,
    #[arg(long, default_value_t = 5)]
    pub restarts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub max_outer: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub tol_outer: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub tol_bp: f64,
    #[arg(long, default_value_t = 0.8)]
    pub damping: f64,
    #[arg(long, default_value_t = 200)]
    pub max_sweeps: usize,
    #[arg(long, value_enum, default_value_t = ScheduleArg::Sequential)]
    schedule: ScheduleArg,
    /// Strength of the banded starting probe; 0 disables it.
    #[arg(long, default_value_t = 0.5)]
    pub probe_strength: f64,
    /// Worker threads. Outputs do not depend on this.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Subcommand)]
enum GenerateCommand {
    /// Planted partition with equal groups.
    Sbm(SbmArgs),
    /// Uniform positions and a given edge function.
    Latent(LatentArgs),
}

#[derive(Debug, Args)]
pub struct SbmArgs {
    #[arg(long, default_value_t = 600)]
    pub n: usize,
    #[arg(long, default_value_t = 3)]
    pub groups: usize,
    /// `n` times the within-group link probability.
    #[arg(long, default_value_t = 15.0)]
    pub cin: f64,
    #[arg(long, default_value_t = 3.0)]
    pub cout: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct LatentArgs {
    #[arg(long)]
    pub n: usize,
    /// Target degree of every node.
    #[arg(long)]
    pub degree_param: f64,
    /// Edge function coefficients in the `coefficients.tsv` format.
    #[arg(long)]
    pub omega_file: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub edgelist: PathBuf,
    /// Directory written by `infer`; only `coefficients.tsv` is required.
    #[arg(long)]
    pub fit: PathBuf,
    /// Overrides the BP tolerance recorded with the fit.
    #[arg(long)]
    pub tol_bp: Option<f64>,
    #[arg(long)]
    pub damping: Option<f64>,
    #[arg(long)]
    pub max_sweeps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    pub edgelist: PathBuf,
    #[arg(long)]
    pub coefficients: PathBuf,
    #[arg(long, default_value_t = 6)]
    pub grid: usize,
    /// Field weighting solved self-consistently (forests only), or the
    /// Poisson / Bernoulli joint by enumeration.
    #[arg(long, value_enum, default_value_t = OracleModel::Field)]
    pub model: OracleModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum OracleModel {
    Field,
    Poisson,
    Bernoulli,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::Infer(a) => commands::infer(&a, a.schedule.into()),
        Command::Generate(GenerateCommand::Sbm(a)) => commands::generate_sbm(&a),
        Command::Generate(GenerateCommand::Latent(a)) => commands::generate_latent(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Oracle(a) => commands::oracle(&a),
    };
    match result {
        Ok(status) => ExitCode::from(status),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
