//! Command-line front end: `fit`, `tune`, `simulate` and `predict`.
//!
//! Exit codes: 0 success, 2 usage, 3 data validation, 4 numerical failure,
//! 1 for output I/O failures.

mod commands;
pub mod io;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::error::Error;
use crate::evaluation::Method;

pub use commands::{FitReport, RunManifest, VbModel, SCHEMA_VERSION};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("invalid data: {0}")]
    Validation(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Validation(_) => 3,
            CliError::Numerical(_) => 4,
            CliError::Io(_) => 1,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Domain(_) => CliError::Usage(e.to_string()),
            Error::Validation { .. } => CliError::Validation(e.to_string()),
            Error::Numerical { .. } => CliError::Numerical(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "sparse-probit", version, about = "Sparse Bayesian probit regression")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "SPARSE_PROBIT_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit by coordinate ascent or Gibbs sampling.
    Fit(FitArgs),
    /// Choose rho by stratified cross-validation.
    Tune(TuneArgs),
    /// Run a simulation study.
    Simulate(SimulateArgs),
    /// Predict probabilities for new rows from a fitted model.
    Predict(PredictArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Vb,
    Gibbs,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Vb => Method::Vb,
            MethodArg::Gibbs => Method::Gibbs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScenarioArg {
    S1,
    S2,
    Custom,
}

fn open_unit(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("{v} is not in the open interval (0, 1)"))
    }
}

fn positive(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{v} must be positive"))
    }
}

/// Grid of `rho` values as given on the command line.
#[derive(Debug, Clone, PartialEq)]
pub struct RhoGrid(pub Vec<f64>);

fn parse_rho_grid(s: &str) -> Result<RhoGrid, String> {
    parse_grid(s).map(RhoGrid)
}

/// `start:stop:step` or a comma-separated list.
pub fn parse_grid(s: &str) -> Result<Vec<f64>, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let grid = if parts.len() == 3 {
        let [a, b, h] = [parts[0], parts[1], parts[2]].map(|t| t.trim().parse::<f64>());
        let (a, b, h) = (a.map_err(|e| e.to_string())?, b.map_err(|e| e.to_string())?, h.map_err(|e| e.to_string())?);
        if !(h > 0.0) || b < a {
            return Err(format!("bad range {s}"));
        }
        let count = ((b - a) / h + 1e-9).floor() as usize + 1;
        // rounding strips accumulated step error, e.g. 0.15000000000000002
        (0..count).map(|i| ((a + i as f64 * h) * 1e12).round() / 1e12).collect()
    } else {
        s.split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|e| e.to_string()))
            .collect::<Result<Vec<_>, _>>()?
    };
    if grid.iter().any(|&r| !(r > 0.0 && r < 1.0)) {
        return Err("grid values must lie in (0, 1)".into());
    }
    Ok(grid)
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Input CSV with an optional header row.
    #[arg(long)]
    pub data: PathBuf,
    /// Response column, by header name or 0-based index.
    #[arg(long)]
    pub response: String,
    /// Center and scale each feature by its training mean and sd.
    #[arg(long)]
    pub standardize: bool,
    /// Append a column of ones as the last feature.
    #[arg(long)]
    pub intercept: bool,
}

#[derive(Debug, Clone, Args)]
pub struct CviArgs {
    /// Convergence tolerance for the ELBO and parameter rules.
    #[arg(long, default_value_t = 1e-6, value_parser = positive)]
    pub tol: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
}

#[derive(Debug, Clone, Args)]
pub struct TuneGridArgs {
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value = "0.05:0.5:0.05", value_parser = parse_rho_grid)]
    pub rho_grid: RhoGrid,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value_t = MethodArg::Vb)]
    pub method: MethodArg,
    /// Prior inclusion probability; tuned by cross-validation when absent.
    #[arg(long, value_parser = open_unit)]
    pub rho: Option<f64>,
    #[arg(long, default_value_t = 25.0, value_parser = positive)]
    pub nu0sq: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub cavi: CviArgs,
    #[command(flatten)]
    pub grid: TuneGridArgs,
    /// Gibbs iterations, burn-in included.
    #[arg(long, default_value_t = 11_000)]
    pub iters: usize,
    #[arg(long, default_value_t = 1_000)]
    pub burnin: usize,
    #[arg(long, default_value_t = 1)]
    pub thin: usize,
    #[arg(long, default_value_t = 1)]
    pub chains: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct TuneArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub grid: TuneGridArgs,
    #[arg(long, default_value_t = 25.0, value_parser = positive)]
    pub nu0sq: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub cavi: CviArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value_t = ScenarioArg::S1)]
    pub scenario: ScenarioArg,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Comma-separated methods.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "vb,gibbs")]
    pub methods: Vec<MethodArg>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 11_000)]
    pub iters: usize,
    #[arg(long, default_value_t = 1_000)]
    pub burnin: usize,
    #[arg(long, default_value_t = 25.0, value_parser = positive)]
    pub nu0sq: f64,
    #[command(flatten)]
    pub grid: TuneGridArgs,
    #[command(flatten)]
    pub cavi: CviArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    /// report.json written by `fit`.
    #[arg(long)]
    pub model: PathBuf,
    /// CSV of new feature rows, same column order as training.
    #[arg(long)]
    pub data: PathBuf,
    /// Column to drop from the input before prediction, if present.
    #[arg(long)]
    pub response: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        pool = pool.num_threads(t);
    }
    let pool = pool.build().map_err(|e| CliError::Io(e.to_string()))?;
    pool.install(|| match &cli.command {
        Command::Fit(a) => commands::fit(a),
        Command::Tune(a) => commands::tune(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Predict(a) => commands::predict(a),
    })
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
