//! `zsl`: trains, evaluates and cross-validates zero-shot models from a JSON
//! experiment config. Each command prints a one-line JSON summary on stdout.
//!
//! Exit status: 0 ok, 1 config or argument error, 2 data error,
//! 3 numerical failure (non-convergence under `--strict`).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use zsl_core::ZslError;

#[derive(Parser)]
#[command(name = "zsl", version, about = "Zero-shot learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a SynC (or ConSE) model; writes sync_model.json.
    TrainSync(RunArgs),
    /// Train an exemplar-based model; writes exem_model.json.
    TrainExem(RunArgs),
    /// Classify unseen test rows with a trained model; writes predictions.csv.
    Predict(RunArgs),
    /// Conventional zero-shot evaluation; writes metrics.json.
    EvalZsl(RunArgs),
    /// Generalized zero-shot evaluation; writes metrics.json and suc_curve.csv.
    EvalGzsl(RunArgs),
    /// Seen-unseen accuracy curve; writes suc_curve.csv.
    SucCurve(RunArgs),
    /// Class-wise cross-validated grid search; writes cv_report.csv and cv_best.json.
    Cv(RunArgs),
    /// Exemplar quality and classifier variance; writes analysis.json.
    Analyze(RunArgs),
    /// Generate the synthetic dataset plus a config.json pointing at it.
    SynthData(SynthArgs),
}

#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Fail with status 3 when an optimizer does not converge.
    #[arg(long)]
    pub strict: bool,
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub metric: Option<String>,
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Optional JSON with generator settings; `--seed` wins over its seed.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    Core(ZslError),
    /// Non-convergence with `--strict`.
    Strict(String),
}

impl From<ZslError> for CliError {
    fn from(e: ZslError) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(ZslError::Numerical(_)) | CliError::Strict(_) => 3,
            CliError::Core(e) if e.is_data_error() => 2,
            CliError::Core(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Strict(msg) => write!(f, "not converged: {msg}"),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let result = match cli.command {
        Command::TrainSync(a) => commands::train(&a, commands::Family::Sync),
        Command::TrainExem(a) => commands::train(&a, commands::Family::Exem),
        Command::Predict(a) => commands::predict(&a),
        Command::EvalZsl(a) => commands::eval_zsl(&a),
        Command::EvalGzsl(a) => commands::eval_gzsl(&a),
        Command::SucCurve(a) => commands::suc_curve_cmd(&a),
        Command::Cv(a) => commands::cv(&a),
        Command::Analyze(a) => commands::analyze(&a),
        Command::SynthData(a) => commands::synth_data(&a),
    };
    match result {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
