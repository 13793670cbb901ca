//! `gqda` command-line tool: fit and apply GQDA classifiers, run simulation
//! studies and real-data benchmarks, and summarize their reports.

mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "gqda",
    version,
    about = "Generalized quadratic discriminant analysis with robust estimators"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a classifier to a labeled CSV and write the model as JSON.
    Fit(FitArgs),
    /// Classify the rows of a CSV with a saved model.
    Predict(PredictArgs),
    /// Run a Monte-Carlo simulation study.
    Simulate(SimulateArgs),
    /// Run the repeated split / label-flip benchmark on a labeled CSV.
    RealBench(RealBenchArgs),
    /// Print per-estimator mean (SD) and median of a report CSV.
    Summarize(SummarizeArgs),
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Label column, by header name or 1-based index.
    #[arg(long, default_value = "label")]
    label_column: String,
    /// Feature columns: names, 1-based indices and inclusive ranges, e.g. `3-34`.
    #[arg(long)]
    feature_columns: Option<String>,
    /// Drop feature columns whose values are all identical.
    #[arg(long)]
    drop_constant_columns: bool,
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Training data.
    data: PathBuf,
    #[command(flatten)]
    columns: DataArgs,
    /// Estimator: classical, winsorized, mve, mcd, m_huber, s_tukey or sd.
    #[arg(long, default_value = "classical")]
    estimator: String,
    /// Estimator settings as a JSON file (overrides --estimator).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for the randomized estimators.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output model file.
    #[arg(long, default_value = "model.json")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PredictArgs {
    /// Model written by `gqda fit`.
    model: PathBuf,
    /// Rows to classify.
    data: PathBuf,
    /// Column with true labels; when present the error rate is reported.
    #[arg(long)]
    label_column: Option<String>,
    /// Feature columns when the model does not record its column names.
    #[arg(long)]
    feature_columns: Option<String>,
    /// Output predictions file.
    #[arg(long, default_value = "predictions.csv")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Experiment config: a JSON file or the name of a built-in preset.
    #[arg(long)]
    config: Option<String>,
    /// Master seed (overrides the config's seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core. Results do not depend on it.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Comma-separated estimators (overrides the config's list).
    #[arg(long)]
    estimators: Option<String>,
    /// Replications (overrides the config).
    #[arg(long)]
    replications: Option<usize>,
    /// Test-set threshold diagnostics. Without --config, runs the full
    /// pure/mild/hard × train/train-and-test grid on the two-class design.
    #[arg(long)]
    table1: bool,
    /// List the built-in presets and exit.
    #[arg(long)]
    list_presets: bool,
}

#[derive(Debug, Args)]
struct RealBenchArgs {
    /// Labeled data.
    data: PathBuf,
    #[command(flatten)]
    columns: DataArgs,
    /// Benchmark settings as JSON; command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    #[arg(long)]
    estimators: Option<String>,
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long)]
    train_fraction: Option<f64>,
    #[arg(long)]
    flip_fraction: Option<f64>,
}

#[derive(Debug, Args)]
struct SummarizeArgs {
    /// Report CSV written by `simulate` or `real-bench`.
    report: PathBuf,
    /// Also write the table as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(a) => commands::fit(a),
        Command::Predict(a) => commands::predict(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::RealBench(a) => commands::real_bench(a),
        Command::Summarize(a) => commands::summarize(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.code())
        }
    }
}
