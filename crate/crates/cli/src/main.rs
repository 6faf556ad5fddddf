mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "hrpca",
    version,
    about = "Audit hierarchical aggregation pipelines with per-level low-rank models"
)]
struct Cli {
    /// Experiment config (TOML with [generator], [hierarchy] and [fit] sections).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate clean training data and injected test data for every level.
    Generate(GenerateArgs),
    /// Fit one model per level and save them as a bundle.
    Fit(FitArgs),
    /// Score and flag every row, writing scores and residuals.
    Audit(AuditArgs),
    /// Sweep thresholds against labels and write the full curve per level.
    Sweep(LabelledArgs),
    /// Report precision, recall and F1 at the best threshold of each level.
    Evaluate(EvaluateArgs),
    /// Attribute flagged rows to latent modes and features.
    Attribute(AttributeArgs),
    /// Render residual heatmaps and score plots from audit output.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct GenerateArgs {
    /// Overrides the generator seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; receives `train/` and `test/`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Directory holding `<level>.csv` (and `<level>.labels.csv` where needed).
    #[arg(long)]
    data: PathBuf,
    /// Read only the finest level and roll it up through the configured hierarchy.
    #[arg(long)]
    rollup: bool,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Where to write the model bundle.
    #[arg(long)]
    bundle: PathBuf,
}

#[derive(Debug, Args)]
struct AuditArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Restrict to one level.
    #[arg(long)]
    level: Option<String>,
    /// Flag at this residual norm instead of the stored thresholds.
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Debug, Args)]
struct LabelledArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    level: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Table,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    bundle: PathBuf,
    /// Also write `evaluation.csv` into this directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    level: Option<String>,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
}

#[derive(Debug, Args)]
struct AttributeArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Level to attribute; defaults to the finest level in the bundle.
    #[arg(long)]
    level: Option<String>,
    #[arg(long)]
    threshold: Option<f64>,
    /// Training data directory for projection statistics. Without it the
    /// statistics come from the bundle's spectrum and recorded row counts.
    #[arg(long)]
    train: Option<PathBuf>,
    /// Change-log CSV with `timestamp,description`.
    #[arg(long)]
    changelog: Option<PathBuf>,
    /// Look-back window for change-log events, e.g. `24h` or `90min`.
    #[arg(long, default_value = "24h")]
    window: humantime::Duration,
    /// z-score a mode must exceed to be dominant.
    #[arg(long, default_value_t = hrpca::attribution::DEFAULT_Z_THRESHOLD)]
    z: f64,
    #[arg(long, default_value_t = hrpca::attribution::DEFAULT_TOP_K)]
    top_k: usize,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Audit output directory.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    level: Option<String>,
    /// Threshold to draw; defaults to the one recorded in `audit.csv`.
    #[arg(long)]
    threshold: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
