mod commands;
mod config;
mod error;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::{check_horizon, load_config};
use crate::error::{CliError, Result};

/// Survival risk models over multimodal embeddings, evaluated by nested
/// cross-validation.
#[derive(Debug, Parser)]
#[command(name = "survfuse", version, about)]
struct Cli {
    /// TOML run configuration (required by `synth` and `run`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the master seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for folds and trials; results do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Allow writing into an existing output directory.
    #[arg(long, global = true)]
    force: bool,
    /// Horizon for the time-dependent AUROC [default: 60, or the config's value].
    #[arg(long, global = true)]
    horizon_months: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic cohort (manifest, embeddings, ground truth).
    Synth,
    /// Run the nested cross-validation experiment and write the report.
    Run,
    /// Score a saved checkpoint on a cohort.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// `folds.csv` from a run; restricts scoring to one outer-test fold.
        #[arg(long, requires = "fold")]
        folds: Option<PathBuf>,
        #[arg(long, requires = "folds")]
        fold: Option<usize>,
    },
    /// Score a manifest's clinical columns with the adjusted Leibovich table.
    Leibovich {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        point_table: Option<PathBuf>,
        /// Also write per-patient scores as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-render the summary table from a results file.
    Report {
        #[arg(long)]
        results: PathBuf,
    },
}

fn required_config(cli: &Cli) -> Result<config::LoadedConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config is required for this command".into()))?;
    load_config(path, cli.seed)
}

fn flag_horizon(cli: &Cli) -> Result<f64> {
    check_horizon(cli.horizon_months.unwrap_or(survfuse::metrics::DEFAULT_HORIZON_MONTHS))
}

fn dispatch(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::Synth => commands::cmd_synth(&required_config(cli)?, cli.force),
        Command::Run => commands::cmd_run(&required_config(cli)?, cli.force, cli.horizon_months),
        Command::Eval {
            checkpoint,
            manifest,
            folds,
            fold,
        } => {
            let folds = folds.as_deref().zip(*fold);
            commands::cmd_eval(checkpoint, manifest, folds, flag_horizon(cli)?)
        }
        Command::Leibovich {
            manifest,
            point_table,
            out,
        } => commands::cmd_leibovich(manifest, point_table.as_deref(), out.as_deref(), flag_horizon(cli)?),
        Command::Report { results } => commands::cmd_report(results, flag_horizon(cli)?),
    }
}

fn run(cli: &Cli) -> Result<String> {
    match cli.jobs {
        Some(0) => Err(CliError::Config("--jobs must be at least 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Internal(e.to_string()))?;
            pool.install(|| dispatch(cli))
        }
        None => dispatch(cli),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(out) => {
            let mut stdout = std::io::stdout().lock();
            if stdout.write_all(out.as_bytes()).and_then(|_| stdout.flush()).is_err() {
                return ExitCode::from(3);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("survfuse: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
