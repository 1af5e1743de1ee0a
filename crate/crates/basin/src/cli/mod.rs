//! Command-line interface: config parsing, the experiment subcommands,
//! and machine-parsable error output.

mod commands;
mod config;

pub use commands::{
    baseline_ape, baseline_msm, cmd_baseline, cmd_evaluate, cmd_simulate, cmd_sweep, cmd_train,
    evaluate_model, generate_dataset, load_dataset, Dataset, Truth,
};
pub use config::{
    CsvKind, CsvSection, EvaluationSection, ExperimentConfig, PrinzSection, SswmSection,
    SweepAxis, SweepSection, SystemChoice,
};

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::error::{Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "basin",
    about = "Estimate energy landscapes of stochastic systems from trajectories",
    version
)]
pub struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Override the seed list with a single seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Override the output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Record wall-clock timings in reports (off keeps outputs
    /// bit-reproducible).
    #[arg(long, global = true)]
    pub timings: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the dataset (train/test CSVs plus metadata).
    Simulate,
    /// Train both stages for every configured seed.
    Train,
    /// Evaluate trained checkpoints and write the aggregate report.
    Evaluate {
        /// Evaluate one specific checkpoint directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run an energy baseline (msm or ape) on the same splits.
    Baseline {
        /// Baseline kind: msm | ape.
        kind: String,
    },
    /// Train and evaluate across one axis (data_size | k | noise).
    Sweep {
        /// Axis to sweep; defaults to the config's [sweep] section.
        #[arg(long)]
        axis: Option<String>,
    },
}

fn resolve_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => return Err(Error::Config("--config <path> is required".into())),
    };
    if let Some(seed) = cli.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_axis(s: &str) -> Result<SweepAxis> {
    match s {
        "data_size" => Ok(SweepAxis::DataSize),
        "k" => Ok(SweepAxis::K),
        "noise" => Ok(SweepAxis::Noise),
        other => Err(Error::Config(format!(
            "unknown sweep axis `{other}`; valid axes: data_size, k, noise"
        ))),
    }
}

/// Run a parsed command; returns a short human summary for stdout.
pub fn run(cli: &Cli) -> Result<String> {
    let cfg = resolve_config(cli)?;
    match &cli.command {
        Command::Simulate => {
            let data_seed = cli.seed.unwrap_or(cfg.seeds[0]);
            let dir = cmd_simulate(&cfg, data_seed)?;
            Ok(format!("dataset written to {}", dir.display()))
        }
        Command::Train => {
            let paths = cmd_train(&cfg, &cfg.seeds)?;
            Ok(format!(
                "trained {} seed(s); checkpoints:\n{}",
                paths.len(),
                paths
                    .iter()
                    .map(|p| format!("  {}", p.display()))
                    .collect::<Vec<_>>()
                    .join("\n")
            ))
        }
        Command::Evaluate { checkpoint } => {
            let report = cmd_evaluate(&cfg, &cfg.seeds, checkpoint.as_deref(), cli.timings)?;
            Ok(serde_json::to_string_pretty(&report)?)
        }
        Command::Baseline { kind } => {
            let report = cmd_baseline(&cfg, kind, &cfg.seeds, cli.timings)?;
            Ok(serde_json::to_string_pretty(&report)?)
        }
        Command::Sweep { axis } => {
            let axis = match axis {
                Some(s) => parse_axis(s)?,
                None => cfg.sweep.axis.ok_or_else(|| {
                    Error::Config("no sweep axis (use --axis or [sweep] axis)".into())
                })?,
            };
            let path = cmd_sweep(&cfg, axis, cli.timings)?;
            Ok(format!("sweep written to {}", path.display()))
        }
    }
}

/// Entry point for the binary: parse, run, emit error JSON on stderr.
pub fn main_entry() -> i32 {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(msg) => {
            println!("{msg}");
            0
        }
        Err(e) => {
            let payload = serde_json::json!({
                "error": e.to_string(),
                "kind": e.kind(),
            });
            eprintln!("{payload}");
            1
        }
    }
}
