//! `dualfilter` — experiment runner for the dual-filter inference engines.
//!
//! Subcommands reproduce the reference experiments and emit tidy CSV/JSON
//! for offline plotting. Exit code 0 on success; failures print a
//! machine-readable JSON error to stderr and exit nonzero.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dualfilter_cli::config::ExperimentConfig;
use dualfilter_cli::experiments;
use dualfilter_cli::report::OutputFormat;

#[derive(Parser)]
#[command(
    name = "dualfilter",
    about = "Model-based next-observation prediction via dual optimal control",
    version
)]
struct Cli {
    /// Experiment config file (TOML); defaults reproduce the reference
    /// setup when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Tabular output format.
    #[arg(long, global = true, default_value = "csv")]
    format: OutputFormatArg,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum OutputFormatArg {
    Csv,
    Json,
}

impl From<OutputFormatArg> for OutputFormat {
    fn from(v: OutputFormatArg) -> Self {
        match v {
            OutputFormatArg::Csv => OutputFormat::Csv,
            OutputFormatArg::Json => OutputFormat::Json,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Control-weight heatmap and losses on the two-cycle chain.
    TwoCycle,
    /// Baum-Welch sweep over candidate state dimensions.
    DhatSweep,
    /// Weight-support shift under transition/emission perturbations.
    Perturb,
    /// Runtime/memory scaling of the dual filter vs. the augmented Kalman
    /// filter.
    Bench,
    /// Self-check of the linear Gaussian identities on random instances.
    LgssmCheck,
}

fn run(cli: Cli) -> dualfilter_core::error::Result<serde_json::Value> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let out_dir = cli
        .out
        .clone()
        .or_else(|| cfg.out_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    let format = cli.format.into();
    let seed = cfg.seed;
    match cli.command {
        Command::TwoCycle => experiments::two_cycle::run(&cfg.two_cycle, seed, &out_dir, format),
        Command::DhatSweep => experiments::dhat::run(&cfg.dhat_sweep, seed, &out_dir, format),
        Command::Perturb => experiments::perturb::run(&cfg.perturb, seed, &out_dir, format),
        Command::Bench => experiments::bench::run(&cfg.bench, seed, &out_dir, format),
        Command::LgssmCheck => {
            experiments::lgssm_check::run(&cfg.lgssm_check, seed, &out_dir, format)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(summary) => {
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary"));
            ExitCode::SUCCESS
        }
        Err(err) => {
            let kind = match &err {
                dualfilter_core::Error::InvalidModel(_) => "invalid_model",
                dualfilter_core::Error::Dimension(_) => "dimension",
                dualfilter_core::Error::ImpossiblePath { .. } => "impossible_path",
                dualfilter_core::Error::NonConvergence { .. } => "non_convergence",
                dualfilter_core::Error::TreeTooLarge { .. } => "tree_too_large",
                dualfilter_core::Error::Numerical(_) => "numerical",
                dualfilter_core::Error::Parse(_) => "parse",
            };
            eprintln!(
                "{}",
                serde_json::json!({ "error": err.to_string(), "kind": kind })
            );
            ExitCode::FAILURE
        }
    }
}
