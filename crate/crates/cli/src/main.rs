//! `sap`: hyperspectral anomaly detection from the command line.
//!
//! Each pipeline stage is its own subcommand and writes a run manifest
//! (`*.manifest.json`) beside its outputs. Failures print one line of the
//! form `error[<category>]: <message>` and exit nonzero.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use sap_core::SapError;

use crate::config::CliConfig;

#[derive(Debug, Parser)]
#[command(name = "sap", version, about = "Self-supervised anomaly prior detection for hyperspectral cubes")]
struct Cli {
    /// JSON config; explicit flags still take precedence. A run manifest works too.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Emit a pseudo-anomaly training dataset from source cubes.
    Generate(GenerateArgs),
    /// Write the bundled synthetic scene and its truth mask.
    Fixture(FixtureArgs),
    /// Build the purified background dictionary and latent cube.
    Dict(DictArgs),
    /// Solve for the anomaly component and write the score map.
    Detect(DetectArgs),
    /// Score a map against a truth mask (3D-ROC AUCs as CSV).
    Eval(EvalArgs),
    /// Render a score map as an 8-bit PGM.
    Render(RenderArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub input: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct FixtureArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct DictArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Base path; writes `<out>.dict.json`, `<out>.dict.raw` and `<out>.latent.*`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub clusters: Option<usize>,
    #[arg(long)]
    pub drop_quantile: Option<f64>,
    #[arg(long)]
    pub max_atoms: Option<usize>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Dictionary from `sap dict`; built on the fly when omitted.
    #[arg(long)]
    pub dict: Option<PathBuf>,
    /// `fallback:<seed>` or `cnn:<weights.sapw>`.
    #[arg(long, default_value = "fallback:0")]
    pub prior: String,
    /// Replace the learned prior with the l2,1 baseline at this beta.
    #[arg(long)]
    pub baseline_l21: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub cube: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    /// `otsu` or `mean_plus_k_sigma`.
    #[arg(long)]
    pub threshold: Option<String>,
    #[arg(long)]
    pub k: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("SAP_THREADS") else { return Ok(()) };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| SapError::InvalidArgument(format!("SAP_THREADS={raw:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| anyhow::anyhow!("thread pool: {e}"))
}

fn run(cli: &Cli) -> Result<()> {
    configure_threads()?;
    let cfg = CliConfig::load(cli.config.as_deref())?;
    match &cli.command {
        Command::Generate(a) => commands::generate(a, &cfg),
        Command::Fixture(a) => commands::fixture(a, &cfg),
        Command::Dict(a) => commands::dict(a, &cfg),
        Command::Detect(a) => commands::detect_cmd(a, &cfg),
        Command::Eval(a) => commands::eval(a, &cfg),
        Command::Render(a) => commands::render(a, &cfg),
    }
}

fn category(err: &anyhow::Error) -> &'static str {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<SapError>() {
            return e.category();
        }
        if cause.is::<serde_json::Error>() {
            return "config";
        }
        if cause.is::<std::io::Error>() {
            return "io";
        }
    }
    "cli"
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error[{}]: {msg}", category(&e));
            ExitCode::FAILURE
        }
    }
}
