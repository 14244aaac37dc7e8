//! `gctm`: stage-wise pipeline for graph contrastive topic models.
//!
//! Exit codes: 0 success, 2 input error, 3 missing or stale upstream stage,
//! 4 numeric fault.

mod manifest;
mod pipeline;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gctm::config::GctmConfig;

pub const EXIT_INPUT: u8 = 2;
pub const EXIT_STALE: u8 = 3;
pub const EXIT_NUMERIC: u8 = 4;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn input(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }

    pub fn stale(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_STALE,
            message: message.into(),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<gctm::Error> for Failure {
    fn from(e: gctm::Error) -> Self {
        let code = match e {
            gctm::Error::Numeric { .. } => EXIT_NUMERIC,
            _ => EXIT_INPUT,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "gctm", version, about = "Graph contrastive neural topic modelling pipeline")]
struct Cli {
    /// Configuration file (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Run a single seed instead of `train.seeds`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Artifact directory; defaults to $GCTM_CACHE_DIR, then `gctm-artifacts`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// `key=value` settings applied after the configuration file.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Tokenize the corpus, build the vocabulary, splits, TF-IDF and co-occurrence counts.
    Preprocess,
    /// Build the positive and negative NPMI word graphs.
    BuildGraphs,
    /// Train one model per seed.
    Train,
    /// Evaluate trained models: coherence, classification, sample similarity.
    Eval,
    /// Train and evaluate the four loss variants.
    Ablate,
    /// Collect evaluation and ablation results into tables.
    Report,
}

fn load_config(cli: &Cli) -> Result<GctmConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
            GctmConfig::parse_str(&text)?
        }
        None => GctmConfig::default(),
    };
    for o in &cli.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(seed) = cli.seed {
        cfg.train.seeds = vec![seed];
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = load_config(&cli)?;
    let root = cli
        .out
        .clone()
        .or_else(|| std::env::var_os("GCTM_CACHE_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("gctm-artifacts"));
    let p = pipeline::Pipeline::new(root, cfg)?;
    match cli.command {
        Command::Preprocess => p.preprocess(),
        Command::BuildGraphs => p.build_graphs(),
        Command::Train => p.train(),
        Command::Eval => p.eval(),
        Command::Ablate => p.ablate(),
        Command::Report => p.report(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
