//! The `conceptmap` command-line driver.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub mod commands;
pub mod config;
pub mod manifest;

pub use config::{Config, SchemaError};

#[derive(Debug, Parser)]
#[command(name = "conceptmap", version, about = "Concept-conditioned cross-lingual embedding alignment")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Adversarial training of the mapping
    Train(CommonArgs),
    /// Iterative Procrustes refinement of a checkpoint
    Refine(CommonArgs),
    /// P@1 of a mapping against a dictionary
    Evaluate(CommonArgs),
    /// Mutual-nearest-neighbour dictionary induction
    Induce(CommonArgs),
    /// Generate a synthetic bilingual world
    Synth(CommonArgs),
    /// Nearest targets of one source word
    Knn(CommonArgs),
}

#[derive(Debug, Args)]
#[command(after_help = config::schema_help())]
pub struct CommonArgs {
    /// JSON config file or a run manifest
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `--key value` overrides (any unambiguous dotted suffix of a key)
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    pub overrides: Vec<String>,
}

impl CommonArgs {
    pub fn resolve(&self) -> anyhow::Result<Config> {
        let overrides = config::parse_overrides(&self.overrides)?;
        match &self.config {
            None => Ok(Config::build(None, &overrides)?),
            Some(path) => manifest::load_config(path, &overrides),
        }
    }
}

/// Caps the global worker pool from `CONCEPTMAP_THREADS`.
pub fn init_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var("CONCEPTMAP_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| anyhow::anyhow!("CONCEPTMAP_THREADS must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| anyhow::anyhow!("thread pool: {e}"))
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I) -> anyhow::Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    dispatch(&cli.command)
}

pub fn dispatch(command: &Command) -> anyhow::Result<()> {
    match command {
        Command::Train(a) => commands::train(&a.resolve()?),
        Command::Refine(a) => commands::refine(&a.resolve()?),
        Command::Evaluate(a) => commands::evaluate(&a.resolve()?),
        Command::Induce(a) => commands::induce(&a.resolve()?),
        Command::Synth(a) => commands::synth(&a.resolve()?),
        Command::Knn(a) => commands::knn(&a.resolve()?),
    }
}
