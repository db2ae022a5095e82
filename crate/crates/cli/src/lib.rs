//! `osal` experiment harness: dataset generation, novelty evaluation,
//! active-learning sweeps and pseudo-labelling, driven by one flat config.

pub mod commands;
pub mod config;
pub mod data;
pub mod error;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::{ExperimentConfig, FlagOverrides, Preset};
pub use data::Outputs;
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "osal",
    version,
    about = "Open-set recognition and active learning in embedding space"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Flat TOML config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run this single seed instead of the configured list.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Write into a non-empty output directory.
    #[arg(long, global = true)]
    pub force: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate synthetic train/observed/test files, one directory per seed.
    Gen,
    /// Novelty detection metrics for every configured measure.
    Novelty,
    /// Active-learning runs for every strategy, seed and budget.
    Al,
    /// Pseudo-labels for the observed set and novel-class recall.
    Pseudo,
}

/// Runs `command` and returns the files it produces, without writing them.
pub fn execute(command: Command, cfg: &ExperimentConfig) -> Result<Outputs, CliError> {
    Ok(match command {
        Command::Gen => commands::gen::run(cfg)?,
        Command::Novelty => commands::novelty::evaluate(cfg)?.1,
        Command::Al => commands::al::evaluate(cfg)?.1,
        Command::Pseudo => commands::pseudo::evaluate(cfg)?.1,
    })
}

fn run_parsed(cli: &Cli, env: Vec<(String, String)>) -> Result<Outputs, CliError> {
    let flags = FlagOverrides {
        seed: cli.seed,
        out: cli.out.clone(),
    };
    let cfg = ExperimentConfig::load(cli.config.as_deref(), env, &flags)?;
    data::check_out_dir(&cfg.out, cli.force)?;
    let outputs = execute(cli.command, &cfg)?;
    outputs.write_to(&cfg.out)?;
    Ok(outputs)
}

/// Parses `args`, runs the command against the process environment and
/// returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run_parsed(&cli, std::env::vars().collect()) {
        Ok(outputs) => {
            eprintln!("wrote {} files", outputs.len());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
