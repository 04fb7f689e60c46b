//! Experiment drivers behind the `mixlab` binary: data generation, EM and
//! mean-field fits, VAE training, and parameter comparison reports.

pub mod commands;
pub mod config;
pub mod files;
pub mod matching;
pub mod svg;

use std::ffi::OsString;
use std::path::PathBuf;

use anyhow::Result;
use clap::{CommandFactory, FromArgMatches, Parser};

use config::{ExperimentConfig, Mode, RawConfig};

/// A malformed command line, config file or input file.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "mixlab", version, about = "Gaussian mixture EM, mean-field VB and VAE experiments")]
pub struct Cli {
    #[arg(value_enum)]
    pub mode: Mode,
    /// Config file of `key = value` lines.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long = "k-hat", value_name = "N")]
    pub k_hat: Option<usize>,
    /// Override any config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl Cli {
    pub fn experiment(&self) -> Result<ExperimentConfig> {
        let mut raw = RawConfig::defaults();
        if let Some(path) = &self.config {
            raw.merge_file(path)?;
        }
        for s in &self.set {
            raw.assign(s)?;
        }
        if let Some(seed) = self.seed {
            raw.set("seed", &seed.to_string())?;
        }
        if let Some(out) = &self.out {
            raw.set("out", &out.to_string_lossy())?;
        }
        if let Some(k) = self.k_hat {
            raw.set("k_hat", &k.to_string())?;
        }
        ExperimentConfig::from_raw(self.mode, &raw)
    }
}

pub fn run(cfg: &ExperimentConfig) -> Result<String> {
    match cfg.mode {
        Mode::GenData => commands::gen_data(cfg),
        Mode::FitEm => commands::fit_em_cmd(cfg),
        Mode::FitVb => commands::fit_vb_cmd(cfg),
        Mode::TrainVae => commands::train_vae_cmd(cfg),
        Mode::Report => commands::report_cmd(cfg),
    }
}

/// Numerical failures exit 2; everything else (bad input, IO, invalid
/// arguments, shape mismatches) exits 1.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<mixlab_core::Error>() {
            return match e.root() {
                mixlab_core::Error::InvalidArgument(_) | mixlab_core::Error::Dimension { .. } => {
                    EXIT_USAGE
                }
                _ => EXIT_NUMERICAL,
            };
        }
    }
    EXIT_USAGE
}

/// Parses `args` (including the program name), runs the command, and
/// returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let command = Cli::command().after_help(config::keys_help());
    let cli = match command
        .try_get_matches_from(args)
        .and_then(|m| Cli::from_arg_matches(&m))
    {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match cli.experiment().and_then(|cfg| run(&cfg)) {
        Ok(summary) => {
            print!("{summary}");
            EXIT_OK
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            exit_code(&err)
        }
    }
}
