//! Experiment configuration, execution and reporting for `lbstein`.

pub mod compare;
pub mod config;
pub mod error;
pub mod experiment;

use std::path::{Path, PathBuf};

pub use compare::{compare_files, TrendReport, Verdict};
pub use config::ExperimentConfig;
pub use error::CliError;
pub use experiment::{execute, Experiment, ResultRow, Source};

/// Environment variable that overrides the output directory in a config.
pub const OUT_DIR_ENV: &str = "LBSTEIN_OUT_DIR";

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const ERROR: i32 = 1;
    pub const CHECK_FAILED: i32 = 2;
}

/// Settings from the command line that override a config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub threads: Option<usize>,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
}

/// Loads a config and applies command-line overrides.
pub fn load_config(path: &Path, overrides: &Overrides) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::from_path(path)?;
    if let Some(seed) = overrides.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &overrides.out_dir {
        cfg.out_dir = Some(dir.clone());
    }
    Ok(cfg)
}

pub fn output_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
}
