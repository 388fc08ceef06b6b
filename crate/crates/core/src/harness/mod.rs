//! Configuration loading and experiment drivers behind the command line.

use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub mod config;
pub mod experiments;
pub mod instances;
pub mod validate;

pub use config::{parse_config, parse_values, ConfigError, ExperimentSpec, Mode, SweepSpec};
pub use experiments::{oracle_compare, run_sweep, OracleComparison, SweepRow};
pub use validate::{validate, ValidateOptions, ValidationReport};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Market(#[from] crate::market::MarketError),
    #[error(transparent)]
    Oracle(#[from] crate::oracle::OracleError),
    #[error(transparent)]
    Cost(#[from] crate::cost_models::CostError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

impl HarnessError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Reads and parses a configuration file.
pub fn load_config(path: &Path) -> Result<ExperimentSpec, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    Ok(parse_config(&text)?)
}
