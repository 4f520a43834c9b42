//! Experiment harness: configuration, Monte Carlo trials, sweeps, oracle
//! runs and their CSV/JSON output.

pub mod checks;
pub mod config;
pub mod output;
pub mod sweep;
pub mod trials;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] ris_ee_core::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;
