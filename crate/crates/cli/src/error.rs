use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{line}:{col}: {msg}")]
    Parse { line: usize, col: usize, msg: String },
    #[error("{line}:{col}: undefined name '{name}'")]
    Undefined { name: String, line: usize, col: usize },
    #[error("{line}:{col}: {msg}")]
    Bind { line: usize, col: usize, msg: String },
    #[error("dataset '{0}' does not exist")]
    MissingDataset(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    File { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Engine(#[from] mmdb::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;
