use std::path::Path;

use scriptorium::dataset::DatasetError;
use scriptorium::detector::DetectorError;
use scriptorium::eval::EvalError;
use scriptorium::experiment::ExperimentError;
use scriptorium::merge::MergeError;
use scriptorium::split::SplitError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("missing input: {} (give the flag or set it in the \"{section}\" section of the config file)", flags.join(", "))]
    Missing { section: &'static str, flags: Vec<String> },
    #[error("config file {path}: {message}")]
    Config { path: String, message: String },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {message}")]
    Json { path: String, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Merge(#[from] MergeError),
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), source }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Missing { .. } => "missing_input",
            CliError::Config { .. } => "config",
            CliError::Io { .. } => "io",
            CliError::Json { .. } => "parse",
            CliError::Invalid(_) => "invalid",
            CliError::Merge(_) => "merge",
            CliError::Split(_) => "split",
            CliError::Dataset(_) => "dataset",
            CliError::Detector(_) => "detector",
            CliError::Experiment(_) => "experiment",
            CliError::Eval(_) => "eval",
        }
    }

    /// One-line JSON record for stderr.
    pub fn record(&self) -> String {
        serde_json::json!({ "level": "error", "kind": self.kind(), "message": self.to_string() }).to_string()
    }
}
