use std::path::{Path, PathBuf};

use componerf::checkpoint::CheckpointError;
use componerf::guidance::GuidanceError;
use componerf::lifecycle::LifecycleError;
use componerf::trainer::TrainError;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("cannot read {path}: {reason}")]
    Input { path: PathBuf, reason: String },
    #[error("{0}")]
    Guidance(#[from] GuidanceError),
    #[error("guidance failed at step {step}: {source}; partial checkpoint at {}", checkpoint.display())]
    Interrupted { step: u64, source: GuidanceError, checkpoint: PathBuf },
    #[error("latent scene needs a decode service for --rgb (set --guidance remote:URL or COMPONERF_GUIDANCE_URL)")]
    DecodeUnavailable,
    #[error("{0}")]
    Checkpoint(#[from] CheckpointError),
    #[error("{0}")]
    Lifecycle(#[from] LifecycleError),
    #[error("cannot write {path}: {reason}")]
    Output { path: PathBuf, reason: String },
}

#[derive(Serialize)]
struct ErrorLine<'a> {
    error: &'a str,
    exit_code: i32,
    message: String,
}

impl CliError {
    pub fn input(path: &Path, e: impl ToString) -> Self {
        CliError::Input { path: path.to_path_buf(), reason: e.to_string() }
    }

    pub fn output(path: &Path, e: impl ToString) -> Self {
        CliError::Output { path: path.to_path_buf(), reason: e.to_string() }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "ConfigError",
            CliError::Input { .. } => "InputError",
            CliError::Output { .. } => "OutputError",
            CliError::Guidance(GuidanceError::Transport(_)) => "Transport",
            CliError::Guidance(_) => "GuidanceError",
            CliError::Interrupted { .. } => "GuidanceFailure",
            CliError::DecodeUnavailable => "DecodeUnavailable",
            CliError::Checkpoint(CheckpointError::VersionMismatch(_)) => "VersionMismatch",
            CliError::Checkpoint(_) => "CheckpointError",
            CliError::Lifecycle(LifecycleError::MissingCache { .. }) => "MissingCache",
            CliError::Lifecycle(LifecycleError::CacheVersionMismatch { .. }) => "CacheVersionMismatch",
            CliError::Lifecycle(_) => "LifecycleError",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Input { .. } | CliError::Output { .. } => 2,
            CliError::Guidance(_) | CliError::Interrupted { .. } | CliError::DecodeUnavailable => 3,
            CliError::Checkpoint(_) | CliError::Lifecycle(_) => 4,
        }
    }

    /// One JSON object on one line.
    pub fn line(&self) -> String {
        let e = ErrorLine { error: self.kind(), exit_code: self.exit_code(), message: self.to_string() };
        serde_json::to_string(&e).expect("error line serializes")
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::GuidanceFailure { source, .. } => CliError::Guidance(source),
            other => CliError::Config(other.to_string()),
        }
    }
}
