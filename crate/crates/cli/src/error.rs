use std::path::PathBuf;

use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("stage {stage} failed on {}: {source}", .artifact.display())]
    Stage {
        stage: String,
        artifact: PathBuf,
        #[source]
        source: anbn_core::Error,
    },
}

impl CliError {
    pub fn stage(stage: impl Into<String>, artifact: impl Into<PathBuf>, source: impl Into<anbn_core::Error>) -> Self {
        CliError::Stage {
            stage: stage.into(),
            artifact: artifact.into(),
            source: source.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Stage { .. } => 3,
        }
    }
}
