//! Experiment configuration and pipeline stages behind the `xhembed` binary.

pub mod config;
pub mod pipeline;

pub use config::ExperimentConfig;
pub use pipeline::{run_pipeline, ResultRow, ResultsTable};

/// Failures reported by the command line; the variant picks the exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags or configuration (exit code 1).
    #[error("invalid configuration: {0}")]
    Validation(String),
    /// A pipeline stage failed (exit code 2).
    #[error("stage {stage} failed: {error:#}")]
    Stage { stage: String, error: anyhow::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Stage { .. } => 2,
        }
    }
}
