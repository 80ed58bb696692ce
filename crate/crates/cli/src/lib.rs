//! Experiment orchestration behind the `cotrain` command.

pub mod config;
pub mod manifest;
pub mod pipeline;
pub mod report;
pub mod svg;

use thiserror::Error;

/// A library error tagged with the pipeline stage that raised it.
#[derive(Debug, Error)]
#[error("stage '{stage}': {source}")]
pub struct StageError {
    pub stage: String,
    #[source]
    pub source: cotrain::Error,
}

impl StageError {
    pub fn exit_code(&self) -> i32 {
        self.source.exit_code()
    }
}
