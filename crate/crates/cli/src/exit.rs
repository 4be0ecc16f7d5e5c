use trailcast::corpus::CorpusError;
use trailcast::eval::EvalError;
use trailcast::llm::{BackendError, LlmError};
use trailcast::memory::MemoryError;
use trailcast::pipeline::PipelineError;

use crate::config::ConfigError;
use crate::rundir::LockError;

pub const UNEXPECTED: u8 = 1;
pub const CONFIG: u8 = 2;
pub const DATA: u8 = 3;
pub const BACKEND: u8 = 4;
pub const MEMORY: u8 = 5;
pub const RUN_DIR: u8 = 6;
pub const EVAL: u8 = 7;

/// Every prediction step of a run failed, which points at the backend.
#[derive(Debug, thiserror::Error)]
#[error("all {steps} steps failed; last error: {last}")]
pub struct AllStepsFailed {
    pub steps: usize,
    pub last: String,
}

/// Exit status for the first classifiable error in the chain.
pub fn code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        let code = if cause.is::<ConfigError>() {
            CONFIG
        } else if cause.is::<CorpusError>() {
            DATA
        } else if cause.is::<LlmError>() || cause.is::<BackendError>() || cause.is::<AllStepsFailed>() {
            BACKEND
        } else if cause.is::<MemoryError>() {
            MEMORY
        } else if cause.is::<LockError>() {
            RUN_DIR
        } else if cause.is::<EvalError>() {
            EVAL
        } else if let Some(p) = cause.downcast_ref::<PipelineError>() {
            match p {
                PipelineError::Config(_) => CONFIG,
                PipelineError::Llm(_) => BACKEND,
                PipelineError::Memory(_) => MEMORY,
                PipelineError::Io(_) | PipelineError::Checkpoint(_) => RUN_DIR,
                PipelineError::Step(_) | PipelineError::Feature(_) => DATA,
            }
        } else if cause.is::<std::io::Error>() {
            RUN_DIR
        } else {
            continue;
        };
        return code;
    }
    UNEXPECTED
}
