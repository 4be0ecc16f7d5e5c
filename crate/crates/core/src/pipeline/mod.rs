//! Prompt assembly and the activity -> location orchestration.

mod config;
mod context;
mod prompt;
mod run;
mod stream;

use std::path::Path;

use thiserror::Error;

use crate::corpus::Trajectory;
use crate::eval::StepOutcome;
use crate::features::FeatureError;
use crate::llm::LlmError;
use crate::memory::{MemoryError, MemoryStore};

pub use config::{ActivityMode, ReflectionMode, RunConfig, Variant};
pub use context::{trajectory_digest, visit_line, Context, Dataset, UserFeatures};
pub use prompt::{
    assemble_activity_prompt, assemble_location_prompt, ActivityInputs, LocationInputs,
    PromptBundle, Section, SectionKey, ACTIVITY_SYSTEM, LOCATION_SYSTEM, REFLECTION_HEADER,
};
pub use run::{
    build_trajectory_pool, enumerate_steps, predict_step, reflect_step, run_split, scenario, Phase,
    PromptSink, Services, SplitOptions, SplitSummary, StepResult,
};
pub use stream::{
    corpus_digest, read_outcomes, Checkpoint, OutcomeHeader, OutcomeWriter, OUTCOME_VERSION,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid run config: {0}")]
    Config(String),
    #[error("step failed: {0}")]
    Step(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("cannot resume: {0}")]
    Checkpoint(String),
}

/// [`run_split`] backed by an outcome file with a checkpoint beside it.
///
/// With `resume`, a matching checkpoint makes the run continue after its
/// last completed step; the outcome file is rewritten to exactly the
/// checkpointed prefix first. Without `resume` any old checkpoint is
/// discarded.
#[allow(clippy::too_many_arguments)]
pub fn run_split_to_file(
    path: &Path,
    header: &OutcomeHeader,
    resume: bool,
    phase: Phase,
    trajectories: &[&Trajectory],
    data: &Dataset<'_>,
    config: &RunConfig,
    services: &Services<'_>,
    memory: &mut MemoryStore,
    limit: Option<usize>,
) -> Result<(SplitSummary, Vec<StepOutcome>), PipelineError> {
    let ckpt_path = Checkpoint::path_for(path);
    let mut done: Vec<StepOutcome> = Vec::new();
    if resume {
        if let Some(ckpt) = Checkpoint::load(&ckpt_path)? {
            ckpt.ensure_matches(header)?;
            let (old_header, old) = read_outcomes(path)?;
            if &old_header != header {
                return Err(PipelineError::Checkpoint(format!(
                    "{} was written by a different run",
                    path.display()
                )));
            }
            if old.len() < ckpt.completed {
                return Err(PipelineError::Checkpoint(format!(
                    "checkpoint says {} steps are done but {} holds {}",
                    ckpt.completed,
                    path.display(),
                    old.len()
                )));
            }
            done = old;
            done.truncate(ckpt.completed);
        }
    } else if ckpt_path.exists() {
        std::fs::remove_file(&ckpt_path).map_err(|e| PipelineError::Io(e.to_string()))?;
    }

    let mut writer = OutcomeWriter::create(path, header, &done)?;
    writer.flush()?;
    let mut completed = done.len();
    let options = SplitOptions {
        skip: completed,
        limit,
    };
    let mut sink = |o: &StepOutcome| -> Result<(), PipelineError> {
        writer.write(o)?;
        writer.flush()?;
        completed += 1;
        Checkpoint {
            config_digest: header.config_digest.clone(),
            corpus_digest: header.corpus_digest.clone(),
            phase: header.phase.clone(),
            completed,
            last: Some((o.user.0.clone(), o.trajectory_id.clone(), o.step)),
        }
        .save(&ckpt_path)?;
        done.push(o.clone());
        Ok(())
    };
    let summary = run_split(phase, trajectories, data, config, services, memory, options, &mut sink)?;
    Ok((summary, done))
}
