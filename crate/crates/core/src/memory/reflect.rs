use std::fmt::Write;

use super::{Embedder, Level, MemoryStore, ReflectionRecord};
use crate::corpus::{PoiId, UserId};
use crate::llm::{with_scenario, CompletionRequest, LlmClient};

pub const ACTIVITY_REFLECTION_SYSTEM: &str = "You review failed next-activity forecasts made by a \
mobility assistant. Compare the predicted activity categories with what the user actually did \
and write one short lesson that would improve future category forecasts in similar contexts.";

pub const LOCATION_REFLECTION_SYSTEM: &str = "You review failed next-place forecasts made by a \
mobility assistant. Compare the ranked places with the place the user actually visited and \
write one short lesson about choosing a specific place within a category in similar contexts.";

/// True when `actual` is not among the first `depth` predicted categories.
pub fn activity_missed(predicted: &[String], actual: &str, depth: usize) -> bool {
    !predicted.iter().take(depth).any(|c| c == actual)
}

/// True when `actual` is not among the first `depth` places of the ranking.
pub fn location_missed(ranking: &[PoiId], actual: &PoiId, depth: usize) -> bool {
    !ranking.iter().take(depth).any(|p| p == actual)
}

/// Everything a reflection prompt needs about one failed step.
#[derive(Debug, Clone)]
pub struct ReflectionCase<'a> {
    pub scenario: &'a str,
    pub user: &'a UserId,
    pub context_digest: &'a str,
    pub trajectory: &'a str,
    pub predicted: &'a [String],
    pub actual: &'a str,
    /// Category of the actual place; location reflections only.
    pub category: Option<&'a str>,
    pub created_at: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReflectionOutcome {
    Stored,
    Skipped(String),
}

impl ReflectionOutcome {
    pub fn is_stored(&self) -> bool {
        matches!(self, ReflectionOutcome::Stored)
    }
}

fn prompt(level: Level, case: &ReflectionCase<'_>) -> String {
    let mut body = String::new();
    let _ = writeln!(body, "## Context at the failed step\n{}\n", case.context_digest.trim_end());
    let _ = writeln!(body, "## Recent trajectory\n{}\n", case.trajectory.trim_end());
    match level {
        Level::Activity => {
            let _ = writeln!(body, "## Predicted categories (best first)\n{}\n", case.predicted.join(", "));
            let _ = writeln!(body, "## Actual category\n{}\n", case.actual);
            body.push_str(
                "## Task\nExplain briefly why the forecast missed, then state one general rule \
                 that would have ranked the actual category higher. Answer with the lesson only, \
                 at most three sentences.",
            );
        }
        Level::Location => {
            let shown: Vec<&str> = case.predicted.iter().take(10).map(String::as_str).collect();
            let _ = writeln!(body, "## Predicted places (best first)\n{}\n", shown.join(", "));
            let _ = writeln!(body, "## Actual place\n{}\n", case.actual);
            if let Some(c) = case.category {
                let _ = writeln!(body, "## Actual category\n{c}\n");
            }
            body.push_str(
                "## Task\nExplain briefly why the actual place was ranked too low, then state one \
                 rule about distance, timing or habit that would have ranked it higher. Answer \
                 with the lesson only, at most three sentences.",
            );
        }
    }
    with_scenario(case.scenario, &body)
}

fn lesson(text: &str) -> String {
    let t = text.trim();
    let t = t
        .strip_prefix("```")
        .and_then(|r| r.strip_suffix("```"))
        .map(|r| r.split_once('\n').map_or(r, |(_, rest)| rest))
        .unwrap_or(t);
    let t = t.trim();
    t.strip_prefix("Lesson:").map_or(t, str::trim).to_string()
}

/// Asks the LLM for a lesson and appends it to `store`.
///
/// Any LLM or embedding failure is reported as `Skipped`; the store is
/// untouched in that case.
fn reflect(
    level: Level,
    case: &ReflectionCase<'_>,
    llm: &LlmClient,
    embedder: &dyn Embedder,
    store: &mut MemoryStore,
    seed: Option<u64>,
) -> ReflectionOutcome {
    let system = match level {
        Level::Activity => ACTIVITY_REFLECTION_SYSTEM,
        Level::Location => LOCATION_REFLECTION_SYSTEM,
    };
    let request = CompletionRequest {
        system_text: system.to_string(),
        user_text: prompt(level, case),
        temperature: 0.0,
        max_tokens: 256,
        seed,
    };
    let text = match llm.complete(&request) {
        Ok(r) => lesson(&r.text),
        Err(e) => return ReflectionOutcome::Skipped(e.to_string()),
    };
    if text.is_empty() {
        return ReflectionOutcome::Skipped("empty lesson".into());
    }
    let embedding = match embedder.embed(case.context_digest) {
        Ok(e) => e,
        Err(e) => return ReflectionOutcome::Skipped(e.to_string()),
    };
    let record = ReflectionRecord {
        level,
        source_user: case.user.clone(),
        context_digest: case.context_digest.to_string(),
        prediction: case.predicted.join(", "),
        actual: case.actual.to_string(),
        lesson: text,
        embedding,
        created_at: case.created_at,
    };
    match store.push_reflection(record) {
        Ok(()) => ReflectionOutcome::Stored,
        Err(e) => ReflectionOutcome::Skipped(e.to_string()),
    }
}

pub fn reflect_activity(
    case: &ReflectionCase<'_>,
    llm: &LlmClient,
    embedder: &dyn Embedder,
    store: &mut MemoryStore,
    seed: Option<u64>,
) -> ReflectionOutcome {
    reflect(Level::Activity, case, llm, embedder, store, seed)
}

pub fn reflect_location(
    case: &ReflectionCase<'_>,
    llm: &LlmClient,
    embedder: &dyn Embedder,
    store: &mut MemoryStore,
    seed: Option<u64>,
) -> ReflectionOutcome {
    reflect(Level::Location, case, llm, embedder, store, seed)
}
