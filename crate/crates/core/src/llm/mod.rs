//! Chat-completion backends and response parsing.
//!
//! Every prompt starts with a scenario header line (`### scenario: <tag>`).
//! Live backends ignore it; the scripted backend uses it as the lookup key,
//! so fixture files survive template wording changes.

mod client;
#[cfg(feature = "http")]
mod http;
mod parse;
mod scripted;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use client::{CallStats, CompletionResult, LlmClient, RetryPolicy};
#[cfg(feature = "http")]
pub use http::{ChatBackend, ChatBackendConfig};
#[cfg(feature = "http")]
pub(crate) use http::{agent as http_agent, post_json};
pub use parse::{
    parse_categories, parse_pois, render_answer, ParseError, ParseReport, ParsedCategoryResponse,
    ParsedPoiResponse, Strategy,
};
pub use scripted::{ScriptedBackend, ScriptedFixture};

pub const SCENARIO_PREFIX: &str = "### scenario: ";

/// Prefixes `body` with the scenario header line.
pub fn with_scenario(tag: &str, body: &str) -> String {
    format!("{SCENARIO_PREFIX}{tag}\n{body}")
}

/// The scenario tag of a prompt, if its header is present.
pub fn scenario_tag(text: &str) -> Option<&str> {
    text.lines()
        .find_map(|l| l.strip_prefix(SCENARIO_PREFIX))
        .map(str::trim)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub system_text: String,
    pub user_text: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: Option<u64>,
}

impl CompletionRequest {
    pub fn scenario(&self) -> Option<&str> {
        scenario_tag(&self.user_text)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub usage: Option<Usage>,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum BackendError {
    /// Worth retrying: transport failure, timeout, 429 or 5xx.
    #[error("transient backend failure: {0}")]
    Transient(String),
    #[error("backend rejected request: {0}")]
    Fatal(String),
    #[error("malformed backend response: {0}")]
    Malformed(String),
    #[error("no scripted response for scenario {0:?}")]
    NoScript(String),
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum LlmError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("gave up after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: BackendError },
    #[error(transparent)]
    Backend(BackendError),
}

/// A chat-completion provider.
pub trait Backend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError>;
}

impl<F> Backend for F
where
    F: Fn(&CompletionRequest) -> Result<Completion, BackendError> + Send + Sync,
{
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError> {
        self(request)
    }
}
