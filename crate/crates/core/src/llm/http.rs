use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Backend, BackendError, Completion, CompletionRequest, Usage};

/// POSTs a JSON body and returns the decoded JSON reply, mapping transport
/// failures, 429 and 5xx to [`BackendError::Transient`].
pub(crate) fn post_json(
    agent: &ureq::Agent,
    url: &str,
    bearer: Option<&str>,
    body: &Value,
) -> Result<Value, BackendError> {
    let mut req = agent.post(url).header("Content-Type", "application/json");
    if let Some(token) = bearer {
        req = req.header("Authorization", format!("Bearer {token}"));
    }
    let mut resp = match req.send_json(body) {
        Ok(r) => r,
        Err(ureq::Error::Json(e)) => return Err(BackendError::Malformed(e.to_string())),
        Err(e @ (ureq::Error::BadUri(_) | ureq::Error::RequireHttpsOnly(_))) => {
            return Err(BackendError::Fatal(e.to_string()))
        }
        Err(e) => return Err(BackendError::Transient(e.to_string())),
    };
    let status = resp.status().as_u16();
    let text = resp
        .body_mut()
        .read_to_string()
        .map_err(|e| BackendError::Transient(format!("reading body: {e}")))?;
    if status == 429 || status >= 500 {
        return Err(BackendError::Transient(format!("HTTP {status}: {}", snippet(&text))));
    }
    if !(200..300).contains(&status) {
        return Err(BackendError::Fatal(format!("HTTP {status}: {}", snippet(&text))));
    }
    serde_json::from_str(&text).map_err(|e| BackendError::Malformed(format!("{e}: {}", snippet(&text))))
}

fn snippet(text: &str) -> &str {
    let end = text.char_indices().nth(200).map(|(i, _)| i).unwrap_or(text.len());
    &text[..end]
}

pub(crate) fn agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::new_with_config(
        ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChatBackendConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the bearer token, if any.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_timeout() -> u64 {
    120
}

/// Live chat-completion client: POSTs `{model, messages, temperature,
/// max_tokens[, seed]}` and reads `choices[0].message.content`.
pub struct ChatBackend {
    config: ChatBackendConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl ChatBackend {
    pub fn new(config: ChatBackendConfig) -> Self {
        let api_key = config
            .api_key_env
            .as_deref()
            .and_then(|var| std::env::var(var).ok());
        ChatBackend {
            agent: agent(Duration::from_secs(config.timeout_secs.max(1))),
            config,
            api_key,
        }
    }

    fn body(&self, request: &CompletionRequest) -> Value {
        let mut messages = Vec::new();
        if !request.system_text.is_empty() {
            messages.push(json!({"role": "system", "content": request.system_text}));
        }
        messages.push(json!({"role": "user", "content": request.user_text}));
        let mut body = json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        if let Some(seed) = request.seed {
            body["seed"] = json!(seed);
        }
        body
    }
}

impl Backend for ChatBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError> {
        let reply = post_json(
            &self.agent,
            &self.config.endpoint,
            self.api_key.as_deref(),
            &self.body(request),
        )?;
        let text = reply
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| BackendError::Malformed("missing choices[0].message.content".into()))?;
        let usage = reply.get("usage").map(|u| Usage {
            prompt_tokens: u.get("prompt_tokens").and_then(Value::as_u64).unwrap_or(0),
            completion_tokens: u.get("completion_tokens").and_then(Value::as_u64).unwrap_or(0),
        });
        Ok(Completion {
            text: text.to_string(),
            usage,
        })
    }
}
