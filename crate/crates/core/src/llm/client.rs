use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, CompletionRequest, LlmError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            base_delay_ms: 500,
            max_delay_ms: 8_000,
        }
    }
}

impl RetryPolicy {
    pub fn immediate(max_retries: u32) -> Self {
        RetryPolicy {
            max_retries,
            base_delay_ms: 0,
            max_delay_ms: 0,
        }
    }

    fn delay(&self, retry: u32) -> Duration {
        let ms = self
            .base_delay_ms
            .saturating_mul(1u64 << retry.min(16))
            .min(self.max_delay_ms);
        Duration::from_millis(ms)
    }
}

/// Running totals over every call made through one client.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CallStats {
    pub calls: u64,
    pub retries: u64,
    pub failures: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionResult {
    pub text: String,
    pub retries: u32,
    pub latency: Duration,
}

struct Gate {
    in_flight: Mutex<usize>,
    freed: Condvar,
    limit: usize,
}

impl Gate {
    fn enter(&self) -> GateGuard<'_> {
        let mut n = self.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.limit {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        let mut n = self.0.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.0.freed.notify_one();
    }
}

/// Retrying front for a [`Backend`] with a bound on concurrent requests.
pub struct LlmClient {
    backend: Box<dyn Backend>,
    policy: RetryPolicy,
    gate: Gate,
    stats: Mutex<CallStats>,
}

impl LlmClient {
    pub fn new(backend: impl Backend + 'static, policy: RetryPolicy) -> Self {
        Self::with_limit(backend, policy, 4)
    }

    pub fn with_limit(backend: impl Backend + 'static, policy: RetryPolicy, max_in_flight: usize) -> Self {
        LlmClient {
            backend: Box::new(backend),
            policy,
            gate: Gate {
                in_flight: Mutex::new(0),
                freed: Condvar::new(),
                limit: max_in_flight.max(1),
            },
            stats: Mutex::new(CallStats::default()),
        }
    }

    pub fn stats(&self) -> CallStats {
        self.stats.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, LlmError> {
        if request.user_text.trim().is_empty() {
            return Err(LlmError::InvalidRequest("empty user text".into()));
        }
        if request.temperature.is_nan() || request.temperature < 0.0 {
            return Err(LlmError::InvalidRequest(format!(
                "temperature {} is negative",
                request.temperature
            )));
        }

        let _slot = self.gate.enter();
        let started = Instant::now();
        let mut retries = 0u32;
        let result = loop {
            match self.backend.complete(request) {
                Ok(c) => break Ok(c),
                Err(BackendError::Transient(msg)) if retries < self.policy.max_retries => {
                    log::warn!("transient backend failure (retry {}): {msg}", retries + 1);
                    std::thread::sleep(self.policy.delay(retries));
                    retries += 1;
                }
                Err(e @ BackendError::Transient(_)) => {
                    break Err(LlmError::Exhausted {
                        attempts: retries + 1,
                        last: e,
                    })
                }
                Err(e) => break Err(LlmError::Backend(e)),
            }
        };
        let latency = started.elapsed();

        let mut stats = self.stats.lock().unwrap_or_else(|e| e.into_inner());
        stats.calls += 1;
        stats.retries += u64::from(retries);
        stats.latency_ms += latency.as_millis() as u64;
        match result {
            Ok(c) => {
                if let Some(u) = c.usage {
                    stats.prompt_tokens += u.prompt_tokens;
                    stats.completion_tokens += u.completion_tokens;
                }
                Ok(CompletionResult {
                    text: c.text,
                    retries,
                    latency,
                })
            }
            Err(e) => {
                stats.failures += 1;
                Err(e)
            }
        }
    }
}
