use serde::{Deserialize, Serialize};

use super::MemoryError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(pub Vec<f64>);

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// `dot(a, b) / (|a| |b|)`. Zero vectors have no direction and are an
/// error rather than a similarity of 0.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, MemoryError> {
    if a.dim() != b.dim() {
        return Err(MemoryError::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(MemoryError::ZeroVector);
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Ok(dot / (na * nb))
}

/// Text embedding provider.
pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, MemoryError>;

    fn embed(&self, text: &str) -> Result<EmbeddingVector, MemoryError> {
        let mut v = self.embed_batch(&[text])?;
        v.pop().ok_or(MemoryError::Provider("provider returned no vector".into()))
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, b| (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME))
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Offline, deterministic embedder: a seeded random projection of token
/// hashes.
///
/// Text is lowercased and split on non-alphanumeric characters (the whole
/// trimmed text is the single token when that yields nothing). Each token
/// seeds a SplitMix64 stream with `fnv1a64(token) ^ seed`; the stream's
/// outputs, mapped to `[-1, 1)` as `(x >> 11) / 2^53 * 2 - 1`, are summed
/// per component over all tokens, and the sum is L2-normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashEmbedder {
    pub dim: usize,
    pub seed: u64,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder { dim: 384, seed: 0 }
    }
}

impl HashEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        HashEmbedder { dim, seed }
    }

    fn project(&self, text: &str) -> EmbeddingVector {
        let lower = text.to_lowercase();
        let mut tokens: Vec<&str> = lower
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .collect();
        if tokens.is_empty() {
            tokens.push(lower.trim());
        }
        let mut v = vec![0.0f64; self.dim];
        for tok in tokens {
            let mut state = fnv1a(tok.as_bytes()) ^ self.seed;
            for x in v.iter_mut() {
                let r = splitmix64(&mut state);
                *x += (r >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        } else if let Some(first) = v.first_mut() {
            *first = 1.0;
        }
        EmbeddingVector(v)
    }
}

impl Embedder for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, MemoryError> {
        texts
            .iter()
            .map(|t| {
                if t.trim().is_empty() {
                    Err(MemoryError::EmptyText)
                } else {
                    Ok(self.project(t))
                }
            })
            .collect()
    }
}

#[cfg(feature = "http")]
pub use remote::{HttpEmbedder, HttpEmbedderConfig};

#[cfg(feature = "http")]
mod remote {
    use std::time::Duration;

    use serde::{Deserialize, Serialize};
    use serde_json::{json, Value};

    use super::{Embedder, EmbeddingVector};
    use crate::memory::MemoryError;

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    pub struct HttpEmbedderConfig {
        pub endpoint: String,
        pub dim: usize,
        #[serde(default)]
        pub api_key_env: Option<String>,
        #[serde(default)]
        pub model: Option<String>,
    }

    /// Remote embedding endpoint: POST `{"input": [texts]}` and read
    /// `{"vectors": [[..], ..]}` (an OpenAI-style `data[].embedding` reply is
    /// accepted too).
    pub struct HttpEmbedder {
        config: HttpEmbedderConfig,
        api_key: Option<String>,
        agent: ureq::Agent,
    }

    impl HttpEmbedder {
        pub fn new(config: HttpEmbedderConfig) -> Self {
            let api_key = config
                .api_key_env
                .as_deref()
                .and_then(|v| std::env::var(v).ok());
            HttpEmbedder {
                config,
                api_key,
                agent: crate::llm::http_agent(Duration::from_secs(60)),
            }
        }
    }

    fn vectors(reply: &Value) -> Option<Vec<Vec<f64>>> {
        let rows: Vec<&Value> = match reply.get("vectors") {
            Some(Value::Array(rows)) => rows.iter().collect(),
            _ => reply
                .get("data")?
                .as_array()?
                .iter()
                .map(|d| d.get("embedding"))
                .collect::<Option<_>>()?,
        };
        rows.into_iter()
            .map(|r| r.as_array()?.iter().map(Value::as_f64).collect())
            .collect()
    }

    impl Embedder for HttpEmbedder {
        fn dim(&self) -> usize {
            self.config.dim
        }

        fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, MemoryError> {
            if texts.iter().any(|t| t.trim().is_empty()) {
                return Err(MemoryError::EmptyText);
            }
            let mut body = json!({ "input": texts });
            if let Some(m) = &self.config.model {
                body["model"] = json!(m);
            }
            let reply = crate::llm::post_json(
                &self.agent,
                &self.config.endpoint,
                self.api_key.as_deref(),
                &body,
            )
            .map_err(|e| MemoryError::Provider(e.to_string()))?;
            let rows = vectors(&reply)
                .ok_or_else(|| MemoryError::Provider("reply has no vectors".into()))?;
            if rows.len() != texts.len() {
                return Err(MemoryError::Provider(format!(
                    "asked for {} vectors, got {}",
                    texts.len(),
                    rows.len()
                )));
            }
            rows.into_iter()
                .map(|r| {
                    if r.len() != self.config.dim {
                        Err(MemoryError::DimensionMismatch {
                            expected: self.config.dim,
                            found: r.len(),
                        })
                    } else {
                        Ok(EmbeddingVector(r))
                    }
                })
                .collect()
        }
    }
}
