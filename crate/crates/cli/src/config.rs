use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use trailcast::corpus::{PreprocessParams, Schema};
use trailcast::llm::{ChatBackendConfig, RetryPolicy};
use trailcast::memory::HttpEmbedderConfig;
use trailcast::pipeline::RunConfig;

/// Everything a command needs, read from one TOML file and then patched by
/// command-line flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppConfig {
    /// Name printed in reports.
    #[serde(default = "default_dataset")]
    pub dataset: String,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    #[serde(default)]
    pub preprocess: PreprocessParams,
    #[serde(default)]
    pub cohorts: CohortConfig,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub llm: LlmConfig,
    #[serde(default)]
    pub embedding: EmbeddingConfig,
}

fn default_dataset() -> String {
    "dataset".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub checkins: PathBuf,
    pub schema: Schema,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CohortConfig {
    /// Activity strata in reports.
    pub strata: bool,
    /// Share of training users held out as zero-shot users.
    pub zero_shot_fraction: f64,
    pub zero_shot_seed: u64,
}

impl Default for CohortConfig {
    fn default() -> Self {
        CohortConfig {
            strata: true,
            zero_shot_fraction: 0.3,
            zero_shot_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LlmConfig {
    pub backend: BackendConfig,
    pub retry: RetryPolicy,
    pub max_in_flight: usize,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            backend: BackendConfig::Scripted {
                fixture: PathBuf::from("fixture.json"),
            },
            retry: RetryPolicy::default(),
            max_in_flight: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendConfig {
    Live(ChatBackendConfig),
    Scripted { fixture: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EmbeddingConfig {
    Hash { dim: usize, seed: u64 },
    Http(HttpEmbedderConfig),
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig::Hash { dim: 384, seed: 0 }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

impl AppConfig {
    /// Reads `path`; relative paths inside are resolved against its
    /// directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let mut config: AppConfig = toml::from_str(&text)
            .map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        rebase(&mut config.output_dir);
        rebase(&mut config.data.checkins);
        if let BackendConfig::Scripted { fixture } = &mut config.llm.backend {
            rebase(fixture);
        }
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
output_dir = "out"

[data]
checkins = "checkins.csv"

[data.schema]
user = "user"
poi = "poi"
category = "category"
lat = "lat"
lon = "lon"
timestamp = "timestamp"
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c: AppConfig = toml::from_str(MINIMAL).unwrap();
        assert_eq!(c.run, RunConfig::default());
        assert_eq!(c.preprocess, PreprocessParams::default());
        assert_eq!(c.embedding, EmbeddingConfig::default());
        let back: AppConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for extra in ["\n[run]\nk_categoris = 5\n", "\nverbose = true\n", "\n[llm.backend]\nkind = \"live\"\nendpoint = \"x\"\nmodel = \"m\"\nmodle = 1\n"] {
            let text = format!("{MINIMAL}{extra}");
            assert!(toml::from_str::<AppConfig>(&text).is_err(), "accepted {extra:?}");
        }
    }

    #[test]
    fn live_backend_parses() {
        let text = format!("{MINIMAL}\n[llm.backend]\nkind = \"live\"\nendpoint = \"http://x/v1\"\nmodel = \"m\"\napi_key_env = \"KEY\"\n");
        let c: AppConfig = toml::from_str(&text).unwrap();
        assert!(matches!(c.llm.backend, BackendConfig::Live(ref l) if l.model == "m"));
    }

    #[test]
    fn example_config_parses() {
        let c: AppConfig = toml::from_str(include_str!("../trailcast.example.toml")).unwrap();
        assert_eq!(c.run.workers, 4);
        assert!(matches!(c.llm.backend, BackendConfig::Live(_)));
    }
}
