use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, Completion, CompletionRequest};

/// Fixture file contents: scenario tag -> response text.
///
/// A key ending in `*` matches every tag starting with the text before it;
/// exact keys win over patterns and longer patterns win over shorter ones.
/// `default` answers anything left unmatched.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedFixture {
    #[serde(default)]
    pub responses: BTreeMap<String, String>,
    #[serde(default)]
    pub default: Option<String>,
}

impl ScriptedFixture {
    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Fatal(format!("cannot read fixture {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| BackendError::Malformed(format!("fixture {}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        std::fs::write(path, text)
    }

    pub fn lookup(&self, tag: &str) -> Option<&str> {
        if let Some(r) = self.responses.get(tag) {
            return Some(r);
        }
        self.responses
            .iter()
            .filter_map(|(k, v)| {
                let prefix = k.strip_suffix('*')?;
                tag.starts_with(prefix).then_some((prefix.len(), v))
            })
            .max_by_key(|(len, _)| *len)
            .map(|(_, v)| v.as_str())
            .or(self.default.as_deref())
    }
}

/// Deterministic backend answering from a [`ScriptedFixture`].
#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    fixture: ScriptedFixture,
}

impl ScriptedBackend {
    pub fn new(fixture: ScriptedFixture) -> Self {
        ScriptedBackend { fixture }
    }

    pub fn from_file(path: &Path) -> Result<Self, BackendError> {
        ScriptedFixture::load(path).map(Self::new)
    }
}

impl Backend for ScriptedBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError> {
        let tag = request.scenario().unwrap_or("");
        self.fixture
            .lookup(tag)
            .map(|text| Completion {
                text: text.to_string(),
                usage: None,
            })
            .ok_or_else(|| BackendError::NoScript(tag.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::with_scenario;

    fn request(tag: &str) -> CompletionRequest {
        CompletionRequest {
            system_text: "sys".into(),
            user_text: with_scenario(tag, "body"),
            temperature: 0.0,
            max_tokens: 10,
            seed: Some(1),
        }
    }

    #[test]
    fn exact_pattern_default_precedence() {
        let mut f = ScriptedFixture::default();
        f.responses.insert("eval/activity/u1/t/1".into(), "exact".into());
        f.responses.insert("eval/activity/*".into(), "short".into());
        f.responses.insert("eval/activity/u1/*".into(), "long".into());
        let b = ScriptedBackend::new(f.clone());
        let text = |t: &str| b.complete(&request(t)).map(|c| c.text);
        assert_eq!(text("eval/activity/u1/t/1").unwrap(), "exact");
        assert_eq!(text("eval/activity/u1/t/2").unwrap(), "long");
        assert_eq!(text("eval/activity/u2/t/2").unwrap(), "short");
        assert_eq!(text("eval/location/u2/t/2"), Err(BackendError::NoScript("eval/location/u2/t/2".into())));

        f.default = Some("fallback".into());
        let b = ScriptedBackend::new(f);
        assert_eq!(b.complete(&request("other")).unwrap().text, "fallback");
    }

    #[test]
    fn identical_requests_identical_answers() {
        let mut f = ScriptedFixture::default();
        f.responses.insert("x".into(), "1. Gym".into());
        let b = ScriptedBackend::new(f);
        assert_eq!(b.complete(&request("x")), b.complete(&request("x")));
    }

    #[test]
    fn fixture_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fixture.json");
        let mut f = ScriptedFixture::default();
        f.responses.insert("a*".into(), "b".into());
        f.save(&path).unwrap();
        assert_eq!(ScriptedFixture::load(&path).unwrap(), f);
    }
}
