//! Scripted offline backend. A script is an ordered rule list; the first
//! rule whose matcher accepts the user prompt supplies the response.

use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{Backend, BackendKind, ChatRequest, GatewayError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MockMatcher {
    ExactPrompt,
    ContainsSubstring,
    PatternKey,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MockRule {
    pub matcher: MockMatcher,
    pub key: String,
    pub response: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub rules: Vec<MockRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<String>,
}

impl MockScript {
    pub fn new(rules: Vec<MockRule>) -> Self {
        MockScript {
            rules,
            default: None,
        }
    }

    /// Script that answers everything with one fixed response.
    pub fn with_default(response: impl Into<String>) -> Self {
        MockScript {
            rules: Vec::new(),
            default: Some(response.into()),
        }
    }

    pub fn exact(mut self, key: impl Into<String>, response: impl Into<String>) -> Self {
        self.rules.push(MockRule {
            matcher: MockMatcher::ExactPrompt,
            key: key.into(),
            response: response.into(),
        });
        self
    }

    pub fn contains(mut self, key: impl Into<String>, response: impl Into<String>) -> Self {
        self.rules.push(MockRule {
            matcher: MockMatcher::ContainsSubstring,
            key: key.into(),
            response: response.into(),
        });
        self
    }

    pub fn pattern(mut self, key: impl Into<String>, response: impl Into<String>) -> Self {
        self.rules.push(MockRule {
            matcher: MockMatcher::PatternKey,
            key: key.into(),
            response: response.into(),
        });
        self
    }

    pub fn or_default(mut self, response: impl Into<String>) -> Self {
        self.default = Some(response.into());
        self
    }

    pub fn from_file(path: &Path) -> Result<Self, GatewayError> {
        let raw = std::fs::read_to_string(path).map_err(|e| {
            GatewayError::BadScript(format!("cannot read {}: {e}", path.display()))
        })?;
        let script: MockScript = serde_json::from_str(&raw).map_err(|e| {
            GatewayError::BadScript(format!("{}: {e}", path.display()))
        })?;
        script.validate()?;
        Ok(script)
    }

    /// Compile-check every pattern rule.
    pub fn validate(&self) -> Result<(), GatewayError> {
        for rule in &self.rules {
            if rule.matcher == MockMatcher::PatternKey {
                Regex::new(&rule.key).map_err(|e| {
                    GatewayError::BadScript(format!("bad pattern {:?}: {e}", rule.key))
                })?;
            }
        }
        Ok(())
    }

    pub fn lookup(&self, prompt: &str) -> Option<&str> {
        for rule in &self.rules {
            let hit = match rule.matcher {
                MockMatcher::ExactPrompt => prompt == rule.key,
                MockMatcher::ContainsSubstring => prompt.contains(&rule.key),
                MockMatcher::PatternKey => Regex::new(&rule.key)
                    .map(|re| re.is_match(prompt))
                    .unwrap_or(false),
            };
            if hit {
                return Some(&rule.response);
            }
        }
        self.default.as_deref()
    }
}

pub struct MockBackend {
    script: MockScript,
}

impl MockBackend {
    pub fn new(script: MockScript) -> Self {
        MockBackend { script }
    }
}

impl Backend for MockBackend {
    fn complete(&self, req: &ChatRequest) -> Result<String, GatewayError> {
        match self.script.lookup(&req.user) {
            Some(response) => Ok(response.to_string()),
            None => Err(GatewayError::Unscripted {
                snippet: req.user.chars().take(80).collect(),
            }),
        }
    }

    fn kind(&self) -> BackendKind {
        BackendKind::Mock
    }
}
