//! Chat-completions HTTP backend.
//!
//! Speaks the common `/chat/completions` JSON shape: a `messages` array in,
//! `choices[0].message.content` out. Endpoint and bearer token come from the
//! model config or the `FASTSLOW_ENDPOINT` / `FASTSLOW_API_KEY` environment.

use std::time::Duration;

use serde_json::{json, Value};

use super::{Backend, BackendKind, ChatRequest, GatewayError, API_KEY_ENV, ENDPOINT_ENV};

const REQUEST_TIMEOUT: Duration = Duration::from_secs(120);

pub struct HttpBackend {
    endpoint: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn from_config(config: &super::ModelConfig) -> Result<Self, GatewayError> {
        let endpoint = config
            .endpoint
            .clone()
            .or_else(|| std::env::var(ENDPOINT_ENV).ok())
            .ok_or(GatewayError::MissingEndpoint)?;
        Ok(HttpBackend {
            endpoint,
            api_key: std::env::var(API_KEY_ENV).ok(),
            agent: ureq::AgentBuilder::new().timeout(REQUEST_TIMEOUT).build(),
        })
    }

    /// Endpoint pinned directly; used by tests against a local server.
    pub fn with_endpoint(endpoint: impl Into<String>) -> Self {
        HttpBackend {
            endpoint: endpoint.into(),
            api_key: std::env::var(API_KEY_ENV).ok(),
            agent: ureq::AgentBuilder::new().timeout(REQUEST_TIMEOUT).build(),
        }
    }

    pub fn request_body(req: &ChatRequest) -> Value {
        let mut messages = Vec::new();
        if let Some(system) = &req.system {
            messages.push(json!({ "role": "system", "content": system }));
        }
        messages.push(json!({ "role": "user", "content": req.user }));
        let mut body = json!({
            "model": req.config.model_name,
            "messages": messages,
            "temperature": req.config.temperature,
            "max_tokens": req.config.max_tokens,
        });
        if let Some(seed) = req.config.request_seed {
            body["seed"] = json!(seed);
        }
        body
    }

    fn parse_response(value: Value) -> Result<String, GatewayError> {
        value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| {
                GatewayError::MalformedResponse(format!(
                    "missing choices[0].message.content in {}",
                    truncate(&value.to_string(), 200)
                ))
            })
    }
}

impl Backend for HttpBackend {
    fn complete(&self, req: &ChatRequest) -> Result<String, GatewayError> {
        let mut call = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            call = call.set("Authorization", &format!("Bearer {key}"));
        }
        match call.send_json(Self::request_body(req)) {
            Ok(resp) => {
                let value: Value = resp.into_json().map_err(|e| {
                    GatewayError::MalformedResponse(format!("response is not JSON: {e}"))
                })?;
                Self::parse_response(value)
            }
            Err(ureq::Error::Status(status, resp)) => {
                let detail = resp
                    .into_string()
                    .map(|s| truncate(&s, 200))
                    .unwrap_or_else(|_| "<unreadable body>".to_string());
                Err(GatewayError::Http { status, detail })
            }
            Err(ureq::Error::Transport(t)) => {
                let msg = t.to_string();
                if msg.contains("timed out") || msg.contains("timeout") {
                    Err(GatewayError::Timeout(msg))
                } else {
                    Err(GatewayError::Transport(msg))
                }
            }
        }
    }

    fn kind(&self) -> BackendKind {
        BackendKind::HttpChat
    }
}

fn truncate(s: &str, max_chars: usize) -> String {
    if s.chars().count() <= max_chars {
        s.to_string()
    } else {
        let cut: String = s.chars().take(max_chars).collect();
        format!("{cut}…")
    }
}
