//! Chat-completions HTTP backend.

use std::time::Duration;

use serde::Serialize;
use serde_json::Value;

use super::{Backend, CompletionRequest, GatewayError};
use crate::prompt::Role;

pub const API_KEY_ENV: &str = "MSR_API_KEY";
pub const BASE_URL_ENV: &str = "MSR_BASE_URL";

#[derive(Serialize)]
struct Message<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<Message<'a>>,
    temperature: f64,
    max_tokens: u32,
}

#[derive(Debug, Clone)]
pub struct LiveBackend {
    base_url: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl LiveBackend {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        Ok(Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key,
            client,
        })
    }

    /// Reads the bearer token from `MSR_API_KEY`.
    pub fn from_env(base_url: impl Into<String>, timeout: Duration) -> Result<Self, GatewayError> {
        let key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        Self::new(base_url, key, timeout)
    }

    pub fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url)
    }
}

/// Request body for a transcript: system prompt, then the faux turns.
pub fn request_body(request: &CompletionRequest<'_>) -> Value {
    let tr = request.transcript;
    let mut messages = Vec::with_capacity(tr.turns.len() + 1);
    messages.push(Message {
        role: Role::System.as_str(),
        content: &tr.system_prompt,
    });
    messages.extend(tr.turns.iter().map(|t| Message {
        role: t.role.as_str(),
        content: &t.text,
    }));
    serde_json::to_value(ChatRequest {
        model: &request.params.model,
        messages,
        temperature: request.params.temperature,
        max_tokens: request.max_tokens,
    })
    .expect("request body serializes")
}

pub fn parse_completion(body: &str) -> Result<String, GatewayError> {
    let value: Value = serde_json::from_str(body).map_err(|e| GatewayError::MalformedResponse(e.to_string()))?;
    value
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| GatewayError::MalformedResponse("missing choices[0].message.content".into()))
}

impl Backend for LiveBackend {
    fn name(&self) -> String {
        "live".into()
    }

    fn uses_seed(&self) -> bool {
        false
    }

    fn is_live(&self) -> bool {
        true
    }

    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, GatewayError> {
        let key = self
            .api_key
            .as_deref()
            .ok_or_else(|| GatewayError::Unavailable(format!("{API_KEY_ENV} is not set")))?;
        let response = self
            .client
            .post(self.endpoint())
            .bearer_auth(key)
            .json(&request_body(request))
            .send()
            .map_err(|e| {
                if e.is_timeout() {
                    GatewayError::Timeout
                } else {
                    GatewayError::Transport(e.to_string())
                }
            })?;
        let status = response.status().as_u16();
        let body = response.text().map_err(|e| GatewayError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(GatewayError::Status { code: status, body });
        }
        parse_completion(&body)
    }
}
