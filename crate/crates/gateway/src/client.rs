//! Minimal client for OpenAI-compatible `chat/completions` endpoints.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::EndpointConfig;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Transport(String),
    #[error("endpoint returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatMessage {
    pub role: &'static str,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: "user",
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeParams {
    pub temperature: f64,
    pub top_p: f64,
    pub logprobs: bool,
    pub top_logprobs: Option<u32>,
    pub max_tokens: Option<u32>,
}

impl DecodeParams {
    /// Greedy decoding: temperature 0, top-p 1.
    pub fn greedy() -> Self {
        Self {
            temperature: 0.0,
            top_p: 1.0,
            logprobs: false,
            top_logprobs: None,
            max_tokens: None,
        }
    }

    pub fn sampled(temperature: f64) -> Self {
        Self {
            temperature,
            ..Self::greedy()
        }
    }

    pub fn with_logprobs(mut self, top: Option<u32>) -> Self {
        self.logprobs = true;
        self.top_logprobs = top;
        self
    }

    pub fn with_max_tokens(mut self, max: Option<u32>) -> Self {
        self.max_tokens = max;
        self
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    top_p: f64,
    n: u32,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    logprobs: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    top_logprobs: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_tokens: Option<u32>,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
    #[serde(default)]
    logprobs: Option<ChoiceLogprobs>,
}

#[derive(Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct ChoiceLogprobs {
    #[serde(default)]
    content: Option<Vec<TokenEntry>>,
}

#[derive(Deserialize)]
struct TokenEntry {
    token: String,
    logprob: f64,
    #[serde(default)]
    top_logprobs: Vec<TopEntry>,
}

#[derive(Deserialize)]
struct TopEntry {
    token: String,
    logprob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
    pub top: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    /// Per-token log-probabilities, if the endpoint returned them.
    pub tokens: Option<Vec<TokenLogprob>>,
}

/// Servers occasionally report tiny positive log-probs from rounding.
fn clamp_logprob(lp: f64) -> f64 {
    lp.min(0.0)
}

impl Completion {
    fn from_response(resp: ChatResponse) -> Result<Self, ClientError> {
        let choice = resp
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| ClientError::Malformed("no choices".into()))?;
        let tokens = choice.logprobs.and_then(|l| l.content).map(|entries| {
            entries
                .into_iter()
                .map(|e| TokenLogprob {
                    token: e.token,
                    logprob: clamp_logprob(e.logprob),
                    top: e
                        .top_logprobs
                        .into_iter()
                        .map(|t| (t.token, clamp_logprob(t.logprob)))
                        .collect(),
                })
                .collect()
        });
        Ok(Self {
            text: choice.message.content.unwrap_or_default(),
            tokens,
        })
    }

    pub fn token_logprobs(&self) -> Option<Vec<f64>> {
        self.tokens
            .as_ref()
            .map(|t| t.iter().map(|t| t.logprob).collect())
    }
}

#[derive(Debug, Clone)]
pub struct ChatClient {
    http: reqwest::Client,
    endpoint: String,
    model: String,
    api_key: Option<String>,
}

impl ChatClient {
    pub fn new(cfg: &EndpointConfig) -> Result<Self, ClientError> {
        let http = reqwest::Client::builder()
            .timeout(Duration::from_millis(cfg.timeout_ms))
            .build()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        let base = cfg.url.trim_end_matches('/');
        let endpoint = if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        };
        Ok(Self {
            http,
            endpoint,
            model: cfg.model.clone(),
            api_key: cfg.api_key.clone(),
        })
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub async fn complete(
        &self,
        messages: &[ChatMessage],
        params: DecodeParams,
    ) -> Result<Completion, ClientError> {
        let body = ChatRequest {
            model: &self.model,
            messages,
            temperature: params.temperature,
            top_p: params.top_p,
            n: 1,
            logprobs: params.logprobs,
            top_logprobs: params.top_logprobs,
            max_tokens: params.max_tokens,
        };
        let mut req = self.http.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .await
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.text().await.unwrap_or_default();
            return Err(ClientError::Status {
                status: status.as_u16(),
                body: body.chars().take(200).collect(),
            });
        }
        let parsed: ChatResponse = resp
            .json()
            .await
            .map_err(|e| ClientError::Malformed(e.to_string()))?;
        Completion::from_response(parsed)
    }
}
