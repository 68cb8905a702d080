//! Scripted OpenAI-compatible endpoint for tests and local demos.
//!
//! Every POST is recorded and answered by a user-supplied responder.

use std::sync::{Arc, Mutex};

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::{Json, Router};
use serde_json::{json, Value};
use tokio::net::TcpListener;
use tokio::task::JoinHandle;

pub enum StubReply {
    Json(Value),
    Status(u16),
}

type Responder = dyn Fn(&Value) -> StubReply + Send + Sync;

#[derive(Clone)]
struct StubState {
    responder: Arc<Responder>,
    requests: Arc<Mutex<Vec<Value>>>,
}

pub struct StubEndpoint {
    /// Base URL to put in an endpoint config (ends in `/v1`).
    pub url: String,
    requests: Arc<Mutex<Vec<Value>>>,
    task: JoinHandle<()>,
}

async fn handle(State(state): State<StubState>, Json(body): Json<Value>) -> Response {
    let reply = (state.responder)(&body);
    state.requests.lock().unwrap().push(body);
    match reply {
        StubReply::Json(v) => Json(v).into_response(),
        StubReply::Status(code) => StatusCode::from_u16(code)
            .unwrap_or(StatusCode::INTERNAL_SERVER_ERROR)
            .into_response(),
    }
}

impl StubEndpoint {
    pub async fn spawn(
        responder: impl Fn(&Value) -> StubReply + Send + Sync + 'static,
    ) -> std::io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0").await?;
        let addr = listener.local_addr()?;
        let requests = Arc::new(Mutex::new(Vec::new()));
        let state = StubState {
            responder: Arc::new(responder),
            requests: requests.clone(),
        };
        let app = Router::new().fallback(handle).with_state(state);
        let task = tokio::spawn(async move {
            let _ = axum::serve(listener, app).await;
        });
        Ok(Self {
            url: format!("http://{addr}/v1"),
            requests,
            task,
        })
    }

    /// Always answers with the same body.
    pub async fn fixed(body: Value) -> std::io::Result<Self> {
        Self::spawn(move |_| StubReply::Json(body.clone())).await
    }

    pub fn requests(&self) -> Vec<Value> {
        self.requests.lock().unwrap().clone()
    }

    pub fn call_count(&self) -> usize {
        self.requests.lock().unwrap().len()
    }
}

impl Drop for StubEndpoint {
    fn drop(&mut self) {
        self.task.abort();
    }
}

/// A URL on which nothing is listening.
pub async fn unreachable_url() -> std::io::Result<String> {
    let listener = TcpListener::bind("127.0.0.1:0").await?;
    let addr = listener.local_addr()?;
    drop(listener);
    Ok(format!("http://{addr}/v1"))
}

/// A chat-completions body; `tokens` adds a logprobs block.
pub fn completion(text: &str, tokens: Option<&[(&str, f64)]>) -> Value {
    completion_with_top(text, tokens, &[])
}

/// Like [`completion`], with `top` as the first token's alternatives.
pub fn completion_with_top(text: &str, tokens: Option<&[(&str, f64)]>, top: &[(&str, f64)]) -> Value {
    let mut choice = json!({
        "index": 0,
        "message": {"role": "assistant", "content": text},
        "finish_reason": "stop",
    });
    if let Some(tokens) = tokens {
        let content: Vec<Value> = tokens
            .iter()
            .enumerate()
            .map(|(i, (t, lp))| {
                let alts: Vec<Value> = if i == 0 {
                    top.iter().map(|(t, l)| json!({"token": t, "logprob": l})).collect()
                } else {
                    Vec::new()
                };
                json!({"token": t, "logprob": lp, "top_logprobs": alts})
            })
            .collect();
        choice["logprobs"] = json!({"content": content});
    }
    json!({"object": "chat.completion", "choices": [choice]})
}
