//! Live routing gateway. Each query goes to a weak model behind an
//! OpenAI-compatible endpoint; the answer is scored for confidence and, below
//! the configured threshold, the query is escalated to a strong model.

pub mod client;
pub mod config;
pub mod server;
mod service;
pub mod stub;

pub use config::{EndpointConfig, FallbackPolicy, GatewayConfig, SamplingConfig};
pub use server::{router, run, serve_on, ServeError};
pub use service::{
    true_false_logprobs, Gateway, GatewayError, Latency, QueryRequest, RouteResult, ScoreResult,
    Source, GATEWAY_DATASET,
};
