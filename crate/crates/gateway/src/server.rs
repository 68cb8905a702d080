use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::json;
use tokio::net::TcpListener;
use tracing::info;

use crate::config::{ConfigError, GatewayConfig};
use crate::service::{Gateway, GatewayError, QueryRequest, RouteResult, ScoreResult};

impl GatewayError {
    pub fn status(&self) -> StatusCode {
        match self {
            Self::BadRequest(_) => StatusCode::BAD_REQUEST,
            Self::WeakEndpointUnavailable(_) | Self::StrongEndpointUnavailable(_) => {
                StatusCode::BAD_GATEWAY
            }
            Self::ScoringFailed(_) => StatusCode::UNPROCESSABLE_ENTITY,
            Self::TraceLog(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for GatewayError {
    fn into_response(self) -> Response {
        let body = json!({"error": {"kind": self.kind(), "message": self.to_string()}});
        (self.status(), Json(body)).into_response()
    }
}

fn body(req: Result<Json<QueryRequest>, JsonRejection>) -> Result<QueryRequest, GatewayError> {
    req.map(|Json(r)| r)
        .map_err(|e| GatewayError::BadRequest(e.body_text()))
}

async fn route(
    State(gw): State<Arc<Gateway>>,
    req: Result<Json<QueryRequest>, JsonRejection>,
) -> Result<Json<RouteResult>, GatewayError> {
    Ok(Json(gw.handle_route(body(req)?).await?))
}

async fn score(
    State(gw): State<Arc<Gateway>>,
    req: Result<Json<QueryRequest>, JsonRejection>,
) -> Result<Json<ScoreResult>, GatewayError> {
    Ok(Json(gw.handle_score(body(req)?).await?))
}

async fn health(State(gw): State<Arc<Gateway>>) -> Json<serde_json::Value> {
    Json(json!({
        "status": "ok",
        "method": gw.method(),
        "threshold": gw.threshold(),
    }))
}

pub fn router(gw: Arc<Gateway>) -> Router {
    Router::new()
        .route("/v1/route", post(route))
        .route("/v1/score", post(score))
        .route("/v1/health", get(health))
        .with_state(gw)
}

/// Serves on an already-bound listener until the future is dropped.
pub async fn serve_on(listener: TcpListener, gw: Arc<Gateway>) -> std::io::Result<()> {
    axum::serve(listener, router(gw)).await
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("listen on {addr}: {source}")]
    Bind {
        addr: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Builds the gateway from `config` and serves on `config.listen` until Ctrl-C.
pub async fn run(config: GatewayConfig) -> Result<(), ServeError> {
    let addr = config.listen.clone();
    let gw = Arc::new(Gateway::new(config)?);
    let listener = TcpListener::bind(&addr)
        .await
        .map_err(|source| ServeError::Bind {
            addr: addr.clone(),
            source,
        })?;
    info!(
        addr = %listener.local_addr()?,
        method = %gw.method(),
        threshold = gw.threshold(),
        "gateway listening"
    );
    axum::serve(listener, router(gw))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
