use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::task::JoinSet;
use tracing::{debug, warn};
use uqroute_core::routing::should_route;
use uqroute_core::scoring::{score_trace, ScoreError};
use uqroute_core::trace::{header_line, to_line};
use uqroute_core::{AnswerKind, InferenceTrace, TraceHeader, UqMethod};

use crate::client::{ChatClient, ChatMessage, ClientError, Completion, DecodeParams};
use crate::config::{render, ConfigError, FallbackPolicy, GatewayConfig, Prompts};

/// Dataset tag on every trace the gateway logs.
pub const GATEWAY_DATASET: &str = "gateway";

/// Alternatives requested for the p(True) follow-up token.
const P_TRUE_TOP_LOGPROBS: u32 = 20;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("weak endpoint unavailable: {0}")]
    WeakEndpointUnavailable(String),
    #[error("strong endpoint unavailable: {0}")]
    StrongEndpointUnavailable(String),
    #[error("scoring failed: {0}")]
    ScoringFailed(String),
    #[error("trace log: {0}")]
    TraceLog(String),
}

impl GatewayError {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::BadRequest(_) => "BadRequest",
            Self::WeakEndpointUnavailable(_) => "WeakEndpointUnavailable",
            Self::StrongEndpointUnavailable(_) => "StrongEndpointUnavailable",
            Self::ScoringFailed(_) => "ScoringFailed",
            Self::TraceLog(_) => "TraceLog",
        }
    }
}

fn answer_kind_default() -> AnswerKind {
    AnswerKind::FreeForm
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRequest {
    pub query: String,
    #[serde(default = "answer_kind_default")]
    pub answer_kind: AnswerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<Vec<String>>,
}

impl QueryRequest {
    pub fn new(query: impl Into<String>, answer_kind: AnswerKind) -> Self {
        Self {
            query: query.into(),
            answer_kind,
            options: None,
        }
    }

    /// The question as shown to the models.
    pub fn question(&self) -> String {
        let mut q = self.query.clone();
        match (self.answer_kind, &self.options) {
            (AnswerKind::MultipleChoice, Some(opts)) if !opts.is_empty() => {
                q.push_str("\n\nOptions:");
                for (i, o) in opts.iter().enumerate() {
                    let letter = char::from(b'A' + (i % 26) as u8);
                    q.push_str(&format!("\n{letter}. {o}"));
                }
                q.push_str("\nAnswer with the letter of the correct option.");
            }
            (AnswerKind::TrueFalse, _) => q.push_str("\n\nAnswer True or False."),
            _ => {}
        }
        q
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Slm,
    Llm,
    SlmFallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Latency {
    /// All weak-endpoint calls for the request, including follow-ups.
    pub weak_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strong_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteResult {
    pub answer: String,
    pub source: Source,
    pub confidence: f64,
    pub method: UqMethod,
    pub threshold: f64,
    pub latency_ms: Latency,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
    pub trace: InferenceTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResult {
    pub confidence: f64,
    pub method: UqMethod,
    pub threshold: f64,
    /// Whether `/v1/route` would escalate this answer.
    pub would_route: bool,
    pub latency_ms: Latency,
    pub trace: InferenceTrace,
}

/// Append-only JSONL trace log with a single serialized writer.
struct TraceLog {
    out: Mutex<BufWriter<File>>,
}

impl TraceLog {
    fn open(path: &Path, header: &TraceHeader) -> Result<Self, ConfigError> {
        let io_err = |source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        };
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_err)?;
        let fresh = file.metadata().map_err(io_err)?.len() == 0;
        let mut out = BufWriter::new(file);
        if fresh {
            writeln!(out, "{}", header_line(header)).map_err(io_err)?;
            out.flush().map_err(io_err)?;
        }
        Ok(Self {
            out: Mutex::new(out),
        })
    }

    fn append(&self, trace: &InferenceTrace) -> std::io::Result<()> {
        let line = to_line(trace);
        let mut out = self.out.lock().unwrap_or_else(|e| e.into_inner());
        writeln!(out, "{line}")?;
        out.flush()
    }
}

pub struct Gateway {
    config: GatewayConfig,
    threshold: f64,
    prompts: Prompts,
    weak: ChatClient,
    strong: ChatClient,
    log: Option<TraceLog>,
    counter: AtomicU64,
}

fn elapsed_ms(start: Instant) -> u64 {
    start.elapsed().as_millis() as u64
}

impl Gateway {
    /// Validates the config, resolves the threshold and opens the trace log.
    pub fn new(config: GatewayConfig) -> Result<Self, ConfigError> {
        let threshold = config.resolve_threshold()?;
        let prompts = Prompts::load(&config.prompts)?;
        let client = |ep| ChatClient::new(ep).map_err(|e| ConfigError::Invalid(e.to_string()));
        let weak = client(&config.weak)?;
        let strong = client(&config.strong)?;
        let log = match &config.trace_log {
            Some(path) => {
                let header = TraceHeader {
                    model: Some(config.weak.model.clone()),
                    samples_per_query: (config.method == UqMethod::JaccardDegree)
                        .then_some(config.sampling.m),
                    ..TraceHeader::default()
                };
                Some(TraceLog::open(path, &header)?)
            }
            None => None,
        };
        Ok(Self {
            config,
            threshold,
            prompts,
            weak,
            strong,
            log,
            counter: AtomicU64::new(0),
        })
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn method(&self) -> UqMethod {
        self.config.method
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    fn next_id(&self) -> String {
        let ms = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis())
            .unwrap_or(0);
        let n = self.counter.fetch_add(1, Ordering::Relaxed);
        format!("gw-{ms}-{n}")
    }

    async fn weak_call(
        &self,
        prompt: String,
        params: DecodeParams,
    ) -> Result<Completion, GatewayError> {
        self.weak
            .complete(&[ChatMessage::user(prompt)], params)
            .await
            .map_err(|e| GatewayError::WeakEndpointUnavailable(e.to_string()))
    }

    /// Calls the weak endpoint for the answer plus whatever evidence the
    /// configured method needs, and assembles the trace.
    async fn gather(&self, req: &QueryRequest) -> Result<InferenceTrace, GatewayError> {
        if req.query.trim().is_empty() {
            return Err(GatewayError::BadRequest("empty query".into()));
        }
        let method = self.config.method;
        let question = req.question();
        let max_tokens = self.config.sampling.max_tokens;

        let primary_prompt = if method == UqMethod::Verbalization1s {
            render(&self.prompts.verbalization_1s, &question, "")
        } else {
            question.clone()
        };
        let primary = self
            .weak_call(
                primary_prompt.clone(),
                DecodeParams::greedy()
                    .with_logprobs(None)
                    .with_max_tokens(max_tokens),
            )
            .await?;

        let mut trace = InferenceTrace::new(self.next_id(), req.answer_kind);
        trace.dataset = GATEWAY_DATASET.to_string();
        trace.prompt = primary_prompt;
        trace.response = primary.text.clone();
        if let Some(tokens) = &primary.tokens {
            trace.token_logprobs = tokens.iter().map(|t| t.logprob).collect();
            if req.answer_kind != AnswerKind::FreeForm {
                trace.chosen_option_logprob = tokens
                    .iter()
                    .find(|t| !t.token.trim().is_empty())
                    .map(|t| t.logprob);
            }
        }

        match method {
            UqMethod::PTrue => {
                let prompt = render(&self.prompts.p_true, &question, &primary.text);
                let c = self
                    .weak_call(
                        prompt,
                        DecodeParams::greedy()
                            .with_logprobs(Some(P_TRUE_TOP_LOGPROBS))
                            .with_max_tokens(Some(1)),
                    )
                    .await?;
                trace.true_false_logprobs = true_false_logprobs(&c);
            }
            UqMethod::Verbalization1s => {
                trace.verbal_confidence_text = Some(primary.text.clone());
            }
            UqMethod::Verbalization2s => {
                let prompt = render(&self.prompts.verbalization_2s, &question, &primary.text);
                let c = self
                    .weak_call(prompt, DecodeParams::greedy().with_max_tokens(max_tokens))
                    .await?;
                trace.verbal_confidence_text = Some(c.text);
            }
            UqMethod::JaccardDegree => {
                trace.samples = Some(self.resample(&question).await?);
            }
            _ => {}
        }
        Ok(trace)
    }

    /// `m` independent single-completion requests at the sampling temperature.
    async fn resample(&self, question: &str) -> Result<Vec<String>, GatewayError> {
        let m = self.config.sampling.m;
        let params = DecodeParams::sampled(self.config.sampling.temperature)
            .with_max_tokens(self.config.sampling.max_tokens);
        let mut tasks = JoinSet::new();
        for i in 0..m {
            let client = self.weak.clone();
            let msgs = [ChatMessage::user(question)];
            tasks.spawn(async move { (i, client.complete(&msgs, params).await) });
        }
        let mut out = vec![String::new(); m];
        while let Some(joined) = tasks.join_next().await {
            let (i, res) =
                joined.map_err(|e| GatewayError::WeakEndpointUnavailable(e.to_string()))?;
            out[i] = res
                .map_err(|e: ClientError| GatewayError::WeakEndpointUnavailable(e.to_string()))?
                .text;
        }
        Ok(out)
    }

    fn log(&self, trace: &InferenceTrace) -> Result<(), GatewayError> {
        if let Some(log) = &self.log {
            log.append(trace)
                .map_err(|e| GatewayError::TraceLog(e.to_string()))?;
        }
        Ok(())
    }

    fn score(&self, trace: &InferenceTrace) -> Result<f64, GatewayError> {
        score_trace(trace, self.config.method, None)
            .map(|s| s.value)
            .map_err(|e| match e {
                ScoreError::MissingField(f) => GatewayError::ScoringFailed(format!("{f} absent")),
                ScoreError::NonCompliant(_) => {
                    GatewayError::ScoringFailed("no parseable verbalized confidence".into())
                }
                other => GatewayError::ScoringFailed(other.to_string()),
            })
    }

    /// Scores the weak answer without contacting the strong endpoint.
    pub async fn handle_score(&self, req: QueryRequest) -> Result<ScoreResult, GatewayError> {
        let start = Instant::now();
        let trace = self.gather(&req).await?;
        let weak_ms = elapsed_ms(start);
        self.log(&trace)?;
        let confidence = self.score(&trace)?;
        Ok(ScoreResult {
            confidence,
            method: self.config.method,
            threshold: self.threshold,
            would_route: should_route(confidence, self.threshold),
            latency_ms: Latency {
                weak_ms,
                strong_ms: None,
            },
            trace,
        })
    }

    /// Answers with the weak model unless its confidence is below the
    /// threshold, in which case the strong model answers.
    pub async fn handle_route(&self, req: QueryRequest) -> Result<RouteResult, GatewayError> {
        let start = Instant::now();
        let trace = self.gather(&req).await?;
        let weak_ms = elapsed_ms(start);
        self.log(&trace)?;
        let confidence = self.score(&trace)?;
        let mut result = RouteResult {
            answer: trace.response.clone(),
            source: Source::Slm,
            confidence,
            method: self.config.method,
            threshold: self.threshold,
            latency_ms: Latency {
                weak_ms,
                strong_ms: None,
            },
            warning: None,
            trace,
        };
        if !should_route(confidence, self.threshold) {
            debug!(id = %result.trace.id, confidence, "served locally");
            return Ok(result);
        }
        let start = Instant::now();
        let strong = self
            .strong
            .complete(
                &[ChatMessage::user(req.question())],
                DecodeParams::greedy().with_max_tokens(self.config.sampling.max_tokens),
            )
            .await;
        result.latency_ms.strong_ms = Some(elapsed_ms(start));
        match strong {
            Ok(c) => {
                debug!(id = %result.trace.id, confidence, "escalated");
                result.answer = c.text;
                result.source = Source::Llm;
                Ok(result)
            }
            Err(e) => match self.config.fallback {
                FallbackPolicy::ServeWeak => {
                    warn!(id = %result.trace.id, error = %e, "strong endpoint failed, serving weak answer");
                    result.source = Source::SlmFallback;
                    result.warning = Some(format!("strong endpoint unavailable: {e}"));
                    Ok(result)
                }
                FallbackPolicy::Error => Err(GatewayError::StrongEndpointUnavailable(e.to_string())),
            },
        }
    }
}

/// `(ln p(True), ln p(False))` from the first generated token and its
/// alternatives. When only one of the two words is among the alternatives,
/// the other is bounded by the lowest log-prob observed.
pub fn true_false_logprobs(c: &Completion) -> Option<(f64, f64)> {
    let first = c.tokens.as_ref()?.iter().find(|t| !t.token.trim().is_empty())?;
    let mut candidates: Vec<(&str, f64)> = first.top.iter().map(|(t, l)| (t.as_str(), *l)).collect();
    candidates.push((first.token.as_str(), first.logprob));
    let best = |word: &str| {
        candidates
            .iter()
            .filter(|(t, _)| t.trim().eq_ignore_ascii_case(word))
            .map(|&(_, l)| l)
            .reduce(f64::max)
    };
    let floor = candidates.iter().map(|&(_, l)| l).fold(0.0, f64::min);
    match (best("true"), best("false")) {
        (Some(t), Some(f)) => Some((t, f)),
        (Some(t), None) => Some((t, floor)),
        (None, Some(f)) => Some((floor, f)),
        (None, None) => None,
    }
}
