//! Uncertainty scorers. Every scorer maps one trace to a confidence in
//! `[0, 1]`, higher meaning more certain.

mod consistency;
mod logprob;
mod verbal;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::probe::{self, ProbeError, ProbeModel};
use crate::trace::{InferenceTrace, TraceSet};

pub use consistency::{
    jaccard_degree, jaccard_similarity, score_jaccard_degree, tokenize, JaccardDegree,
};
pub use logprob::{
    score_avg_token_prob, score_p_true, score_perplexity, true_probability, LOGPROB_FLOOR,
};
pub use verbal::{parse_verbalized, parse_verbalized_text, VerbalVariant};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoreError {
    #[error("missing field {0}")]
    MissingField(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("trace {0:?} did not state a parseable confidence")]
    NonCompliant(String),
    #[error("hidden state has dim {got}, probe expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

impl From<ProbeError> for ScoreError {
    fn from(e: ProbeError) -> Self {
        match e {
            ProbeError::MissingField(f) => ScoreError::MissingField(f),
            ProbeError::DimensionMismatch { expected, got } => {
                ScoreError::DimensionMismatch { expected, got }
            }
            other => ScoreError::InvalidArgument(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Access {
    WhiteBox,
    BlackBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UqMethod {
    AvgTokenProb,
    Perplexity,
    PTrue,
    JaccardDegree,
    #[serde(rename = "verbalization_1s")]
    Verbalization1s,
    #[serde(rename = "verbalization_2s")]
    Verbalization2s,
    TrainedProbe,
    OodProbe,
}

impl UqMethod {
    pub const ALL: [UqMethod; 8] = [
        UqMethod::AvgTokenProb,
        UqMethod::Perplexity,
        UqMethod::PTrue,
        UqMethod::JaccardDegree,
        UqMethod::Verbalization1s,
        UqMethod::Verbalization2s,
        UqMethod::TrainedProbe,
        UqMethod::OodProbe,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            UqMethod::AvgTokenProb => "avg_token_prob",
            UqMethod::Perplexity => "perplexity",
            UqMethod::PTrue => "p_true",
            UqMethod::JaccardDegree => "jaccard_degree",
            UqMethod::Verbalization1s => "verbalization_1s",
            UqMethod::Verbalization2s => "verbalization_2s",
            UqMethod::TrainedProbe => "trained_probe",
            UqMethod::OodProbe => "ood_probe",
        }
    }

    /// Where the evidence comes from.
    pub fn category(self) -> &'static str {
        match self {
            UqMethod::AvgTokenProb | UqMethod::Perplexity | UqMethod::PTrue => {
                "token/sequence probabilities"
            }
            UqMethod::JaccardDegree => "output consistency",
            UqMethod::Verbalization1s | UqMethod::Verbalization2s => "verbalized uncertainty",
            UqMethod::TrainedProbe | UqMethod::OodProbe => "uncertainty probe",
        }
    }

    pub fn access(self) -> Access {
        match self {
            UqMethod::JaccardDegree | UqMethod::Verbalization1s | UqMethod::Verbalization2s => {
                Access::BlackBox
            }
            _ => Access::WhiteBox,
        }
    }

    pub fn requires_training(self) -> bool {
        self.needs_probe()
    }

    pub fn needs_probe(self) -> bool {
        matches!(self, UqMethod::TrainedProbe | UqMethod::OodProbe)
    }

    /// Trace fields the scorer reads. `avg_token_prob` reads
    /// `chosen_option_logprob` instead for multiple-choice and true/false answers.
    pub fn required_fields(self) -> &'static [&'static str] {
        match self {
            UqMethod::AvgTokenProb => &["token_logprobs|chosen_option_logprob"],
            UqMethod::Perplexity => &["token_logprobs"],
            UqMethod::PTrue => &["true_false_logprobs"],
            UqMethod::JaccardDegree => &["samples"],
            UqMethod::Verbalization1s | UqMethod::Verbalization2s => &["verbal_confidence_text"],
            UqMethod::TrainedProbe | UqMethod::OodProbe => &["hidden_state"],
        }
    }
}

impl fmt::Display for UqMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for UqMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        UqMethod::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<_> = UqMethod::ALL.iter().map(|m| m.as_str()).collect();
                format!("unknown method {s:?}; expected one of {}", names.join(", "))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceScore {
    pub method: UqMethod,
    pub value: f64,
    pub trace_id: String,
}

impl ConfidenceScore {
    pub fn new(method: UqMethod, value: f64, trace_id: impl Into<String>) -> Self {
        debug_assert!(value.is_finite() && (0.0..=1.0).contains(&value));
        Self {
            method,
            value,
            trace_id: trace_id.into(),
        }
    }
}

/// Scores one trace. `probe` is only consulted by the probe methods.
pub fn score_trace(
    trace: &InferenceTrace,
    method: UqMethod,
    probe: Option<&ProbeModel>,
) -> Result<ConfidenceScore, ScoreError> {
    let mut score = match method {
        UqMethod::AvgTokenProb => score_avg_token_prob(trace)?,
        UqMethod::Perplexity => score_perplexity(trace)?,
        UqMethod::PTrue => score_p_true(trace)?,
        UqMethod::JaccardDegree => score_jaccard_degree(trace)?,
        UqMethod::Verbalization1s => parse_verbalized(trace, VerbalVariant::OneStep)?,
        UqMethod::Verbalization2s => parse_verbalized(trace, VerbalVariant::TwoStep)?,
        UqMethod::TrainedProbe | UqMethod::OodProbe => {
            let model = probe.ok_or_else(|| {
                ScoreError::InvalidArgument(format!("method {method} requires a probe model"))
            })?;
            probe::probe_confidence(model, trace)?
        }
    };
    score.method = method;
    Ok(score)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discarded {
    pub trace_id: String,
    pub reason: ScoreError,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BatchScores {
    pub scores: Vec<ConfidenceScore>,
    pub discarded: Vec<Discarded>,
}

impl BatchScores {
    pub fn discarded_ids(&self) -> Vec<&str> {
        self.discarded.iter().map(|d| d.trace_id.as_str()).collect()
    }
}

/// Scores every trace. Records the scorer cannot handle (missing evidence,
/// non-compliant verbal answers) are discarded rather than failing the batch.
/// Output order follows input order regardless of internal parallelism.
pub fn score_batch(
    traces: &TraceSet,
    method: UqMethod,
    probe: Option<&ProbeModel>,
) -> Result<BatchScores, ScoreError> {
    match (method.needs_probe(), probe.is_some()) {
        (true, false) => {
            return Err(ScoreError::InvalidArgument(format!(
                "method {method} requires a probe model"
            )))
        }
        (false, true) => {
            return Err(ScoreError::InvalidArgument(format!(
                "method {method} does not take a probe model"
            )))
        }
        _ => {}
    }
    let results: Vec<_> = traces
        .records
        .par_iter()
        .map(|t| score_trace(t, method, probe))
        .collect();
    let mut out = BatchScores::default();
    for (t, r) in traces.records.iter().zip(results) {
        match r {
            Ok(s) => out.scores.push(s),
            Err(reason) => out.discarded.push(Discarded {
                trace_id: t.id.clone(),
                reason,
            }),
        }
    }
    Ok(out)
}
