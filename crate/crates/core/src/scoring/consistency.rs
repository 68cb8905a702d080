//! Degree-matrix consistency over resampled answers.

use std::collections::HashSet;

use super::{ConfidenceScore, ScoreError, UqMethod};
use crate::trace::InferenceTrace;

/// Lowercased whitespace tokens with leading/trailing punctuation stripped.
pub fn tokenize(text: &str) -> HashSet<String> {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| c.is_ascii_punctuation()).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

/// `|A ∩ B| / |A ∪ B|`, with two empty sets counted as identical.
pub fn jaccard_similarity(a: &HashSet<String>, b: &HashSet<String>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JaccardDegree {
    /// `trace(mI - D) / m^2`.
    pub uncertainty: f64,
    /// `sum(W) / m^2`, i.e. `1 - uncertainty`.
    pub confidence: f64,
}

pub fn jaccard_degree<S: AsRef<str>>(samples: &[S]) -> Result<JaccardDegree, ScoreError> {
    let m = samples.len();
    if m < 2 {
        return Err(ScoreError::InvalidArgument(format!(
            "need at least 2 samples, got {m}"
        )));
    }
    let sets: Vec<_> = samples.iter().map(|s| tokenize(s.as_ref())).collect();
    // D_ii is the row sum of W; trace(mI - D) = m^2 - sum(W).
    let mut degree_trace = 0.0;
    for i in 0..m {
        let mut row = 0.0;
        for j in 0..m {
            row += if i == j {
                1.0
            } else {
                jaccard_similarity(&sets[i], &sets[j])
            };
        }
        degree_trace += row;
    }
    let mf = m as f64;
    Ok(JaccardDegree {
        uncertainty: ((mf * mf - degree_trace) / (mf * mf)).clamp(0.0, 1.0),
        confidence: (degree_trace / (mf * mf)).clamp(0.0, 1.0),
    })
}

pub fn score_jaccard_degree(trace: &InferenceTrace) -> Result<ConfidenceScore, ScoreError> {
    let samples = trace
        .samples
        .as_ref()
        .ok_or(ScoreError::MissingField("samples"))?;
    let jd = jaccard_degree(samples)?;
    Ok(ConfidenceScore::new(
        UqMethod::JaccardDegree,
        jd.confidence,
        trace.id.clone(),
    ))
}
