use thiserror::Error;

use crate::labels::LabelError;

/// Errors from the alignment and routing evaluators.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("length mismatch: {left} scores vs {right} labels")]
    LengthMismatch { left: usize, right: usize },
    #[error("labels contain a single class")]
    SingleClassLabels,
    #[error("excluding fraction {0} leaves no queries")]
    EmptyKeptSet(f64),
    #[error("no scores")]
    EmptyScores,
    #[error("no label for trace {0:?}")]
    MissingLabel(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl From<LabelError> for EvalError {
    fn from(e: LabelError) -> Self {
        match e {
            LabelError::MissingLabel(id) => EvalError::MissingLabel(id),
            other => EvalError::InvalidArgument(other.to_string()),
        }
    }
}

/// `floor(fraction * n)`, tolerant of representation error in `fraction`
/// (e.g. `0.29 * 100` evaluates to `28.999999999999996`).
pub(crate) fn count_for_fraction(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64 + 1e-9).floor() as usize).min(n)
}

/// Indices of `scores` in ascending confidence, ties by ascending trace id.
pub(crate) fn ascending_order(scores: &[crate::scoring::ConfidenceScore]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[a]
            .value
            .total_cmp(&scores[b].value)
            .then_with(|| scores[a].trace_id.cmp(&scores[b].trace_id))
    });
    order
}
