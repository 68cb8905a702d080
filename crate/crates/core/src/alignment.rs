//! Uncertainty-correctness alignment: ROC AUC of confidence against
//! correctness, and small-vs-large relative accuracy on the most confident
//! queries.

use serde::Serialize;

use crate::error::{ascending_order, count_for_fraction, EvalError};
use crate::labels::Labels;
use crate::scoring::{BatchScores, ConfidenceScore, UqMethod};

/// Mann-Whitney AUC: the probability that a random correct answer has higher
/// confidence than a random incorrect one, ties counting one half.
///
/// Computed from average ranks in O(n log n). The rank sum is kept in doubled
/// integer units so the result is bit-identical to pairwise counting.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            left: scores.len(),
            right: labels.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(EvalError::InvalidArgument("NaN score".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count() as u128;
    let neg = labels.len() as u128 - pos;
    if pos == 0 || neg == 0 {
        return Err(EvalError::SingleClassLabels);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Tie group at sorted positions [i, j) shares rank (i + 1 + j) / 2.
    let mut doubled_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let doubled_rank = (i + 1 + j) as u128;
        let pos_in_group = order[i..j].iter().filter(|&&k| labels[k]).count() as u128;
        doubled_rank_sum += doubled_rank * pos_in_group;
        i = j;
    }
    // 2U = 2 * R_pos - pos * (pos + 1)
    let doubled_u = doubled_rank_sum - pos * (pos + 1);
    Ok(doubled_u as f64 / (2 * pos * neg) as f64)
}

/// AUC over scored traces, looking labels up by trace id.
pub fn roc_auc_scores(scores: &[ConfidenceScore], labels: &Labels) -> Result<f64, EvalError> {
    let values: Vec<f64> = scores.iter().map(|s| s.value).collect();
    let flags = scores
        .iter()
        .map(|s| labels.get(&s.trace_id))
        .collect::<Result<Vec<_>, _>>()?;
    roc_auc(&values, &flags)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignmentReport {
    pub method: UqMethod,
    pub auc: f64,
    pub n_used: usize,
    pub n_discarded: usize,
}

/// AUC row for one method. Discarded records are excluded and counted.
pub fn alignment_report(
    method: UqMethod,
    batch: &BatchScores,
    labels: &Labels,
) -> Result<AlignmentReport, EvalError> {
    Ok(AlignmentReport {
        method,
        auc: roc_auc_scores(&batch.scores, labels)?,
        n_used: batch.scores.len(),
        n_discarded: batch.discarded.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelAccPoint {
    pub excluded_fraction: f64,
    pub slm_accuracy: f64,
    pub llm_accuracy: f64,
    /// `slm_accuracy / llm_accuracy`; `None` when the large model scores zero.
    pub relative_accuracy: Option<f64>,
    pub n_kept: usize,
}

/// For each fraction `f`, drops the `floor(f * n)` least confident queries
/// (ties by ascending trace id) and compares both models on what remains.
pub fn relative_accuracy_curve(
    conf: &[ConfidenceScore],
    slm_correct: &Labels,
    llm_correct: &Labels,
    grid: &[f64],
) -> Result<Vec<RelAccPoint>, EvalError> {
    let n = conf.len();
    if n == 0 {
        return Err(EvalError::EmptyScores);
    }
    let order = ascending_order(conf);
    let mut out = Vec::with_capacity(grid.len());
    for &f in grid {
        if !(0.0..1.0).contains(&f) {
            return Err(EvalError::InvalidArgument(format!(
                "excluded fraction {f} outside [0, 1)"
            )));
        }
        let drop = count_for_fraction(f, n);
        if drop == n {
            return Err(EvalError::EmptyKeptSet(f));
        }
        let kept = || order[drop..].iter().map(|&i| conf[i].trace_id.as_str());
        let slm = slm_correct.accuracy_over(kept())?;
        let llm = llm_correct.accuracy_over(kept())?;
        out.push(RelAccPoint {
            excluded_fraction: f,
            slm_accuracy: slm,
            llm_accuracy: llm,
            relative_accuracy: (llm > 0.0).then(|| slm / llm),
            n_kept: n - drop,
        });
    }
    Ok(out)
}
