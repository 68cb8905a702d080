//! Confidence-gated routing between a small and a large model.
//!
//! Queries whose confidence falls below a threshold are sent to the large
//! model. Curves are built by rank quantile, so methods are compared at equal
//! routed fractions regardless of their score scales.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::error::{ascending_order, count_for_fraction, EvalError};
use crate::labels::Labels;
use crate::scoring::ConfidenceScore;

/// The single routing comparator: escalate iff confidence is strictly below
/// the threshold.
#[inline]
pub fn should_route(confidence: f64, threshold: f64) -> bool {
    confidence < threshold
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoutingPlan {
    pub threshold: f64,
    pub target_ratio: f64,
    pub achieved_ratio: f64,
    pub routed_ids: BTreeSet<String>,
    pub served_ids: BTreeSet<String>,
}

impl RoutingPlan {
    pub fn len(&self) -> usize {
        self.routed_ids.len() + self.served_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_routed(&self, id: &str) -> bool {
        self.routed_ids.contains(id)
    }
}

/// Per-call price of an escalation. Routed fraction is the cost proxy; the
/// weight only rescales it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostModel {
    pub strong_call_weight: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            strong_call_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub ratio: f64,
    pub achieved_ratio: f64,
    pub overall_accuracy: f64,
    pub cost: f64,
}

/// `0, 1/steps, ..., 1`.
pub fn uniform_grid(steps: usize) -> Vec<f64> {
    let steps = steps.max(1);
    (0..=steps).map(|i| i as f64 / steps as f64).collect()
}

/// The 0.05-step grid used for routing sweeps.
pub fn default_sweep_grid() -> Vec<f64> {
    uniform_grid(20)
}

fn check_ratio(r: f64) -> Result<(), EvalError> {
    if (0.0..=1.0).contains(&r) {
        Ok(())
    } else {
        Err(EvalError::InvalidArgument(format!(
            "routing ratio {r} outside [0, 1]"
        )))
    }
}

/// Scores pre-sorted for repeated planning at several ratios.
pub struct RankedScores<'a> {
    scores: &'a [ConfidenceScore],
    order: Vec<usize>,
}

impl<'a> RankedScores<'a> {
    pub fn new(scores: &'a [ConfidenceScore]) -> Result<Self, EvalError> {
        if scores.is_empty() {
            return Err(EvalError::EmptyScores);
        }
        if scores.iter().any(|s| s.value.is_nan()) {
            return Err(EvalError::InvalidArgument("NaN confidence".into()));
        }
        Ok(Self {
            scores,
            order: ascending_order(scores),
        })
    }

    /// Routes the `floor(r * n)` least confident queries (ties by ascending id).
    pub fn plan(&self, target_ratio: f64) -> Result<RoutingPlan, EvalError> {
        check_ratio(target_ratio)?;
        let n = self.scores.len();
        let k = count_for_fraction(target_ratio, n);
        let threshold = if k < n {
            self.scores[self.order[k]].value
        } else {
            self.scores[self.order[n - 1]].value.next_up()
        };
        let ids = |range: &[usize]| -> BTreeSet<String> {
            range
                .iter()
                .map(|&i| self.scores[i].trace_id.clone())
                .collect()
        };
        Ok(RoutingPlan {
            threshold,
            target_ratio,
            achieved_ratio: k as f64 / n as f64,
            routed_ids: ids(&self.order[..k]),
            served_ids: ids(&self.order[k..]),
        })
    }
}

pub fn plan_for_ratio(
    scores: &[ConfidenceScore],
    target_ratio: f64,
) -> Result<RoutingPlan, EvalError> {
    RankedScores::new(scores)?.plan(target_ratio)
}

/// Accuracy of the cascade: small-model labels on served queries, large-model
/// labels on routed ones.
pub fn overall_accuracy(
    plan: &RoutingPlan,
    slm_correct: &Labels,
    llm_correct: &Labels,
) -> Result<f64, EvalError> {
    let n = plan.len();
    if n == 0 {
        return Err(EvalError::EmptyScores);
    }
    let mut hits = 0usize;
    for id in &plan.served_ids {
        hits += usize::from(slm_correct.get(id)?);
    }
    for id in &plan.routed_ids {
        hits += usize::from(llm_correct.get(id)?);
    }
    Ok(hits as f64 / n as f64)
}

pub fn routing_curve(
    scores: &[ConfidenceScore],
    slm_correct: &Labels,
    llm_correct: &Labels,
    grid: &[f64],
) -> Result<Vec<CurvePoint>, EvalError> {
    routing_curve_with_cost(scores, slm_correct, llm_correct, grid, CostModel::default())
}

pub fn routing_curve_with_cost(
    scores: &[ConfidenceScore],
    slm_correct: &Labels,
    llm_correct: &Labels,
    grid: &[f64],
    cost: CostModel,
) -> Result<Vec<CurvePoint>, EvalError> {
    let ranked = RankedScores::new(scores)?;
    grid.iter()
        .map(|&r| {
            let plan = ranked.plan(r)?;
            Ok(CurvePoint {
                ratio: r,
                achieved_ratio: plan.achieved_ratio,
                overall_accuracy: overall_accuracy(&plan, slm_correct, llm_correct)?,
                cost: plan.achieved_ratio * cost.strong_call_weight,
            })
        })
        .collect()
}

/// Best achievable curve for a label pair: route the queries only the large
/// model gets right first, then those neither gets right, then the rest (ones
/// both get right before ones only the small model gets right).
pub fn oracle_curve(
    slm_correct: &Labels,
    llm_correct: &Labels,
    grid: &[f64],
) -> Result<Vec<CurvePoint>, EvalError> {
    let ids = slm_correct.sorted_ids();
    let n = ids.len();
    if n == 0 {
        return Err(EvalError::EmptyScores);
    }
    let mut keyed = Vec::with_capacity(n);
    for id in ids {
        let priority = match (slm_correct.get(id)?, llm_correct.get(id)?) {
            (false, true) => 0u8,
            (false, false) => 1,
            (true, true) => 2,
            (true, false) => 3,
        };
        keyed.push((priority, id));
    }
    keyed.sort();
    grid.iter()
        .map(|&r| {
            check_ratio(r)?;
            let k = count_for_fraction(r, n);
            let mut hits = 0usize;
            for (i, (_, id)) in keyed.iter().enumerate() {
                let correct = if i < k {
                    llm_correct.get(id)?
                } else {
                    slm_correct.get(id)?
                };
                hits += usize::from(correct);
            }
            let achieved = k as f64 / n as f64;
            Ok(CurvePoint {
                ratio: r,
                achieved_ratio: achieved,
                overall_accuracy: hits as f64 / n as f64,
                cost: achieved,
            })
        })
        .collect()
}

/// Ids whose confidence is below `threshold`.
pub fn route_by_threshold(scores: &[ConfidenceScore], threshold: f64) -> BTreeSet<String> {
    scores
        .iter()
        .filter(|s| should_route(s.value, threshold))
        .map(|s| s.trace_id.clone())
        .collect()
}
