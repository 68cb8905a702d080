//! Uncertainty-based routing between a small and a large language model.
//!
//! Inference traces from the small model are scored by one of several
//! uncertainty methods; low-confidence queries are routed to the large model.
//! The crate also evaluates how well confidence tracks correctness and builds
//! calibration sets for picking thresholds on unseen data.

pub mod alignment;
pub mod calibration;
mod error;
pub mod labels;
pub mod probe;
pub mod routing;
pub mod scoring;
pub mod synth;
pub mod table;
pub mod trace;

pub use alignment::{
    alignment_report, relative_accuracy_curve, roc_auc, roc_auc_scores, AlignmentReport,
    RelAccPoint,
};
pub use calibration::{
    generalization_report, group_by_dataset, leave_one_out_calibration, load_calibration,
    sample_calibration, save_calibration, transfer_threshold, CalibrationConfig,
    CalibrationError, CalibrationSet, GeneralizationReport, GeneralizationRow, PooledScore,
};
pub use error::EvalError;
pub use labels::{LabelError, Labels};
pub use probe::{ProbeError, ProbeModel, ProbeTrainConfig};
pub use routing::{
    oracle_curve, overall_accuracy, plan_for_ratio, routing_curve, should_route, CurvePoint,
    RoutingPlan,
};
pub use scoring::{
    score_batch, score_trace, BatchScores, ConfidenceScore, ScoreError, UqMethod,
};
pub use trace::{load_traces, AnswerKind, InferenceTrace, TraceError, TraceHeader, TraceSet};
