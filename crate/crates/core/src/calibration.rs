//! Calibration-set construction and routing-threshold transfer.
//!
//! Confidence scores from several source datasets are pooled into a
//! uniform-width histogram over `[0, 1]`; a fixed fraction of every non-empty
//! bin is drawn (at least one per bin) to form a compact, dataset-agnostic
//! calibration set. Thresholds for a target routing ratio are then read off
//! the calibration confidences and applied unchanged to an unseen dataset.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::error::{count_for_fraction, EvalError};
use crate::labels::Labels;
use crate::probe::ProbeModel;
use crate::routing::{overall_accuracy, route_by_threshold, RankedScores, RoutingPlan};
use crate::scoring::{score_batch, ConfidenceScore, ScoreError, UqMethod};
use crate::table::{self, TableError, TableWriter};
use crate::trace::TraceSet;

pub const DEFAULT_BINS: usize = 30;
pub const DEFAULT_RATE: f64 = 0.1;
pub const DEFAULT_SEED: u64 = 50;

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("no scores")]
    EmptyScores,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unknown dataset {0:?}")]
    UnknownDataset(String),
    #[error("need at least two dataset groups")]
    SingleDataset,
    #[error("calibration set is empty")]
    EmptyCalibrationSet,
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error("calibration file: {0}")]
    Format(String),
}

/// A confidence value with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PooledScore {
    pub trace_id: String,
    pub dataset: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceHistogram {
    /// `bins + 1` uniform edges from 0 to 1.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// Members per bin, sorted by `(dataset, trace_id)`.
    pub members: Vec<Vec<PooledScore>>,
}

fn uniform_edges(bins: usize) -> Vec<f64> {
    (0..=bins).map(|i| i as f64 / bins as f64).collect()
}

/// Bin `b` holds `edges[b] <= v < edges[b + 1]`; the last bin also holds 1.0.
fn bin_index(edges: &[f64], v: f64) -> usize {
    let bins = edges.len() - 1;
    let mut b = ((v * bins as f64).floor().max(0.0) as usize).min(bins - 1);
    while b > 0 && v < edges[b] {
        b -= 1;
    }
    while b + 1 < bins && v >= edges[b + 1] {
        b += 1;
    }
    b
}

impl ConfidenceHistogram {
    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn bin_of(&self, confidence: f64) -> usize {
        bin_index(&self.edges, confidence)
    }
}

fn check_bins(bins: usize) -> Result<(), CalibrationError> {
    if bins == 0 {
        Err(CalibrationError::InvalidArgument("bin count must be >= 1".into()))
    } else {
        Ok(())
    }
}

pub fn build_histogram(
    scores: &[ConfidenceScore],
    bins: usize,
) -> Result<ConfidenceHistogram, CalibrationError> {
    build_pooled_histogram(
        scores
            .iter()
            .map(|s| PooledScore {
                trace_id: s.trace_id.clone(),
                dataset: String::new(),
                confidence: s.value,
            })
            .collect(),
        bins,
    )
}

pub fn build_pooled_histogram(
    entries: Vec<PooledScore>,
    bins: usize,
) -> Result<ConfidenceHistogram, CalibrationError> {
    check_bins(bins)?;
    if entries.is_empty() {
        return Err(CalibrationError::EmptyScores);
    }
    let edges = uniform_edges(bins);
    let mut members: Vec<Vec<PooledScore>> = vec![Vec::new(); bins];
    for e in entries {
        if !(0.0..=1.0).contains(&e.confidence) {
            return Err(CalibrationError::InvalidArgument(format!(
                "confidence {} of {:?} outside [0, 1]",
                e.confidence, e.trace_id
            )));
        }
        members[bin_index(&edges, e.confidence)].push(e);
    }
    for bin in &mut members {
        bin.sort_by(|a, b| (&a.dataset, &a.trace_id).cmp(&(&b.dataset, &b.trace_id)));
    }
    Ok(ConfidenceHistogram {
        counts: members.iter().map(Vec::len).collect(),
        edges,
        members,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationSet {
    pub method: Option<UqMethod>,
    pub edges: Vec<f64>,
    pub pooled_counts: Vec<usize>,
    pub sampled_counts: Vec<usize>,
    /// Sampled entries, grouped by bin in ascending order.
    pub members: Vec<PooledScore>,
    pub rate: f64,
    pub seed: u64,
}

/// Per-bin draw size: `max(1, floor(rate * n_b))` for a non-empty bin.
pub fn per_bin_quota(n_b: usize, rate: f64) -> usize {
    if n_b == 0 {
        0
    } else {
        count_for_fraction(rate, n_b).max(1)
    }
}

/// Draws `per_bin_quota` members uniformly without replacement from each bin.
pub fn sample_calibration(
    hist: &ConfidenceHistogram,
    rate: f64,
    seed: u64,
) -> Result<CalibrationSet, CalibrationError> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(CalibrationError::InvalidArgument(format!(
            "rate {rate} outside (0, 1]"
        )));
    }
    if hist.total() == 0 {
        return Err(CalibrationError::EmptyScores);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut members = Vec::new();
    let mut sampled_counts = Vec::with_capacity(hist.bins());
    for bin in &hist.members {
        let k = per_bin_quota(bin.len(), rate);
        if k > 0 {
            let mut picks = rand::seq::index::sample(&mut rng, bin.len(), k).into_vec();
            picks.sort_unstable();
            members.extend(picks.into_iter().map(|i| bin[i].clone()));
        }
        sampled_counts.push(k);
    }
    Ok(CalibrationSet {
        method: None,
        edges: hist.edges.clone(),
        pooled_counts: hist.counts.clone(),
        sampled_counts,
        members,
        rate,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationConfig {
    pub method: UqMethod,
    pub bins: usize,
    pub rate: f64,
    pub seed: u64,
}

impl CalibrationConfig {
    pub fn new(method: UqMethod) -> Self {
        Self {
            method,
            bins: DEFAULT_BINS,
            rate: DEFAULT_RATE,
            seed: DEFAULT_SEED,
        }
    }
}

/// Splits a trace set by its `dataset` tag, keeping file order within groups.
pub fn group_by_dataset(traces: &TraceSet) -> BTreeMap<String, TraceSet> {
    let mut groups: BTreeMap<String, TraceSet> = BTreeMap::new();
    for t in traces {
        groups
            .entry(t.dataset.clone())
            .or_insert_with(|| TraceSet::new(Vec::new(), format!("{}#{}", traces.source, t.dataset)))
            .records
            .push(t.clone());
    }
    groups
}

/// Builds a calibration set for `target` from every other dataset group.
/// Records the scorer cannot handle are left out of the pool.
pub fn leave_one_out_calibration(
    groups: &BTreeMap<String, TraceSet>,
    target: &str,
    config: &CalibrationConfig,
    probe: Option<&ProbeModel>,
) -> Result<CalibrationSet, CalibrationError> {
    if !groups.contains_key(target) {
        return Err(CalibrationError::UnknownDataset(target.to_string()));
    }
    if groups.len() < 2 {
        return Err(CalibrationError::SingleDataset);
    }
    let mut pooled = Vec::new();
    for (tag, set) in groups.iter().filter(|(tag, _)| tag.as_str() != target) {
        let batch = score_batch(set, config.method, probe)?;
        pooled.extend(batch.scores.into_iter().map(|s| PooledScore {
            trace_id: s.trace_id,
            dataset: tag.clone(),
            confidence: s.value,
        }));
    }
    let hist = build_pooled_histogram(pooled, config.bins)?;
    let mut cal = sample_calibration(&hist, config.rate, config.seed)?;
    cal.method = Some(config.method);
    Ok(cal)
}

impl CalibrationSet {
    /// A calibration set holding every given score (no sampling).
    pub fn from_scores(scores: &[ConfidenceScore], bins: usize) -> Result<Self, CalibrationError> {
        let hist = build_histogram(scores, bins)?;
        let members = hist.members.iter().flatten().cloned().collect();
        Ok(Self {
            method: scores.first().map(|s| s.method),
            edges: hist.edges,
            sampled_counts: hist.counts.clone(),
            pooled_counts: hist.counts,
            members,
            rate: 1.0,
            seed: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn confidences(&self) -> Vec<f64> {
        self.members.iter().map(|m| m.confidence).collect()
    }
}

/// Lower empirical `ratio`-quantile of the calibration confidences: the
/// `floor(ratio * n)`-th smallest value, or just above the maximum at ratio 1.
/// Routing strictly below it reproduces `ratio` on the calibration set itself.
pub fn transfer_threshold(cal: &CalibrationSet, ratio: f64) -> Result<f64, CalibrationError> {
    if cal.is_empty() {
        return Err(CalibrationError::EmptyCalibrationSet);
    }
    if !(0.0..=1.0).contains(&ratio) {
        return Err(CalibrationError::InvalidArgument(format!(
            "routing ratio {ratio} outside [0, 1]"
        )));
    }
    let mut values = cal.confidences();
    values.sort_by(f64::total_cmp);
    let n = values.len();
    let k = count_for_fraction(ratio, n);
    Ok(if k < n {
        values[k]
    } else {
        values[n - 1].next_up()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneralizationRow {
    pub ratio: f64,
    pub threshold: f64,
    pub achieved_ratio: f64,
    pub transfer_accuracy: f64,
    pub direct_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneralizationReport {
    pub rows: Vec<GeneralizationRow>,
    pub max_abs_accuracy_gap: f64,
    pub mean_abs_accuracy_gap: f64,
    pub max_ratio_gap: f64,
}

/// Applies calibration-derived thresholds to a target dataset and compares
/// against routing the target directly at each ratio.
pub fn generalization_report(
    cal: &CalibrationSet,
    target: &[ConfidenceScore],
    slm_correct: &Labels,
    llm_correct: &Labels,
    grid: &[f64],
) -> Result<GeneralizationReport, CalibrationError> {
    let ranked = RankedScores::new(target)?;
    let n = target.len();
    let mut rows = Vec::with_capacity(grid.len());
    for &r in grid {
        let threshold = transfer_threshold(cal, r)?;
        let routed_ids = route_by_threshold(target, threshold);
        let served_ids = target
            .iter()
            .filter(|s| !routed_ids.contains(&s.trace_id))
            .map(|s| s.trace_id.clone())
            .collect();
        let achieved_ratio = routed_ids.len() as f64 / n as f64;
        let transferred = RoutingPlan {
            threshold,
            target_ratio: r,
            achieved_ratio,
            routed_ids,
            served_ids,
        };
        let direct = ranked.plan(r)?;
        rows.push(GeneralizationRow {
            ratio: r,
            threshold,
            achieved_ratio,
            transfer_accuracy: overall_accuracy(&transferred, slm_correct, llm_correct)?,
            direct_accuracy: overall_accuracy(&direct, slm_correct, llm_correct)?,
        });
    }
    let gaps: Vec<f64> = rows
        .iter()
        .map(|r| (r.transfer_accuracy - r.direct_accuracy).abs())
        .collect();
    Ok(GeneralizationReport {
        max_abs_accuracy_gap: gaps.iter().copied().fold(0.0, f64::max),
        mean_abs_accuracy_gap: if gaps.is_empty() {
            0.0
        } else {
            gaps.iter().sum::<f64>() / gaps.len() as f64
        },
        max_ratio_gap: rows
            .iter()
            .map(|r| (r.achieved_ratio - r.ratio).abs())
            .fold(0.0, f64::max),
        rows,
    })
}

/// Sidecar path holding the histogram for a manifest at `manifest`.
pub fn histogram_sidecar(manifest: &Path) -> PathBuf {
    let mut s = manifest.as_os_str().to_owned();
    s.push(".hist.tsv");
    PathBuf::from(s)
}

const MANIFEST_TAG: &str = "uqroute-calibration";

/// Writes the id manifest and its histogram sidecar.
pub fn save_calibration(cal: &CalibrationSet, manifest: &Path) -> Result<(), CalibrationError> {
    let meta = vec![
        ("format", format!("{MANIFEST_TAG} 1")),
        (
            "method",
            cal.method.map_or_else(|| "unknown".to_string(), |m| m.to_string()),
        ),
        ("bins", cal.edges.len().saturating_sub(1).to_string()),
        ("rate", cal.rate.to_string()),
        ("seed", cal.seed.to_string()),
    ];
    let mut w = TableWriter::create_with_meta(
        manifest,
        &meta,
        &["trace_id", "dataset", "confidence", "bin"],
    )?;
    for m in &cal.members {
        let bin = bin_index(&cal.edges, m.confidence);
        w.row(&[
            m.trace_id.clone(),
            m.dataset.clone(),
            m.confidence.to_string(),
            bin.to_string(),
        ])?;
    }
    w.finish()?;

    let mut h = TableWriter::create(
        histogram_sidecar(manifest),
        &["bin", "lower", "upper", "pooled", "sampled"],
    )?;
    for b in 0..cal.pooled_counts.len() {
        h.row(&[
            b.to_string(),
            cal.edges[b].to_string(),
            cal.edges[b + 1].to_string(),
            cal.pooled_counts[b].to_string(),
            cal.sampled_counts[b].to_string(),
        ])?;
    }
    h.finish()?;
    Ok(())
}

/// Reads a manifest written by [`save_calibration`]. The histogram sidecar is
/// optional; without it the pooled counts are reconstructed from the members.
pub fn load_calibration(manifest: &Path) -> Result<CalibrationSet, CalibrationError> {
    let meta: BTreeMap<String, String> = table::read_meta(manifest)?.into_iter().collect();
    if meta.get("format").map(String::as_str) != Some("uqroute-calibration 1") {
        return Err(CalibrationError::Format(format!(
            "{} is not a calibration manifest",
            manifest.display()
        )));
    }
    let field = |k: &str| {
        meta.get(k)
            .ok_or_else(|| CalibrationError::Format(format!("missing {k}")))
    };
    let bins: usize = field("bins")?
        .parse()
        .map_err(|_| CalibrationError::Format("bad bins".into()))?;
    check_bins(bins)?;
    let rate: f64 = field("rate")?
        .parse()
        .map_err(|_| CalibrationError::Format("bad rate".into()))?;
    let seed: u64 = field("seed")?
        .parse()
        .map_err(|_| CalibrationError::Format("bad seed".into()))?;
    let method = field("method")?.parse::<UqMethod>().ok();
    let edges = uniform_edges(bins);

    let mut members = Vec::new();
    let mut member_counts = vec![0usize; bins];
    for (line, row) in table::read_rows(manifest, &["trace_id", "dataset", "confidence"])? {
        let confidence = table::parse_f64(&row[2], line)?;
        if !(0.0..=1.0).contains(&confidence) {
            return Err(CalibrationError::Format(format!(
                "line {line}: confidence {confidence} outside [0, 1]"
            )));
        }
        member_counts[bin_index(&edges, confidence)] += 1;
        members.push(PooledScore {
            trace_id: row[0].clone(),
            dataset: row[1].clone(),
            confidence,
        });
    }

    let sidecar = histogram_sidecar(manifest);
    let (pooled_counts, sampled_counts) = if sidecar.exists() {
        let rows = table::read_rows(&sidecar, &["pooled", "sampled"])?;
        if rows.len() != bins {
            return Err(CalibrationError::Format(format!(
                "sidecar has {} bins, manifest says {bins}",
                rows.len()
            )));
        }
        let parse = |s: &str, line| {
            s.parse::<usize>().map_err(|_| {
                CalibrationError::Format(format!("sidecar line {line}: bad count {s:?}"))
            })
        };
        let mut pooled = Vec::with_capacity(bins);
        let mut sampled = Vec::with_capacity(bins);
        for (line, row) in rows {
            pooled.push(parse(&row[0], line)?);
            sampled.push(parse(&row[1], line)?);
        }
        (pooled, sampled)
    } else {
        (member_counts.clone(), member_counts)
    };
    Ok(CalibrationSet {
        method,
        edges,
        pooled_counts,
        sampled_counts,
        members,
        rate,
        seed,
    })
}
