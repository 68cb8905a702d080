//! Deterministic synthetic traces used as a test substrate.
//!
//! Each query gets a latent ease `e` drawn uniformly from (0, 1]. Its token
//! log-probabilities are built so their mean is exactly `ln e`, which makes the
//! perplexity confidence of the trace equal to `e`. The small model is correct
//! with probability `(1 - link) * 0.5 + link * e`, so `link` controls how well
//! confidence aligns with correctness.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::labels::Labels;
use crate::trace::{AnswerKind, InferenceTrace, TraceError, TraceSet};

/// Dimension of the optional synthetic hidden state.
pub const SYNTH_HIDDEN_DIM: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n: usize,
    pub seed: u64,
    pub difficulty_link: f64,
    pub dataset: String,
    /// Also fabricate p(True), resample, verbalized and hidden-state evidence.
    pub with_evidence: bool,
}

impl SynthSpec {
    pub fn new(n: usize, seed: u64, difficulty_link: f64) -> Self {
        Self {
            n,
            seed,
            difficulty_link,
            dataset: "synthetic".to_string(),
            with_evidence: false,
        }
    }

    pub fn dataset(mut self, tag: impl Into<String>) -> Self {
        self.dataset = tag.into();
        self
    }

    pub fn with_evidence(mut self, yes: bool) -> Self {
        self.with_evidence = yes;
        self
    }
}

#[derive(Debug, Clone)]
pub struct Synthetic {
    pub traces: TraceSet,
    /// Latent ease per record, aligned with `traces.records`.
    pub ease: Vec<f64>,
}

/// Generates `n` labeled free-form traces. Pure function of its arguments.
pub fn synth_traces(n: usize, seed: u64, difficulty_link: f64) -> Result<TraceSet, TraceError> {
    synthesize(&SynthSpec::new(n, seed, difficulty_link)).map(|s| s.traces)
}

pub fn synthesize(spec: &SynthSpec) -> Result<Synthetic, TraceError> {
    if spec.n == 0 {
        return Err(TraceError::InvalidArgument("n must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&spec.difficulty_link) {
        return Err(TraceError::InvalidArgument(format!(
            "difficulty_link {} outside [0, 1]",
            spec.difficulty_link
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    // Evidence uses its own stream so enabling it leaves the base traces unchanged.
    let mut ev_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_e71d_e9ce_0001);
    let mut records = Vec::with_capacity(spec.n);
    let mut ease = Vec::with_capacity(spec.n);
    let prefix = if spec.dataset == "synthetic" {
        "syn".to_string()
    } else {
        spec.dataset.clone()
    };
    for i in 0..spec.n {
        let e: f64 = 1.0 - rng.random::<f64>();
        let n_tokens: usize = rng.random_range(1..=8);
        let weights: Vec<f64> = (0..n_tokens).map(|_| rng.random_range(0.5..1.5)).collect();
        let mean_w = weights.iter().sum::<f64>() / n_tokens as f64;
        let ln_e = e.ln();
        let token_logprobs: Vec<f64> = weights.iter().map(|w| (w / mean_w) * ln_e).collect();
        let p_correct = (1.0 - spec.difficulty_link) * 0.5 + spec.difficulty_link * e;
        let correct = rng.random::<f64>() < p_correct;

        let mut t = InferenceTrace::new(format!("{prefix}-{i:06}"), AnswerKind::FreeForm);
        t.dataset = spec.dataset.clone();
        t.prompt = format!("synthetic query {i}");
        t.response = format!("answer {i}");
        t.token_logprobs = token_logprobs;
        t.correct = Some(correct);
        if spec.with_evidence {
            attach_evidence(&mut t, e, correct, &mut ev_rng);
        }
        records.push(t);
        ease.push(e);
    }
    let source = if spec.dataset == "synthetic" {
        "synthetic".to_string()
    } else {
        format!("synthetic:{}", spec.dataset)
    };
    Ok(Synthetic {
        traces: TraceSet::new(records, source),
        ease,
    })
}

fn attach_evidence(t: &mut InferenceTrace, e: f64, correct: bool, rng: &mut ChaCha8Rng) {
    let p_true = (e + rng.random_range(-0.2..0.2)).clamp(0.01, 0.99);
    t.true_false_logprobs = Some((p_true.ln(), (1.0 - p_true).ln()));

    let canonical = format!("the answer is {}", t.id);
    let samples = (0..5)
        .map(|k| {
            if rng.random::<f64>() < e {
                canonical.clone()
            } else {
                format!("maybe option {k} {}", rng.random_range(0..1000))
            }
        })
        .collect();
    t.samples = Some(samples);

    let verbal = (0.6 + 0.4 * rng.random::<f64>()) * 100.0;
    t.verbal_confidence_text = Some(format!("Answer: {}. Confidence: {:.0}", t.response, verbal));

    let signal = if correct { 0.75 } else { -0.75 };
    let hidden = (0..SYNTH_HIDDEN_DIM)
        .map(|d| {
            let noise = rng.random_range(-1.0..1.0);
            if d == 0 {
                signal + noise
            } else {
                noise
            }
        })
        .collect();
    t.hidden_state = Some(hidden);
}

/// Labels for a hypothetical strong model that is correct independently of
/// the small model with probability `accuracy`.
pub fn synth_strong_labels(traces: &TraceSet, seed: u64, accuracy: f64) -> Labels {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    traces
        .iter()
        .map(|t| (t.id.clone(), rng.random::<f64>() < accuracy))
        .collect()
}
