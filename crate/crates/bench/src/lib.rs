//! Fixtures shared by the benchmarks.

use uqroute_core::synth::{synth_strong_labels, synthesize, SynthSpec};
use uqroute_core::{score_batch, ConfidenceScore, Labels, TraceSet, UqMethod};

pub struct Fixture {
    pub traces: TraceSet,
    pub scores: Vec<ConfidenceScore>,
    pub slm: Labels,
    pub llm: Labels,
}

/// `n` synthetic traces with full evidence and their perplexity scores.
pub fn fixture(n: usize, seed: u64) -> Fixture {
    let traces = synthesize(&SynthSpec::new(n, seed, 1.0).with_evidence(true))
        .expect("n > 0")
        .traces;
    let scores = score_batch(&traces, UqMethod::Perplexity, None)
        .expect("no probe needed")
        .scores;
    Fixture {
        slm: traces.labels(),
        llm: synth_strong_labels(&traces, seed + 1, 0.9),
        traces,
        scores,
    }
}
