//! Supervised uncertainty probes: a small feed-forward classifier from a
//! hidden-state vector to the probability that the answer is correct.
//!
//! The network is a stack of dense layers with leaky-ReLU activations between
//! them and a logistic output. Default layout is `[d_in, 256, 128, 64, 1]`.

mod format;
mod gradcheck;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::scoring::{ConfidenceScore, UqMethod};
use crate::trace::InferenceTrace;

pub use format::{load_probe, read_probe, save_probe, write_probe, PROBE_FORMAT_VERSION};
pub use gradcheck::{gradient_check, GradCheck, GRAD_CHECK_FLOOR, GRAD_CHECK_STEP};
pub use train::{
    examples_from_traces, train_on_examples, train_probe, Gradients, LabeledExample, ProbeFit,
    ProbeTrainConfig,
};

pub const LEAKY_SLOPE: f64 = 0.01;
pub const DEFAULT_HIDDEN: [usize; 3] = [256, 128, 64];

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("missing field {0}")]
    MissingField(&'static str),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("training set contains a single class")]
    SingleClassTrainingSet,
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("trace {0:?} has no correctness label")]
    MissingLabel(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("probe file line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// One fully connected layer. `weights` is row-major `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    #[inline]
    pub fn row(&self, j: usize) -> &[f64] {
        &self.weights[j * self.in_dim..(j + 1) * self.in_dim]
    }

    pub(crate) fn affine_into(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend((0..self.out_dim).map(|j| dot(self.row(j), input) + self.bias[j]));
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn leaky(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        LEAKY_SLOPE * z
    }
}

#[inline]
pub(crate) fn leaky_grad(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

#[inline]
pub(crate) fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of a logit against a label, stable for large |z|.
#[inline]
pub(crate) fn bce_with_logit(z: f64, label: bool) -> f64 {
    let y = if label { 1.0 } else { 0.0 };
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeModel {
    pub layers: Vec<DenseLayer>,
}

impl ProbeModel {
    /// Model with every parameter zero. `dims` lists layer widths including
    /// input and the single output.
    pub fn zeros(dims: &[usize]) -> Result<Self, ProbeError> {
        check_dims(dims)?;
        Ok(Self {
            layers: dims
                .windows(2)
                .map(|w| DenseLayer::zeros(w[0], w[1]))
                .collect(),
        })
    }

    /// Uniform fan-in initialization, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`
    /// for weights and biases.
    pub fn random(dims: &[usize], seed: u64) -> Result<Self, ProbeError> {
        let mut model = Self::zeros(dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut model.layers {
            let bound = 1.0 / (layer.in_dim as f64).sqrt();
            for w in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *w = rng.random_range(-bound..bound);
            }
        }
        Ok(model)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.out_dim))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    /// Pre-sigmoid output.
    pub fn logit(&self, input: &[f64]) -> Result<f64, ProbeError> {
        if input.len() != self.input_dim() {
            return Err(ProbeError::DimensionMismatch {
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        let mut cur = input.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            layer.affine_into(&cur, &mut next);
            if i != last {
                next.iter_mut().for_each(|z| *z = leaky(*z));
            }
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur[0])
    }

    /// Probability of a correct answer, strictly inside (0, 1).
    pub fn predict(&self, input: &[f64]) -> Result<f64, ProbeError> {
        let p = logistic(self.logit(input)?);
        Ok(p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0))
    }

    /// Forward pass keeping every layer's pre-activation and activation.
    pub(crate) fn forward_cached(&self, input: &[f64]) -> ForwardCache {
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let src = if i == 0 { input } else { &post[i - 1] };
            let mut z = Vec::new();
            layer.affine_into(src, &mut z);
            let a = if i == last {
                z.clone()
            } else {
                z.iter().map(|&v| leaky(v)).collect()
            };
            pre.push(z);
            post.push(a);
        }
        ForwardCache { pre, post }
    }
}

pub(crate) struct ForwardCache {
    pub pre: Vec<Vec<f64>>,
    pub post: Vec<Vec<f64>>,
}

fn check_dims(dims: &[usize]) -> Result<(), ProbeError> {
    if dims.len() < 2 {
        return Err(ProbeError::InvalidConfig(
            "need at least input and output dims".into(),
        ));
    }
    if dims.contains(&0) {
        return Err(ProbeError::InvalidConfig("layer width 0".into()));
    }
    if *dims.last().unwrap() != 1 {
        return Err(ProbeError::InvalidConfig("output width must be 1".into()));
    }
    Ok(())
}

/// Scores a trace with a trained probe.
pub fn probe_confidence(
    model: &ProbeModel,
    trace: &InferenceTrace,
) -> Result<ConfidenceScore, ProbeError> {
    let h = trace
        .hidden_state
        .as_ref()
        .ok_or(ProbeError::MissingField("hidden_state"))?;
    let value = model.predict(h)?;
    Ok(ConfidenceScore::new(
        UqMethod::TrainedProbe,
        value,
        trace.id.clone(),
    ))
}
