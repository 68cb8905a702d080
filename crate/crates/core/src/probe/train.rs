use super::{bce_with_logit, leaky_grad, logistic, ProbeError, ProbeModel, DEFAULT_HIDDEN};
use crate::trace::TraceSet;

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeTrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub hidden: Vec<usize>,
    /// Train on a fixed, seed-selected subsample of at most this many records.
    pub subsample: Option<usize>,
}

impl Default for ProbeTrainConfig {
    fn default() -> Self {
        Self::in_domain()
    }
}

impl ProbeTrainConfig {
    /// 20 epochs at learning rate 5e-4.
    pub fn in_domain() -> Self {
        Self {
            epochs: 20,
            learning_rate: 5e-4,
            batch_size: 64,
            seed: 50,
            hidden: DEFAULT_HIDDEN.to_vec(),
            subsample: None,
        }
    }

    /// Settings for a probe trained on datasets other than the evaluation
    /// target: 20 epochs at learning rate 1e-4.
    pub fn out_of_domain() -> Self {
        Self {
            learning_rate: 1e-4,
            ..Self::in_domain()
        }
    }

    fn validate(&self) -> Result<(), ProbeError> {
        if self.epochs == 0 {
            return Err(ProbeError::InvalidConfig("epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ProbeError::InvalidConfig("learning_rate must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(ProbeError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.subsample == Some(0) {
            return Err(ProbeError::InvalidConfig("subsample must be >= 1".into()));
        }
        Ok(())
    }
}

/// One training row. `key` identifies the row for seeded shuffling, so
/// training does not depend on input order.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub key: String,
    pub features: Vec<f64>,
    pub label: bool,
}

impl LabeledExample {
    pub fn new(key: impl Into<String>, features: Vec<f64>, label: bool) -> Self {
        Self {
            key: key.into(),
            features,
            label,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProbeFit {
    pub model: ProbeModel,
    /// Mean training loss over the full training set after each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Gradient buffers shaped like the model's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros_like(model: &ProbeModel) -> Self {
        Self {
            weights: model.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            bias: model.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    fn clear(&mut self) {
        self.weights.iter_mut().chain(self.bias.iter_mut()).for_each(|v| v.fill(0.0));
    }
}

impl ProbeModel {
    /// Mean binary cross-entropy over `batch`.
    pub fn loss(&self, batch: &[LabeledExample]) -> Result<f64, ProbeError> {
        let mut total = 0.0;
        for ex in batch {
            total += bce_with_logit(self.logit(&ex.features)?, ex.label);
        }
        Ok(total / batch.len().max(1) as f64)
    }

    /// Mean loss and its analytic gradient by backpropagation.
    pub fn loss_and_gradients(&self, batch: &[LabeledExample]) -> (f64, Gradients) {
        let mut grads = Gradients::zeros_like(self);
        let loss = self.accumulate_gradients(batch, &mut grads);
        (loss, grads)
    }

    fn accumulate_gradients(&self, batch: &[LabeledExample], grads: &mut Gradients) -> f64 {
        grads.clear();
        let scale = 1.0 / batch.len() as f64;
        let last = self.layers.len() - 1;
        let mut loss = 0.0;
        let mut delta: Vec<f64> = Vec::new();
        let mut prev_delta: Vec<f64> = Vec::new();
        for ex in batch {
            let cache = self.forward_cached(&ex.features);
            let z_out = cache.pre[last][0];
            loss += bce_with_logit(z_out, ex.label);
            let y = if ex.label { 1.0 } else { 0.0 };
            delta.clear();
            delta.push((logistic(z_out) - y) * scale);
            for l in (0..=last).rev() {
                let layer = &self.layers[l];
                let input: &[f64] = if l == 0 { &ex.features } else { &cache.post[l - 1] };
                let gw = &mut grads.weights[l];
                let gb = &mut grads.bias[l];
                for (j, &d) in delta.iter().enumerate() {
                    gb[j] += d;
                    let row = &mut gw[j * layer.in_dim..(j + 1) * layer.in_dim];
                    for (g, &a) in row.iter_mut().zip(input) {
                        *g += d * a;
                    }
                }
                if l > 0 {
                    prev_delta.clear();
                    prev_delta.resize(layer.in_dim, 0.0);
                    for (j, &d) in delta.iter().enumerate() {
                        for (p, &w) in prev_delta.iter_mut().zip(layer.row(j)) {
                            *p += w * d;
                        }
                    }
                    for (p, &z) in prev_delta.iter_mut().zip(&cache.pre[l - 1]) {
                        *p *= leaky_grad(z);
                    }
                    std::mem::swap(&mut delta, &mut prev_delta);
                }
            }
        }
        loss * scale
    }
}

/// Adaptive moment estimation with beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
struct Adam {
    lr: f64,
    step: i32,
    m: Gradients,
    v: Gradients,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(model: &ProbeModel, lr: f64) -> Self {
        Self {
            lr,
            step: 0,
            m: Gradients::zeros_like(model),
            v: Gradients::zeros_like(model),
        }
    }

    fn update(&mut self, model: &mut ProbeModel, g: &Gradients) {
        self.step += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.step);
        let c2 = 1.0 - Self::BETA2.powi(self.step);
        for (l, layer) in model.layers.iter_mut().enumerate() {
            let params = [
                (&mut layer.weights, &g.weights[l], &mut self.m.weights[l], &mut self.v.weights[l]),
                (&mut layer.bias, &g.bias[l], &mut self.m.bias[l], &mut self.v.bias[l]),
            ];
            for (p, g, m, v) in params {
                for i in 0..p.len() {
                    m[i] = Self::BETA1 * m[i] + (1.0 - Self::BETA1) * g[i];
                    v[i] = Self::BETA2 * v[i] + (1.0 - Self::BETA2) * g[i] * g[i];
                    let m_hat = m[i] / c1;
                    let v_hat = v[i] / c2;
                    p[i] -= self.lr * m_hat / (v_hat.sqrt() + Self::EPS);
                }
            }
        }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Orders examples by a keyed hash of `(seed, round, key)`.
fn keyed_order(examples: &[LabeledExample], seed: u64, round: u64) -> Vec<usize> {
    let salt = splitmix(seed ^ splitmix(round));
    let mut keyed: Vec<(u64, &str, usize)> = examples
        .iter()
        .enumerate()
        .map(|(i, ex)| (splitmix(fnv1a(ex.key.as_bytes()) ^ salt), ex.key.as_str(), i))
        .collect();
    keyed.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    keyed.into_iter().map(|(_, _, i)| i).collect()
}

/// Extracts `(hidden_state, correct)` rows. Keys combine dataset and id so
/// records pooled from several datasets stay distinct.
pub fn examples_from_traces(train: &TraceSet) -> Result<Vec<LabeledExample>, ProbeError> {
    train
        .iter()
        .map(|t| {
            let h = t
                .hidden_state
                .clone()
                .ok_or(ProbeError::MissingField("hidden_state"))?;
            let label = t.correct.ok_or_else(|| ProbeError::MissingLabel(t.id.clone()))?;
            Ok(LabeledExample::new(format!("{}/{}", t.dataset, t.id), h, label))
        })
        .collect()
}

pub fn train_probe(train: &TraceSet, config: &ProbeTrainConfig) -> Result<ProbeFit, ProbeError> {
    let examples = examples_from_traces(train)?;
    train_on_examples(&examples, config)
}

/// Deterministic mini-batch training; returns the final-epoch model.
pub fn train_on_examples(
    examples: &[LabeledExample],
    config: &ProbeTrainConfig,
) -> Result<ProbeFit, ProbeError> {
    config.validate()?;
    if examples.is_empty() {
        return Err(ProbeError::EmptyTrainingSet);
    }
    let dim = examples[0].features.len();
    if dim == 0 {
        return Err(ProbeError::DimensionMismatch {
            expected: 1,
            got: 0,
        });
    }
    for ex in examples {
        if ex.features.len() != dim {
            return Err(ProbeError::DimensionMismatch {
                expected: dim,
                got: ex.features.len(),
            });
        }
    }
    let mut subset: Vec<LabeledExample> = match config.subsample {
        Some(k) if k < examples.len() => keyed_order(examples, config.seed, u64::MAX)
            .into_iter()
            .take(k)
            .map(|i| examples[i].clone())
            .collect(),
        _ => examples.to_vec(),
    };
    // canonical order so float sums do not depend on input order
    subset.sort_by(|a, b| a.key.cmp(&b.key));
    let positives = subset.iter().filter(|e| e.label).count();
    if positives == 0 || positives == subset.len() {
        return Err(ProbeError::SingleClassTrainingSet);
    }

    let mut dims = vec![dim];
    dims.extend(&config.hidden);
    dims.push(1);
    let mut model = ProbeModel::random(&dims, config.seed)?;
    let mut adam = Adam::new(&model, config.learning_rate);
    let mut grads = Gradients::zeros_like(&model);
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut batch = Vec::with_capacity(config.batch_size);
    for epoch in 0..config.epochs {
        let order = keyed_order(&subset, config.seed, epoch as u64);
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| subset[i].clone()));
            model.accumulate_gradients(&batch, &mut grads);
            adam.update(&mut model, &grads);
        }
        epoch_losses.push(model.loss(&subset)?);
    }
    if !model.is_finite() {
        return Err(ProbeError::InvalidConfig(
            "training diverged to non-finite parameters".into(),
        ));
    }
    Ok(ProbeFit {
        model,
        epoch_losses,
    })
}
