//! Finite-difference verification of the backpropagated gradients.

use super::train::LabeledExample;
use super::{bce_with_logit, dot, leaky, ProbeModel};

/// Central-difference step.
pub const GRAD_CHECK_STEP: f64 = 1e-5;

/// Absolute floor on the relative-error denominator, so parameters whose true
/// gradient is ~0 are compared on an absolute scale. Central differences at
/// `GRAD_CHECK_STEP` carry roundoff near `1e-11` for losses of order one.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// Largest `|a - n| / max(|a|, |n|, GRAD_CHECK_FLOOR)` over compared parameters.
    pub max_relative_error: f64,
    pub compared: usize,
    /// Parameters whose `±GRAD_CHECK_STEP` perturbation moved some hidden
    /// pre-activation across the LeakyReLU kink. The loss is not
    /// differentiable across that step, so they are left out of the maximum.
    pub kink_skipped: usize,
}

/// Compares the analytic gradient of the mean batch loss with central finite
/// differences on every parameter.
///
/// A perturbed parameter only changes one unit of its layer, so the loss is
/// re-evaluated from that unit onward instead of running a full forward pass.
pub fn gradient_check(model: &ProbeModel, batch: &[LabeledExample]) -> GradCheck {
    let mut report = GradCheck {
        max_relative_error: 0.0,
        compared: 0,
        kink_skipped: 0,
    };
    if batch.is_empty() {
        return report;
    }
    let (_, analytic) = model.loss_and_gradients(batch);
    let caches: Vec<_> = batch.iter().map(|ex| model.forward_cached(&ex.features)).collect();
    let last = model.layers.len() - 1;
    let n = batch.len() as f64;
    let flips = |z: f64, base: f64| (z > 0.0) != (base > 0.0);

    // Loss after replacing pre-activation `j` of layer `l` by `z_new(sample)`,
    // and whether any hidden pre-activation changed side of the kink.
    let perturbed_loss = |l: usize, j: usize, z_new: &dyn Fn(usize) -> f64| -> (f64, bool) {
        let mut total = 0.0;
        let mut crossed = false;
        for (s, ex) in batch.iter().enumerate() {
            let cache = &caches[s];
            let z = z_new(s);
            let logit = if l == last {
                z
            } else {
                crossed |= flips(z, cache.pre[l][j]);
                let da = leaky(z) - cache.post[l][j];
                let next = &model.layers[l + 1];
                let mut cur = cache.pre[l + 1].clone();
                for (r, zn) in cur.iter_mut().enumerate() {
                    *zn += next.weights[r * next.in_dim + j] * da;
                }
                let mut buf = Vec::new();
                for i in l + 1..last {
                    for (zn, &base) in cur.iter_mut().zip(&cache.pre[i]) {
                        crossed |= flips(*zn, base);
                        *zn = leaky(*zn);
                    }
                    model.layers[i + 1].affine_into(&cur, &mut buf);
                    std::mem::swap(&mut cur, &mut buf);
                }
                cur[0]
            };
            total += bce_with_logit(logit, ex.label);
        }
        (total / n, crossed)
    };

    let mut compare = |a: f64, (lp, cp): (f64, bool), (lm, cm): (f64, bool), step: f64| {
        if cp || cm {
            report.kink_skipped += 1;
            return;
        }
        let num = (lp - lm) / step;
        let denom = a.abs().max(num.abs()).max(GRAD_CHECK_FLOOR);
        report.compared += 1;
        report.max_relative_error = report.max_relative_error.max((a - num).abs() / denom);
    };

    for (l, layer) in model.layers.iter().enumerate() {
        let input = |s: usize| -> &[f64] {
            if l == 0 {
                &batch[s].features
            } else {
                &caches[s].post[l - 1]
            }
        };
        for j in 0..layer.out_dim {
            let row = layer.row(j);
            let b = layer.bias[j];
            // bias: z_j shifts by the realized step
            let (up, dn) = (b + GRAD_CHECK_STEP, b - GRAD_CHECK_STEP);
            compare(
                analytic.bias[l][j],
                perturbed_loss(l, j, &|s| dot(row, input(s)) + up),
                perturbed_loss(l, j, &|s| dot(row, input(s)) + dn),
                up - dn,
            );
            for k in 0..layer.in_dim {
                let w = row[k];
                let (up, dn) = (w + GRAD_CHECK_STEP, w - GRAD_CHECK_STEP);
                let base = |s: usize| caches[s].pre[l][j] - w * input(s)[k];
                compare(
                    analytic.weights[l][j * layer.in_dim + k],
                    perturbed_loss(l, j, &|s| base(s) + up * input(s)[k]),
                    perturbed_loss(l, j, &|s| base(s) + dn * input(s)[k]),
                    up - dn,
                );
            }
        }
    }
    report
}
