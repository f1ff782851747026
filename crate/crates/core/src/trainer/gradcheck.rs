//! Central finite-difference check of the surrogate gradients.
//!
//! The check runs on the relaxed network ([`Binarizer::HardTanh`]), where
//! the straight-through gradients are true derivatives away from the
//! clip, hard-tanh, max-pool and hinge kinks. A coordinate is only compared
//! when both perturbed evaluations take exactly the same branches as the
//! base point, so the loss is smooth along the whole difference stencil.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::surrogate::{backward, compute_stages, forward, loss_grad, plan, Binarizer, BnMode, Forward, Stage};
use super::{Loss, ShadowWeights, TrainError};
use crate::binlayers::{LayerConfig, NetworkConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Sampled coordinates rejected because a perturbation crossed a kink.
    pub skipped: usize,
    pub max_rel_error: f64,
    /// `(parameter, analytic, numeric)` of every comparison over tolerance.
    pub failures: Vec<(String, f64, f64)>,
}

impl GradCheckReport {
    pub fn passed(&self, points: usize) -> bool {
        self.checked >= points && self.failures.is_empty()
    }
}

/// Small network covering majority and plain convolutions, max-pooling and
/// majority/plain fully-connected layers.
pub fn gradcheck_net() -> NetworkConfig {
    NetworkConfig {
        input: [6, 6, 2],
        layers: vec![
            LayerConfig::conv(2, 4, 3, true).with_majority(true),
            LayerConfig::conv(4, 4, 3, true),
            LayerConfig::maxpool(2),
            LayerConfig::fc(36, 10).with_majority(true),
            LayerConfig::fc(10, 4),
        ],
    }
}

#[derive(Debug, Clone, Copy)]
enum Param {
    W,
    Bias,
    Gamma,
    Beta,
}

fn slot(weights: &mut ShadowWeights, layer: usize, p: Param, i: usize) -> &mut f64 {
    let lw = &mut weights.layers[layer];
    match p {
        Param::W => &mut lw.w[i],
        Param::Bias => &mut lw.bias[i],
        Param::Gamma => &mut lw.bn.as_mut().unwrap().gamma[i],
        Param::Beta => &mut lw.bn.as_mut().unwrap().beta[i],
    }
}

struct Eval {
    loss: f64,
    signature: (Vec<bool>, Vec<usize>),
    fwd: Forward,
}

fn evaluate(stages: &[Stage], w: &ShadowWeights, x: &[f64], labels: &[usize]) -> Eval {
    let fwd = forward(stages, w, x, labels.len(), Binarizer::HardTanh, BnMode::Batch);
    let (loss, _, _) = loss_grad(&fwd.logits, labels, Loss::SquaredHinge);
    let mut signature = fwd.signature();
    for (b, &label) in labels.iter().enumerate() {
        for c in 0..fwd.logits.ncols() {
            let t = if c == label { 1.0 } else { -1.0 };
            signature.0.push(1.0 - t * fwd.logits[(b, c)] > 0.0);
        }
    }
    Eval { loss, signature, fwd }
}

/// Compares analytic and central-difference gradients on `points` sampled
/// parameters of `net` at a random relaxed operating point.
pub fn gradient_check(
    net: &NetworkConfig,
    batch: usize,
    points: usize,
    h: f64,
    tolerance: f64,
    seed: u64,
) -> Result<GradCheckReport, TrainError> {
    let stages = plan(net)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = ShadowWeights::init(net, seed, 1e-4)?;
    let compute: Vec<_> = compute_stages(&stages).cloned().collect();
    for (st, lw) in compute.iter().zip(&mut weights.layers) {
        for o in 0..st.cout {
            for j in 0..st.fan_in {
                if !st.is_pad_column(j) {
                    lw.w[o * st.fan_in + j] = rng.random_range(-0.9..0.9);
                }
            }
        }
        match &mut lw.bn {
            Some(bn) => {
                bn.gamma.iter_mut().for_each(|g| *g = rng.random_range(0.5..1.5));
                bn.beta.iter_mut().for_each(|b| *b = rng.random_range(-0.3..0.3));
            }
            None => lw.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5)),
        }
    }
    let pixels: usize = net.input.iter().product();
    let classes = net.output_len()?;
    let x: Vec<f64> = (0..batch * pixels).map(|_| rng.random_range(-1.0..1.0)).collect();
    let labels: Vec<usize> = (0..batch).map(|_| rng.random_range(0..classes)).collect();

    let base = evaluate(&stages, &weights, &x, &labels);
    let (_, dlogits, _) = loss_grad(&base.fwd.logits, &labels, Loss::SquaredHinge);
    let grads = backward(&stages, &weights, &base.fwd, &dlogits);

    let mut report = GradCheckReport { checked: 0, skipped: 0, max_rel_error: 0.0, failures: Vec::new() };
    let mut attempts = 0;
    while report.checked < points && attempts < points * 50 {
        attempts += 1;
        let layer = rng.random_range(0..compute.len());
        let st = &compute[layer];
        let kind = match rng.random_range(0..4) {
            0 if st.last => Param::Bias,
            1 if !st.last => Param::Gamma,
            2 if !st.last => Param::Beta,
            _ => Param::W,
        };
        let i = match kind {
            Param::W => {
                let i = rng.random_range(0..st.cout * st.fan_in);
                if st.is_pad_column(i % st.fan_in) {
                    continue;
                }
                i
            }
            _ => rng.random_range(0..st.cout),
        };
        let g = &grads[layer];
        let analytic = match kind {
            Param::W => g.w[i],
            Param::Bias => g.bias[i],
            Param::Gamma => g.gamma[i],
            Param::Beta => g.beta[i],
        };
        let original = *slot(&mut weights, layer, kind, i);
        *slot(&mut weights, layer, kind, i) = original + h;
        let plus = evaluate(&stages, &weights, &x, &labels);
        *slot(&mut weights, layer, kind, i) = original - h;
        let minus = evaluate(&stages, &weights, &x, &labels);
        *slot(&mut weights, layer, kind, i) = original;
        if plus.signature != base.signature || minus.signature != base.signature {
            report.skipped += 1;
            continue;
        }
        let numeric = (plus.loss - minus.loss) / (2.0 * h);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        report.checked += 1;
        report.max_rel_error = report.max_rel_error.max(rel);
        if rel > tolerance {
            report.failures.push((format!("layer {} {kind:?}[{i}]", layer + 1), analytic, numeric));
        }
    }
    Ok(report)
}
