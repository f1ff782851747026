//! Binarization-aware training of B/M networks.
//!
//! Latent real weights are binarized with `sign` in the forward pass and
//! receive hard-tanh straight-through gradients. Majority layers train on
//! `scale * clip(t, -1, 1)` per group, which matches the deployed
//! XNorMaj value exactly. Hidden layers are batch-normalized and then
//! binarized; their bias is fixed at zero, since the normalization absorbs
//! it. The output layer keeps a trainable bias.
//!
//! Trained weights are evaluated on the deployment path: packed kernels and
//! folded integer thresholds.

mod checkpoint;
mod gradcheck;
mod ste;
mod surrogate;

use std::fmt::Write as _;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::binlayers::{BinaryWeights, BnParams, DeployedNetwork, LayerError, NetworkConfig};
use crate::bitcore::BitError;
use crate::dataset::Dataset;

pub use checkpoint::Checkpoint;
pub use gradcheck::{gradcheck_net, gradient_check, GradCheckReport};
pub use ste::{binarize_ste_backward, binarize_ste_forward, majority_backward_train, majority_forward_train, sign};
pub use surrogate::Binarizer;

use surrogate::{backward, forward, forward_with_dropout, loss_grad, plan, BnMode, Dropout, Stage};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error(transparent)]
    Bit(#[from] BitError),
    #[error("{0}")]
    Shape(String),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("training diverged (non-finite loss) in epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    Adam,
    SgdMomentum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Loss {
    SquaredHinge,
    CrossEntropy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    /// Multiplies the learning rate after every epoch.
    pub lr_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub loss: Loss,
    /// SGD momentum.
    pub momentum: f64,
    /// Weight of the previous running batch-norm statistics.
    pub bn_momentum: f64,
    pub bn_eps: f64,
    /// Dropout rate on the network input during training.
    pub dropout_input: f64,
    /// Dropout rate on the inputs of the later layers during training.
    pub dropout_hidden: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            lr_decay: 1.0,
            epochs: 10,
            batch_size: 100,
            seed: 0,
            optimizer: Optimizer::Adam,
            loss: Loss::SquaredHinge,
            momentum: 0.9,
            bn_momentum: 0.9,
            bn_eps: 1e-4,
            dropout_input: 0.0,
            dropout_hidden: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad("learning rate must be positive");
        }
        if !(self.lr_decay > 0.0) {
            return bad("learning-rate decay must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.momentum) || !(0.0..1.0).contains(&self.bn_momentum) {
            return bad("momentum values must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.dropout_input) || !(0.0..1.0).contains(&self.dropout_hidden) {
            return bad("dropout rates must lie in [0, 1)");
        }
        if !(self.bn_eps > 0.0) {
            return bad("batch-norm epsilon must be positive");
        }
        Ok(())
    }
}

/// Batch-norm scale/shift and running statistics of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BnState {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub eps: f64,
}

impl BnState {
    pub fn new(channels: usize, eps: f64) -> Self {
        BnState {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            eps,
        }
    }

    /// Inference form with the running statistics.
    pub fn inference(&self) -> BnParams {
        BnParams {
            gamma: self.gamma.clone(),
            mu: self.mean.clone(),
            inv_std: self.var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect(),
            beta: self.beta.clone(),
        }
    }
}

/// Latent parameters of one conv/fc layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub cout: usize,
    pub fan_in: usize,
    /// `cout x fan_in`, row layout as in [`BinaryWeights`].
    pub w: Vec<f64>,
    pub bias: Vec<f64>,
    /// `None` on the output layer.
    pub bn: Option<BnState>,
}

impl LayerWeights {
    pub fn binary(&self) -> Result<BinaryWeights, TrainError> {
        let signs: Vec<f64> = self.w.iter().map(|&v| sign(v)).collect();
        Ok(BinaryWeights::from_signs(self.cout, self.fan_in, &signs)?)
    }
}

/// Latent weights of every conv/fc layer, in network order.
#[derive(Debug, Clone, PartialEq)]
pub struct ShadowWeights {
    pub layers: Vec<LayerWeights>,
}

impl ShadowWeights {
    /// Uniform Glorot initialization. Weights on fully-connected padding
    /// columns are fixed at `-1`, matching the logic-0 padding input.
    pub fn init(net: &NetworkConfig, seed: u64, bn_eps: f64) -> Result<Self, TrainError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init_with(&plan(net)?, &mut rng, bn_eps)
    }

    fn init_with(stages: &[Stage], rng: &mut ChaCha8Rng, bn_eps: f64) -> Result<Self, TrainError> {
        let layers = surrogate::compute_stages(stages)
            .map(|st| {
                let limit = (6.0 / (st.fan_in + st.cout) as f64).sqrt().min(1.0);
                let mut w = Vec::with_capacity(st.cout * st.fan_in);
                for _ in 0..st.cout {
                    for j in 0..st.fan_in {
                        w.push(if st.is_pad_column(j) { -1.0 } else { rng.random_range(-limit..=limit) });
                    }
                }
                LayerWeights {
                    cout: st.cout,
                    fan_in: st.fan_in,
                    w,
                    bias: vec![0.0; st.cout],
                    bn: (!st.last).then(|| BnState::new(st.cout, bn_eps)),
                }
            })
            .collect();
        Ok(ShadowWeights { layers })
    }

    /// Checks that every layer matches `net`.
    pub fn check(&self, net: &NetworkConfig) -> Result<(), TrainError> {
        let stages = plan(net)?;
        let compute: Vec<_> = surrogate::compute_stages(&stages).collect();
        if compute.len() != self.layers.len() {
            return Err(TrainError::Shape(format!(
                "weights have {} layers, network has {} conv/fc layers",
                self.layers.len(),
                compute.len()
            )));
        }
        for (st, lw) in compute.iter().zip(&self.layers) {
            let n = st.slot + 1;
            if lw.cout != st.cout || lw.fan_in != st.fan_in || lw.w.len() != st.cout * st.fan_in {
                return Err(TrainError::Shape(format!(
                    "layer {n}: weights are {}x{}, network expects {}x{}",
                    lw.cout, lw.fan_in, st.cout, st.fan_in
                )));
            }
            if lw.bias.len() != st.cout {
                return Err(TrainError::Shape(format!("layer {n}: {} biases for {} outputs", lw.bias.len(), st.cout)));
            }
            match (&lw.bn, st.last) {
                (None, false) => return Err(TrainError::Shape(format!("layer {n}: missing batch norm"))),
                (Some(_), true) => return Err(TrainError::Shape(format!("layer {n}: output layer has batch norm"))),
                (Some(bn), false) if [&bn.gamma, &bn.beta, &bn.mean, &bn.var].iter().any(|v| v.len() != st.cout) => {
                    return Err(TrainError::Shape(format!("layer {n}: batch norm has the wrong channel count")))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Deployment network: signs of the latent weights and folded thresholds.
    pub fn deploy(&self, net: &NetworkConfig) -> Result<DeployedNetwork, TrainError> {
        self.check(net)?;
        let params = self
            .layers
            .iter()
            .map(|lw| Ok((lw.binary()?, lw.bias.clone(), lw.bn.as_ref().map(BnState::inference))))
            .collect::<Result<Vec<_>, TrainError>>()?;
        Ok(DeployedNetwork::new(net.clone(), params)?)
    }

    pub fn max_abs_weight(&self) -> f64 {
        self.layers.iter().flat_map(|l| &l.w).fold(0.0, |a, &v| a.max(v.abs()))
    }

    fn trainable_mut(&mut self) -> Vec<(&mut [f64], bool)> {
        let mut out = Vec::new();
        for lw in &mut self.layers {
            out.push((lw.w.as_mut_slice(), true));
            match &mut lw.bn {
                Some(bn) => {
                    out.push((bn.gamma.as_mut_slice(), false));
                    out.push((bn.beta.as_mut_slice(), false));
                }
                None => out.push((lw.bias.as_mut_slice(), false)),
            }
        }
        out
    }
}

fn grads_flat(grads: &[surrogate::LayerGrads], weights: &ShadowWeights) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for (g, lw) in grads.iter().zip(&weights.layers) {
        out.push(g.w.clone());
        if lw.bn.is_some() {
            out.push(g.gamma.clone());
            out.push(g.beta.clone());
        } else {
            out.push(g.bias.clone());
        }
    }
    out
}

struct OptState {
    kind: Optimizer,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl OptState {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(kind: Optimizer, weights: &mut ShadowWeights) -> Self {
        let sizes: Vec<usize> = weights.trainable_mut().iter().map(|(p, _)| p.len()).collect();
        OptState {
            kind,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    /// One update followed by the latent-weight clip to `[-1, 1]`.
    fn step(&mut self, weights: &mut ShadowWeights, grads: &[Vec<f64>], lr: f64, momentum: f64) {
        self.t += 1;
        let (c1, c2) = (1.0 - Self::BETA1.powi(self.t), 1.0 - Self::BETA2.powi(self.t));
        for (k, (param, clip)) in weights.trainable_mut().into_iter().enumerate() {
            let (m, v, g) = (&mut self.m[k], &mut self.v[k], &grads[k]);
            for i in 0..param.len() {
                match self.kind {
                    Optimizer::Adam => {
                        m[i] = Self::BETA1 * m[i] + (1.0 - Self::BETA1) * g[i];
                        v[i] = Self::BETA2 * v[i] + (1.0 - Self::BETA2) * g[i] * g[i];
                        param[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + Self::EPS);
                    }
                    Optimizer::SgdMomentum => {
                        m[i] = momentum * m[i] + g[i];
                        param[i] -= lr * m[i];
                    }
                }
                if clip {
                    param[i] = param[i].clamp(-1.0, 1.0);
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    /// Accuracy of the training-mode forward passes during the epoch.
    pub train_acc: f64,
    /// Deployment-path accuracy on the validation set; `NaN` without one.
    pub val_acc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    pub weights: ShadowWeights,
    pub history: Vec<EpochStats>,
}

/// `epoch,train_acc,val_acc` rows; the validation column is empty when no
/// validation set was given.
pub fn history_csv(history: &[EpochStats]) -> String {
    let mut out = String::from("epoch,train_acc,val_acc\n");
    for h in history {
        let val = if h.val_acc.is_nan() { String::new() } else { format!("{:.6}", h.val_acc) };
        let _ = writeln!(out, "{},{:.6},{val}", h.epoch, h.train_acc);
    }
    out
}

fn check_data(net: &NetworkConfig, data: &Dataset) -> Result<(), TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let pixels: usize = net.input.iter().product();
    if data.pixels() != pixels {
        return Err(TrainError::Shape(format!(
            "dataset images have {} values, network input {:?} needs {pixels}",
            data.pixels(),
            net.input
        )));
    }
    let outputs = net.output_len()?;
    if let Some(&l) = data.labels().iter().find(|&&l| l >= outputs) {
        return Err(TrainError::Shape(format!("label {l} exceeds the {outputs} network outputs")));
    }
    Ok(())
}

/// Trains `net` from a seeded initialization. Single-threaded and fully
/// deterministic for a given seed.
pub fn train(
    net: &NetworkConfig,
    data: &Dataset,
    val: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<TrainResult, TrainError> {
    cfg.validate()?;
    check_data(net, data)?;
    if let Some(v) = val {
        check_data(net, v)?;
    }
    if data.classes() != net.output_len()? {
        return Err(TrainError::Shape(format!(
            "dataset has {} classes, network has {} outputs",
            data.classes(),
            net.output_len()?
        )));
    }
    let stages = plan(net)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut weights = ShadowWeights::init_with(&stages, &mut rng, cfg.bn_eps)?;
    let mut opt = OptState::new(cfg.optimizer, &mut weights);
    let pixels = data.pixels();
    let inputs: Vec<f64> = (0..data.len()).flat_map(|i| data.input_signs(i)).collect();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut lr = cfg.lr;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut x = Vec::with_capacity(cfg.batch_size * pixels);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            x.clear();
            for &i in chunk {
                x.extend_from_slice(&inputs[i * pixels..(i + 1) * pixels]);
            }
            let labels: Vec<usize> = chunk.iter().map(|&i| data.label(i)).collect();
            let dropout = Dropout { rng: &mut rng, input: cfg.dropout_input, hidden: cfg.dropout_hidden };
            let fwd =
                forward_with_dropout(&stages, &weights, &x, chunk.len(), Binarizer::Sign, BnMode::Batch, Some(dropout));
            let (loss, dlogits, ok) = loss_grad(&fwd.logits, &labels, cfg.loss);
            if !loss.is_finite() {
                return Err(TrainError::Diverged { epoch });
            }
            loss_sum += loss * chunk.len() as f64;
            correct += ok;
            let grads = backward(&stages, &weights, &fwd, &dlogits);
            let mom = cfg.bn_momentum;
            for (lw, stats) in weights.layers.iter_mut().zip(fwd.batch_stats()) {
                if let (Some(bn), Some((mean, var))) = (&mut lw.bn, stats) {
                    for c in 0..bn.mean.len() {
                        bn.mean[c] = mom * bn.mean[c] + (1.0 - mom) * mean[c];
                        bn.var[c] = mom * bn.var[c] + (1.0 - mom) * var[c];
                    }
                }
            }
            let flat = grads_flat(&grads, &weights);
            opt.step(&mut weights, &flat, lr, cfg.momentum);
        }
        let loss = loss_sum / data.len() as f64;
        if !loss.is_finite() || weights.layers.iter().any(|l| l.w.iter().any(|v| !v.is_finite())) {
            return Err(TrainError::Diverged { epoch });
        }
        let val_acc = match val {
            Some(v) => evaluate(net, &weights, v)?,
            None => f64::NAN,
        };
        history.push(EpochStats { epoch, loss, train_acc: correct as f64 / data.len() as f64, val_acc });
        lr *= cfg.lr_decay;
    }
    Ok(TrainResult { weights, history })
}

/// Fraction of argmax-correct predictions on the deployment path.
pub fn evaluate(net: &NetworkConfig, weights: &ShadowWeights, data: &Dataset) -> Result<f64, TrainError> {
    check_data(net, data)?;
    let deployed = weights.deploy(net)?;
    let mut correct = 0;
    for i in 0..data.len() {
        if deployed.predict(&data.input_bits(i))? == data.label(i) {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Inference-mode training-domain values of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateLayer {
    /// Pre-activation in `(y, x, channel)` order, bias included.
    pub pre: Vec<f64>,
    /// Binarized output before any pooling; empty for the output layer.
    pub bits: Vec<bool>,
}

/// Runs one `±1` sample through the training-domain network with running
/// batch-norm statistics.
pub fn surrogate_trace(
    net: &NetworkConfig,
    weights: &ShadowWeights,
    input: &[f64],
) -> Result<Vec<SurrogateLayer>, TrainError> {
    weights.check(net)?;
    let stages = plan(net)?;
    if input.len() != net.input.iter().product::<usize>() {
        return Err(TrainError::Shape(format!("input has {} values", input.len())));
    }
    let fwd = forward(&stages, weights, input, 1, Binarizer::Sign, BnMode::Running);
    let pres = fwd.pre_activations();
    let ys = fwd.normalized();
    Ok(pres
        .iter()
        .enumerate()
        .map(|(k, pre)| {
            let lw = &weights.layers[k];
            match lw.bn {
                Some(_) => SurrogateLayer { pre: pre.iter().copied().collect(), bits: ys[k].iter().map(|&v| v >= 0.0).collect() },
                None => SurrogateLayer {
                    pre: pre.indexed_iter().map(|((_, o), v)| v + lw.bias[o]).collect(),
                    bits: Vec::new(),
                },
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::binlayers::LayerConfig;
    use crate::dataset::Split;

    /// Two blobs: class 0 leans negative on the first half of the pixels,
    /// class 1 on the second half, with per-pixel noise.
    pub(crate) fn toy_set(n: usize, pixels: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut images = Vec::with_capacity(n * pixels);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let label = i % 2;
            for p in 0..pixels {
                let lean = if (p < pixels / 2) == (label == 0) { -0.4 } else { 0.4 };
                images.push((lean + rng.random_range(-0.8f32..0.8)).clamp(-1.0, 1.0));
            }
            labels.push(label);
        }
        Dataset::new([1, 1, pixels], images, labels, 2, Split::Train).unwrap()
    }

    fn tiny_mfc() -> NetworkConfig {
        NetworkConfig {
            input: [1, 1, 24],
            layers: vec![LayerConfig::fc(24, 16).with_majority(true), LayerConfig::fc(16, 2).with_majority(true)],
        }
    }

    #[test]
    fn smoke_tiny_mfc_learns_toy_set() {
        let data = toy_set(200, 24, 1);
        let net = tiny_mfc();
        let cfg = TrainConfig { epochs: 50, batch_size: 20, lr: 1e-2, seed: 5, ..Default::default() };
        let r = train(&net, &data, None, &cfg).unwrap();
        let acc = evaluate(&net, &r.weights, &data).unwrap();
        assert!(acc >= 0.95, "train accuracy {acc}");
        assert!(r.weights.max_abs_weight() <= 1.0);
    }

    #[test]
    fn loss_decreases_over_fifty_steps() {
        let data = toy_set(100, 24, 2);
        let net = NetworkConfig::mlp([1, 1, 24], &[16], 2);
        let cfg = TrainConfig { epochs: 50, batch_size: 100, lr: 1e-2, seed: 1, ..Default::default() };
        let r = train(&net, &data, None, &cfg).unwrap();
        let (first, last) = (r.history[0].loss, r.history[49].loss);
        assert!(last < first, "loss {first} -> {last}");
    }

    #[test]
    fn same_seed_same_weights() {
        let data = toy_set(60, 24, 3);
        let net = tiny_mfc();
        let cfg = TrainConfig { epochs: 3, batch_size: 16, seed: 9, ..Default::default() };
        let a = train(&net, &data, Some(&data), &cfg).unwrap();
        let b = train(&net, &data, Some(&data), &cfg).unwrap();
        assert_eq!(a, b);
        let c = train(&net, &data, None, &TrainConfig { seed: 10, ..cfg }).unwrap();
        assert_ne!(a.weights, c.weights);
    }

    #[test]
    fn sgd_keeps_weights_clipped() {
        let data = toy_set(40, 24, 4);
        let cfg = TrainConfig { epochs: 5, lr: 5.0, optimizer: Optimizer::SgdMomentum, ..Default::default() };
        let r = train(&tiny_mfc(), &data, None, &cfg).unwrap();
        assert!(r.weights.max_abs_weight() <= 1.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let data = toy_set(10, 24, 5);
        let net = tiny_mfc();
        let empty = data.slice(0..0, Split::Train);
        assert!(matches!(train(&net, &empty, None, &TrainConfig::default()), Err(TrainError::EmptyDataset)));
        let bad = TrainConfig { lr: 0.0, ..Default::default() };
        assert!(matches!(train(&net, &data, None, &bad), Err(TrainError::Config(_))));
        let wide = NetworkConfig::mlp([1, 1, 24], &[8], 3);
        assert!(matches!(train(&wide, &data, None, &TrainConfig::default()), Err(TrainError::Shape(_))));
        let w = ShadowWeights::init(&net, 0, 1e-4).unwrap();
        assert!(matches!(evaluate(&wide, &w, &data), Err(TrainError::Shape(_))));
    }

    #[test]
    fn divergence_names_the_epoch() {
        let data = toy_set(20, 24, 6);
        let cfg = TrainConfig { epochs: 2, lr: f64::MAX, optimizer: Optimizer::SgdMomentum, ..Default::default() };
        let r = train(&NetworkConfig::mlp([1, 1, 24], &[8], 2), &data, None, &cfg);
        assert!(matches!(r, Err(TrainError::Diverged { epoch: 1 | 2 })), "{r:?}");
    }

    #[test]
    fn history_csv_layout() {
        let h = [EpochStats { epoch: 1, loss: 0.5, train_acc: 0.5, val_acc: f64::NAN }];
        assert_eq!(history_csv(&h), "epoch,train_acc,val_acc\n1,0.500000,\n");
    }
}
