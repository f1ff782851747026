//! Batched training-domain network.
//!
//! Every conv/fc layer is a matrix product over patch rows: a convolution's
//! rows are its receptive fields in `(ci, ky, kx)` order, padded with `-1`;
//! a fully-connected layer has one row per sample, padded with `-1` up to
//! its fan-in. Majority layers sum `scale * clip(t, -1, 1)` over groups of
//! `m` consecutive columns instead of the plain dot product, which equals
//! the deployed `V1`/`V0` value whenever `V1 + V0 = m`.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::ste::{sign, ste_pass};
use super::{LayerWeights, Loss, ShadowWeights, TrainError};
use crate::binlayers::{LayerKind, NetworkConfig};
use crate::bitcore::MajParams;

/// How latent values are turned into layer inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Binarizer {
    /// `sign` forward, straight-through backward.
    Sign,
    /// `clip(v, -1, 1)` forward. With this choice the straight-through
    /// gradients are the exact gradients of the network.
    HardTanh,
}

impl Binarizer {
    #[inline]
    fn apply(self, v: f64) -> f64 {
        match self {
            Binarizer::Sign => sign(v),
            Binarizer::HardTanh => v.clamp(-1.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum BnMode {
    /// Normalize with the statistics of the batch.
    Batch,
    /// Normalize with the running averages, exactly as deployed.
    Running,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ComputeStage {
    pub slot: usize,
    pub kind: LayerKind,
    pub in_shape: [usize; 3],
    pub out_shape: [usize; 3],
    pub kernel: usize,
    pub pad: bool,
    pub cin: usize,
    pub cout: usize,
    pub fan_in: usize,
    pub maj: Option<MajParams>,
    pub last: bool,
}

impl ComputeStage {
    /// Whether weight column `j` only ever sees padding.
    pub fn is_pad_column(&self, j: usize) -> bool {
        self.kind == LayerKind::Fc && j >= self.cin
    }

    /// Scale applied to the output scores before the loss.
    pub fn logit_scale(&self) -> f64 {
        1.0 / (self.fan_in as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Stage {
    Compute(ComputeStage),
    Pool { in_shape: [usize; 3], out_shape: [usize; 3], window: usize },
}

pub(crate) fn plan(net: &NetworkConfig) -> Result<Vec<Stage>, TrainError> {
    let shapes = net.shapes()?;
    let last = *net.compute_layers().last().expect("validated network has compute layers");
    let mut slot = 0;
    let mut stages = Vec::with_capacity(shapes.len());
    for (i, (cfg, shape)) in net.layers.iter().zip(&shapes).enumerate() {
        if cfg.kind == LayerKind::Maxpool {
            stages.push(Stage::Pool { in_shape: shape.input, out_shape: shape.output, window: cfg.pool });
            continue;
        }
        if i == last && shape.output[0] * shape.output[1] != 1 {
            return Err(TrainError::Shape("the output layer must produce a 1x1 map".into()));
        }
        stages.push(Stage::Compute(ComputeStage {
            slot,
            kind: cfg.kind,
            in_shape: shape.input,
            out_shape: shape.output,
            kernel: cfg.kernel,
            pad: cfg.pad,
            cin: cfg.cin,
            cout: cfg.cout,
            fan_in: cfg.fan_in(),
            maj: cfg.maj_params(),
            last: i == last,
        }));
        slot += 1;
    }
    Ok(stages)
}

pub(crate) fn compute_stages(stages: &[Stage]) -> impl Iterator<Item = &ComputeStage> {
    stages.iter().filter_map(|s| match s {
        Stage::Compute(c) => Some(c),
        Stage::Pool { .. } => None,
    })
}

/// Patch matrix: one row per output pixel, `fan_in` columns.
fn im2col(act: &[f64], st: &ComputeStage, batch: usize) -> Array2<f64> {
    let [h, w, c] = st.in_shape;
    let in_len = h * w * c;
    match st.kind {
        LayerKind::Fc => {
            let mut p = Array2::from_elem((batch, st.fan_in), -1.0);
            for b in 0..batch {
                let src = &act[b * in_len..(b + 1) * in_len];
                p.row_mut(b).as_slice_mut().unwrap()[..in_len].copy_from_slice(src);
            }
            p
        }
        _ => {
            let k = st.kernel;
            let half = if st.pad { k / 2 } else { 0 };
            let [oh, ow, _] = st.out_shape;
            let mut p = Array2::from_elem((batch * oh * ow, st.fan_in), -1.0);
            for b in 0..batch {
                let src = &act[b * in_len..(b + 1) * in_len];
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut row = p.row_mut((b * oh + oy) * ow + ox);
                        let row = row.as_slice_mut().unwrap();
                        for ci in 0..c {
                            for ky in 0..k {
                                let iy = (oy + ky).wrapping_sub(half);
                                if iy >= h {
                                    continue;
                                }
                                for kx in 0..k {
                                    let ix = (ox + kx).wrapping_sub(half);
                                    if ix < w {
                                        row[(ci * k + ky) * k + kx] = src[(iy * w + ix) * c + ci];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            p
        }
    }
}

/// Adjoint of [`im2col`], dropping padding.
fn col2im(dp: &Array2<f64>, st: &ComputeStage, batch: usize) -> Vec<f64> {
    let [h, w, c] = st.in_shape;
    let in_len = h * w * c;
    let mut out = vec![0.0; batch * in_len];
    match st.kind {
        LayerKind::Fc => {
            for b in 0..batch {
                out[b * in_len..(b + 1) * in_len].copy_from_slice(&dp.row(b).as_slice().unwrap()[..in_len]);
            }
        }
        _ => {
            let k = st.kernel;
            let half = if st.pad { k / 2 } else { 0 };
            let [oh, ow, _] = st.out_shape;
            for b in 0..batch {
                let dst = &mut out[b * in_len..(b + 1) * in_len];
                for oy in 0..oh {
                    for ox in 0..ow {
                        let row = dp.row((b * oh + oy) * ow + ox);
                        let row = row.as_slice().unwrap();
                        for ci in 0..c {
                            for ky in 0..k {
                                let iy = (oy + ky).wrapping_sub(half);
                                if iy >= h {
                                    continue;
                                }
                                for kx in 0..k {
                                    let ix = (ox + kx).wrapping_sub(half);
                                    if ix < w {
                                        dst[(iy * w + ix) * c + ci] += row[(ci * k + ky) * k + kx];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Majority pre-activations and the clip pass-through mask, laid out
/// `[row][group][out]`.
fn majority_forward(p: &Array2<f64>, wt: &Array2<f64>, mp: &MajParams) -> (Array2<f64>, Vec<bool>) {
    let (rows, k) = p.dim();
    let cout = wt.ncols();
    let (m, scale) = (mp.m(), mp.scale());
    let groups = k / m;
    let mut pre = Array2::zeros((rows, cout));
    let mut mask = vec![false; rows * groups * cout];
    let mut t = vec![0.0; cout];
    let wt = wt.as_slice().unwrap();
    for r in 0..rows {
        let prow = p.row(r);
        let prow = prow.as_slice().unwrap();
        let mut out = pre.row_mut(r);
        let out = out.as_slice_mut().unwrap();
        for g in 0..groups {
            t.iter_mut().for_each(|v| *v = 0.0);
            for j in g * m..(g + 1) * m {
                let x = prow[j];
                for (tv, &wv) in t.iter_mut().zip(&wt[j * cout..(j + 1) * cout]) {
                    *tv += x * wv;
                }
            }
            let mrow = &mut mask[(r * groups + g) * cout..(r * groups + g + 1) * cout];
            for ((o, &tv), mv) in out.iter_mut().zip(&t).zip(mrow) {
                *mv = ste_pass(tv);
                *o += scale * tv.clamp(-1.0, 1.0);
            }
        }
    }
    (pre, mask)
}

/// Gradients of [`majority_forward`]: `(d patches, d weights^T)`.
fn majority_backward(
    dpre: &Array2<f64>,
    p: &Array2<f64>,
    wt: &Array2<f64>,
    mask: &[bool],
    mp: &MajParams,
) -> (Array2<f64>, Array2<f64>) {
    let (rows, k) = p.dim();
    let cout = wt.ncols();
    let (m, scale) = (mp.m(), mp.scale());
    let groups = k / m;
    let mut dp = Array2::zeros((rows, k));
    let mut dwt = Array2::<f64>::zeros((k, cout));
    let mut dz = vec![0.0; cout];
    let wt = wt.as_slice().unwrap();
    let dwt_s = dwt.as_slice_mut().unwrap();
    for r in 0..rows {
        let prow = p.row(r);
        let prow = prow.as_slice().unwrap();
        let drow = dpre.row(r);
        let drow = drow.as_slice().unwrap();
        let mut dprow = dp.row_mut(r);
        let dprow = dprow.as_slice_mut().unwrap();
        for g in 0..groups {
            let mrow = &mask[(r * groups + g) * cout..(r * groups + g + 1) * cout];
            let mut any = false;
            for ((d, &g_out), &pass) in dz.iter_mut().zip(drow).zip(mrow) {
                *d = if pass { g_out * scale } else { 0.0 };
                any |= pass;
            }
            if !any {
                continue;
            }
            for j in g * m..(g + 1) * m {
                let x = prow[j];
                let wrow = &wt[j * cout..(j + 1) * cout];
                let mut acc = 0.0;
                for (&d, &wv) in dz.iter().zip(wrow) {
                    acc += d * wv;
                }
                dprow[j] = acc;
                for (dw, &d) in dwt_s[j * cout..(j + 1) * cout].iter_mut().zip(&dz) {
                    *dw += d * x;
                }
            }
        }
    }
    (dp, dwt)
}

#[derive(Debug, Clone)]
struct BnCache {
    xhat: Array2<f64>,
    inv_std: Vec<f64>,
    mean: Vec<f64>,
    var: Vec<f64>,
}

#[derive(Debug, Clone)]
struct ComputeCache {
    p: Array2<f64>,
    wb: Array2<f64>,
    mask: Vec<bool>,
    pre: Array2<f64>,
    bn: Option<BnCache>,
    /// Post-norm values feeding the activation.
    y: Vec<f64>,
    /// Inverted-dropout multipliers applied to the layer input.
    drop: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
enum Cache {
    Compute(ComputeCache),
    Pool { argmax: Vec<usize>, in_len: usize },
}

/// Result of a batched forward pass.
#[derive(Debug, Clone)]
pub(crate) struct Forward {
    /// Scaled output scores, one row per sample.
    pub logits: Array2<f64>,
    caches: Vec<Cache>,
    batch: usize,
}

impl Forward {
    /// Batch mean and variance of every normalized layer, by slot.
    pub fn batch_stats(&self) -> Vec<Option<(&[f64], &[f64])>> {
        self.caches
            .iter()
            .filter_map(|c| match c {
                Cache::Compute(cc) => Some(cc.bn.as_ref().map(|b| (b.mean.as_slice(), b.var.as_slice()))),
                Cache::Pool { .. } => None,
            })
            .collect()
    }

    /// Every branch decision taken by the pass. Two parameter settings with
    /// the same signature lie on the same smooth piece of the loss.
    pub fn signature(&self) -> (Vec<bool>, Vec<usize>) {
        let mut bits = Vec::new();
        let mut idx = Vec::new();
        for c in &self.caches {
            match c {
                Cache::Compute(cc) => {
                    bits.extend_from_slice(&cc.mask);
                    bits.extend(cc.y.iter().map(|&v| ste_pass(v)));
                    bits.extend(cc.wb.iter().map(|&v| v.abs() < 1.0));
                }
                Cache::Pool { argmax, .. } => idx.extend_from_slice(argmax),
            }
        }
        (bits, idx)
    }

    /// Pre-activations of every conv/fc layer, `[row][out]` with rows in
    /// `(sample, y, x)` order.
    pub fn pre_activations(&self) -> Vec<&Array2<f64>> {
        self.caches
            .iter()
            .filter_map(|c| match c {
                Cache::Compute(cc) => Some(&cc.pre),
                Cache::Pool { .. } => None,
            })
            .collect()
    }

    /// Post-norm values of every hidden layer.
    pub fn normalized(&self) -> Vec<&[f64]> {
        self.caches
            .iter()
            .filter_map(|c| match c {
                Cache::Compute(cc) if !cc.y.is_empty() => Some(cc.y.as_slice()),
                _ => None,
            })
            .collect()
    }
}

fn binarize_weights(lw: &LayerWeights, binarizer: Binarizer) -> Array2<f64> {
    Array2::from_shape_fn((lw.cout, lw.fan_in), |(o, j)| binarizer.apply(lw.w[o * lw.fan_in + j]))
}

/// Training-time dropout on the inputs of every conv/fc layer: rate
/// `input` before the first layer and `hidden` before the others.
pub(crate) struct Dropout<'a> {
    pub rng: &'a mut ChaCha8Rng,
    pub input: f64,
    pub hidden: f64,
}

impl Dropout<'_> {
    fn mask(&mut self, first: bool, len: usize) -> Option<Vec<f64>> {
        let rate = if first { self.input } else { self.hidden };
        if rate <= 0.0 {
            return None;
        }
        let keep = 1.0 / (1.0 - rate);
        Some((0..len).map(|_| if self.rng.random::<f64>() < rate { 0.0 } else { keep }).collect())
    }
}

pub(crate) fn forward(
    stages: &[Stage],
    weights: &ShadowWeights,
    input: &[f64],
    batch: usize,
    binarizer: Binarizer,
    bn_mode: BnMode,
) -> Forward {
    forward_with_dropout(stages, weights, input, batch, binarizer, bn_mode, None)
}

pub(crate) fn forward_with_dropout(
    stages: &[Stage],
    weights: &ShadowWeights,
    input: &[f64],
    batch: usize,
    binarizer: Binarizer,
    bn_mode: BnMode,
    mut dropout: Option<Dropout<'_>>,
) -> Forward {
    let mut act = input.to_vec();
    let mut caches = Vec::with_capacity(stages.len());
    let mut logits = None;
    for stage in stages {
        match stage {
            Stage::Pool { in_shape, out_shape, window } => {
                let [h, w, c] = *in_shape;
                let [oh, ow, _] = *out_shape;
                let (in_len, out_len) = (h * w * c, oh * ow * c);
                let mut out = vec![0.0; batch * out_len];
                let mut argmax = vec![0; batch * out_len];
                for b in 0..batch {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            for ci in 0..c {
                                let mut best = usize::MAX;
                                for dy in 0..*window {
                                    for dx in 0..*window {
                                        let i = b * in_len + ((oy * window + dy) * w + ox * window + dx) * c + ci;
                                        if best == usize::MAX || act[i] > act[best] {
                                            best = i;
                                        }
                                    }
                                }
                                let o = b * out_len + (oy * ow + ox) * c + ci;
                                out[o] = act[best];
                                argmax[o] = best;
                            }
                        }
                    }
                }
                act = out;
                caches.push(Cache::Pool { argmax, in_len });
            }
            Stage::Compute(st) => {
                let lw = &weights.layers[st.slot];
                let drop = dropout.as_mut().and_then(|d| d.mask(st.slot == 0, act.len()));
                if let Some(m) = &drop {
                    act.iter_mut().zip(m).for_each(|(a, k)| *a *= k);
                }
                let p = im2col(&act, st, batch);
                let wb = binarize_weights(lw, binarizer);
                let (pre, mask) = match &st.maj {
                    None => (p.dot(&wb.t()), Vec::new()),
                    Some(mp) => majority_forward(&p, &wb.t().as_standard_layout().to_owned(), mp),
                };
                let rows = pre.nrows();
                if st.last {
                    let a = st.logit_scale();
                    let out = Array2::from_shape_fn((batch, st.cout), |(b, o)| a * (pre[(b, o)] + lw.bias[o]));
                    logits = Some(out);
                    caches.push(Cache::Compute(ComputeCache { p, wb, mask, pre, bn: None, y: Vec::new(), drop }));
                    continue;
                }
                let state = lw.bn.as_ref().expect("hidden layers carry batch norm");
                let mut y = vec![0.0; rows * st.cout];
                let bn = match bn_mode {
                    BnMode::Running => {
                        let params = state.inference();
                        for r in 0..rows {
                            for o in 0..st.cout {
                                y[r * st.cout + o] = params.apply(o, pre[(r, o)]);
                            }
                        }
                        None
                    }
                    BnMode::Batch => {
                        let n = rows as f64;
                        let mean: Vec<f64> = (0..st.cout).map(|o| pre.column(o).sum() / n).collect();
                        let var: Vec<f64> = (0..st.cout)
                            .map(|o| pre.column(o).iter().map(|v| (v - mean[o]).powi(2)).sum::<f64>() / n)
                            .collect();
                        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + state.eps).sqrt()).collect();
                        let xhat = Array2::from_shape_fn((rows, st.cout), |(r, o)| (pre[(r, o)] - mean[o]) * inv_std[o]);
                        for r in 0..rows {
                            for o in 0..st.cout {
                                y[r * st.cout + o] = state.gamma[o] * xhat[(r, o)] + state.beta[o];
                            }
                        }
                        Some(BnCache { xhat, inv_std, mean, var })
                    }
                };
                act = y.iter().map(|&v| binarizer.apply(v)).collect();
                caches.push(Cache::Compute(ComputeCache { p, wb, mask, pre, bn, y, drop }));
            }
        }
    }
    Forward { logits: logits.expect("network ends in a compute layer"), caches, batch }
}

/// Gradients with the same layout as [`ShadowWeights`].
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LayerGrads {
    pub w: Vec<f64>,
    pub bias: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

pub(crate) fn backward(
    stages: &[Stage],
    weights: &ShadowWeights,
    fwd: &Forward,
    dlogits: &Array2<f64>,
) -> Vec<LayerGrads> {
    let batch = fwd.batch;
    let mut grads: Vec<Option<LayerGrads>> = vec![None; weights.layers.len()];
    let mut dact: Vec<f64> = Vec::new();
    for (si, (stage, cache)) in stages.iter().zip(&fwd.caches).enumerate().rev() {
        match (stage, cache) {
            (Stage::Pool { .. }, Cache::Pool { argmax, in_len }) => {
                let mut din = vec![0.0; batch * in_len];
                for (&src, &d) in argmax.iter().zip(&dact) {
                    din[src] += d;
                }
                dact = din;
            }
            (Stage::Compute(st), Cache::Compute(cc)) => {
                let lw = &weights.layers[st.slot];
                let rows = cc.pre.nrows();
                let mut g = LayerGrads { w: Vec::new(), bias: vec![0.0; st.cout], gamma: Vec::new(), beta: Vec::new() };
                let dpre = if st.last {
                    let a = st.logit_scale();
                    let dpre = dlogits.mapv(|v| a * v);
                    for o in 0..st.cout {
                        g.bias[o] = dpre.column(o).sum();
                    }
                    dpre
                } else {
                    let state = lw.bn.as_ref().expect("hidden layers carry batch norm");
                    let bn = cc.bn.as_ref().expect("backward needs batch statistics");
                    let dy = Array2::from_shape_fn((rows, st.cout), |(r, o)| {
                        let i = r * st.cout + o;
                        if ste_pass(cc.y[i]) {
                            dact[i]
                        } else {
                            0.0
                        }
                    });
                    let n = rows as f64;
                    g.gamma = (0..st.cout).map(|o| (&dy.column(o) * &bn.xhat.column(o)).sum()).collect();
                    g.beta = (0..st.cout).map(|o| dy.column(o).sum()).collect();
                    let mut dpre = Array2::zeros((rows, st.cout));
                    for o in 0..st.cout {
                        let gm = state.gamma[o];
                        let (sum_dx, sum_dx_xhat) = (gm * g.beta[o], gm * g.gamma[o]);
                        for r in 0..rows {
                            let dxhat = dy[(r, o)] * gm;
                            dpre[(r, o)] =
                                bn.inv_std[o] / n * (n * dxhat - sum_dx - bn.xhat[(r, o)] * sum_dx_xhat);
                        }
                    }
                    dpre
                };
                let (dp, dwb) = match &st.maj {
                    None => (dpre.dot(&cc.wb), dpre.t().dot(&cc.p)),
                    Some(mp) => {
                        let wt = cc.wb.t().as_standard_layout().to_owned();
                        let (dp, dwt) = majority_backward(&dpre, &cc.p, &wt, &cc.mask, mp);
                        (dp, dwt.t().as_standard_layout().to_owned())
                    }
                };
                g.w = vec![0.0; lw.w.len()];
                for o in 0..st.cout {
                    for j in 0..st.fan_in {
                        let i = o * st.fan_in + j;
                        if !st.is_pad_column(j) && ste_pass(lw.w[i]) {
                            g.w[i] = dwb[(o, j)];
                        }
                    }
                }
                grads[st.slot] = Some(g);
                if si > 0 {
                    dact = col2im(&dp, st, batch);
                    if let Some(m) = &cc.drop {
                        dact.iter_mut().zip(m).for_each(|(d, k)| *d *= k);
                    }
                }
            }
            _ => unreachable!("caches follow the stage list"),
        }
    }
    grads.into_iter().map(|g| g.expect("every layer visited")).collect()
}

/// Loss, its gradient with respect to the logits and the number of correct
/// argmax predictions.
pub(crate) fn loss_grad(logits: &Array2<f64>, labels: &[usize], loss: Loss) -> (f64, Array2<f64>, usize) {
    let (batch, classes) = logits.dim();
    let mut grad = Array2::zeros((batch, classes));
    let mut total = 0.0;
    let mut correct = 0;
    for (b, &label) in labels.iter().enumerate() {
        let row = logits.row(b);
        if crate::binlayers::argmax(row.as_slice().unwrap()) == label {
            correct += 1;
        }
        match loss {
            Loss::SquaredHinge => {
                let norm = (batch * classes) as f64;
                for c in 0..classes {
                    let t = if c == label { 1.0 } else { -1.0 };
                    let margin = 1.0 - t * row[c];
                    if margin > 0.0 {
                        total += margin * margin / norm;
                        grad[(b, c)] = -2.0 * t * margin / norm;
                    }
                }
            }
            Loss::CrossEntropy => {
                let max = row.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
                let z: f64 = row.iter().map(|&v| (v - max).exp()).sum();
                total += (z.ln() + max - row[label]) / batch as f64;
                for c in 0..classes {
                    let p = (row[c] - max).exp() / z;
                    grad[(b, c)] = (p - if c == label { 1.0 } else { 0.0 }) / batch as f64;
                }
            }
        }
    }
    (total, grad, correct)
}
