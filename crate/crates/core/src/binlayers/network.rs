use super::config::{LayerKind, NetworkConfig};
use super::layers::{layer_counts, map_shape, maxpool_binary, BinaryWeights, LayerAffine};
use super::threshold::{fold_bn_to_threshold, threshold_activate, BnParams, ThresholdParams};
use super::LayerError;
use crate::bitcore::BitTensor;

/// Parameters of one conv/fc layer ready for inference.
#[derive(Debug, Clone, PartialEq)]
pub struct DeployedLayer {
    pub weights: BinaryWeights,
    pub bias: Vec<f64>,
    /// Folded batch norm; `None` only for the output layer.
    pub threshold: Option<ThresholdParams>,
}

/// A network with binary weights and folded thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct DeployedNetwork {
    config: NetworkConfig,
    /// One entry per layer; `None` for max-pool layers.
    layers: Vec<Option<DeployedLayer>>,
}

/// Result of running one layer: either a binary map for the next layer or
/// the raw output scores.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerOutput {
    Bits(BitTensor),
    Scores(Vec<f64>),
}

impl DeployedNetwork {
    /// Folds each hidden layer's batch norm into thresholds.
    ///
    /// `params` has one entry per conv/fc layer: weights, bias and batch norm
    /// (required except on the last layer, where it must be `None`).
    pub fn new(
        config: NetworkConfig,
        params: Vec<(BinaryWeights, Vec<f64>, Option<BnParams>)>,
    ) -> Result<Self, LayerError> {
        config.shapes()?;
        let compute = config.compute_layers();
        if params.len() != compute.len() {
            return Err(LayerError::Shape(format!(
                "{} parameter sets for {} conv/fc layers",
                params.len(),
                compute.len()
            )));
        }
        let last = *compute.last().expect("validated network has a compute layer");
        let mut layers: Vec<Option<DeployedLayer>> = vec![None; config.layers.len()];
        for (&i, (weights, bias, bn)) in compute.iter().zip(params) {
            let cfg = &config.layers[i];
            let invalid = |reason: String| LayerError::InvalidConfig { layer: i, reason };
            if weights.cout() != cfg.cout || weights.fan_in() != cfg.fan_in() {
                return Err(invalid(format!(
                    "weights are {}x{}, expected {}x{}",
                    weights.cout(),
                    weights.fan_in(),
                    cfg.cout,
                    cfg.fan_in()
                )));
            }
            if bias.len() != cfg.cout {
                return Err(invalid(format!("{} biases for {} outputs", bias.len(), cfg.cout)));
            }
            let threshold = match (bn, i == last) {
                (None, true) => None,
                (Some(_), true) => return Err(invalid("the output layer takes no batch norm".into())),
                (None, false) => return Err(invalid("hidden layer is missing batch norm".into())),
                (Some(bn), false) => {
                    if bn.channels() != cfg.cout {
                        return Err(invalid(format!("batch norm has {} channels", bn.channels())));
                    }
                    let affine: Vec<LayerAffine> =
                        bias.iter().map(|&b| LayerAffine::for_layer(cfg, b)).collect();
                    Some(fold_bn_to_threshold(&bn, &affine)?)
                }
            };
            layers[i] = Some(DeployedLayer { weights, bias, threshold });
        }
        Ok(DeployedNetwork { config, layers })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn layer(&self, index: usize) -> Option<&DeployedLayer> {
        self.layers.get(index).and_then(Option::as_ref)
    }

    /// Output of every layer in order.
    pub fn forward_trace(&self, input: &BitTensor) -> Result<Vec<LayerOutput>, LayerError> {
        let expected = self.config.input;
        if map_shape(input)? != expected && input.len() != expected.iter().product::<usize>() {
            return Err(LayerError::Shape(format!(
                "input has shape {:?}, network expects {expected:?}",
                input.shape()
            )));
        }
        let mut cur = input.clone().reshape(&expected)?;
        let mut trace = Vec::with_capacity(self.layers.len());
        for (i, cfg) in self.config.layers.iter().enumerate() {
            let at = |e: LayerError| e.at_layer(i);
            if cfg.kind == LayerKind::Maxpool {
                cur = maxpool_binary(&cur, cfg.pool).map_err(at)?;
                trace.push(LayerOutput::Bits(cur.clone()));
                continue;
            }
            let layer = self.layers[i].as_ref().expect("compute layer has parameters");
            let x = if cfg.kind == LayerKind::Fc {
                cur.clone().reshape(&[cur.len()]).map_err(|e| at(e.into()))?
            } else {
                cur.clone()
            };
            let counts = layer_counts(&x, &layer.weights, cfg).map_err(at)?;
            match &layer.threshold {
                Some(t) => {
                    cur = threshold_activate(&counts, t).map_err(at)?;
                    trace.push(LayerOutput::Bits(cur.clone()));
                }
                None => {
                    let c = counts.shape[2];
                    let scores = counts
                        .data
                        .iter()
                        .enumerate()
                        .map(|(k, &s)| LayerAffine::for_layer(cfg, layer.bias[k % c]).apply(s))
                        .collect();
                    trace.push(LayerOutput::Scores(scores));
                }
            }
        }
        Ok(trace)
    }

    /// Raw output scores of the last layer.
    pub fn forward(&self, input: &BitTensor) -> Result<Vec<f64>, LayerError> {
        match self.forward_trace(input)?.pop() {
            Some(LayerOutput::Scores(s)) => Ok(s),
            _ => Err(LayerError::Shape("network produced no scores".into())),
        }
    }

    /// Index of the largest score; ties go to the lowest index.
    pub fn predict(&self, input: &BitTensor) -> Result<usize, LayerError> {
        Ok(argmax(&self.forward(input)?))
    }
}

pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Convenience wrapper over [`DeployedNetwork::forward`].
pub fn forward_network(net: &DeployedNetwork, input: &BitTensor) -> Result<Vec<f64>, LayerError> {
    net.forward(input)
}
