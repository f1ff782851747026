use serde::{Deserialize, Serialize};

use super::layers::{CountMap, LayerAffine};
use super::LayerError;
use crate::bitcore::BitTensor;

/// Per-channel batch-norm parameters in inference form:
/// `y = gamma * (x - mu) * inv_std + beta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnParams {
    pub gamma: Vec<f64>,
    pub mu: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub beta: Vec<f64>,
}

impl BnParams {
    pub fn new(gamma: Vec<f64>, mu: Vec<f64>, inv_std: Vec<f64>, beta: Vec<f64>) -> Result<Self, LayerError> {
        let n = gamma.len();
        if mu.len() != n || inv_std.len() != n || beta.len() != n {
            return Err(LayerError::ChannelMismatch { expected: n, got: mu.len().min(inv_std.len()).min(beta.len()) });
        }
        if let Some(c) = inv_std.iter().position(|&i| !(i > 0.0) || !i.is_finite()) {
            return Err(LayerError::InvalidBn(format!("inv_std of channel {c} is {}", inv_std[c])));
        }
        Ok(BnParams { gamma, mu, inv_std, beta })
    }

    pub fn identity(channels: usize) -> Self {
        BnParams {
            gamma: vec![1.0; channels],
            mu: vec![0.0; channels],
            inv_std: vec![1.0; channels],
            beta: vec![0.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    #[inline]
    pub fn apply(&self, channel: usize, x: f64) -> f64 {
        self.gamma[channel] * (x - self.mu[channel]) * self.inv_std[channel] + self.beta[channel]
    }

    /// Reference activation: bit 1 iff the normalized value is `>= 0`.
    #[inline]
    pub fn decide(&self, channel: usize, x: f64) -> bool {
        self.apply(channel, x) >= 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// Bit is 1 iff `count >= threshold`.
    AtLeast,
    /// Bit is 1 iff `count <= threshold`.
    AtMost,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelThreshold {
    pub threshold: i64,
    pub direction: Direction,
}

impl ChannelThreshold {
    #[inline]
    pub fn fire(&self, count: u64) -> bool {
        let s = count as i64;
        match self.direction {
            Direction::AtLeast => s >= self.threshold,
            Direction::AtMost => s <= self.threshold,
        }
    }
}

/// Batch norm and sign activation merged into integer comparisons on the
/// accumulator count.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdParams {
    pub bn: BnParams,
    pub affine: Vec<LayerAffine>,
    pub channels: Vec<ChannelThreshold>,
}

/// Folds batch norm over pre-activation `affine.apply(s)` into thresholds on `s`.
///
/// The result agrees with `bn.decide(c, affine[c].apply(s))` for every
/// integer `s >= 0`: the real-valued crossing point is only a starting
/// guess, and the threshold is then moved until the floating-point
/// decision itself changes across it. That decision is monotone in `s`
/// because every floating-point step in it is monotone.
pub fn fold_bn_to_threshold(bn: &BnParams, affine: &[LayerAffine]) -> Result<ThresholdParams, LayerError> {
    if affine.len() != bn.channels() {
        return Err(LayerError::ChannelMismatch { expected: bn.channels(), got: affine.len() });
    }
    let mut channels = Vec::with_capacity(bn.channels());
    for (c, a) in affine.iter().enumerate() {
        if a.scale == 0.0 || !a.scale.is_finite() {
            return Err(LayerError::InvalidBn(format!("channel {c}: affine scale must be nonzero")));
        }
        if !(bn.inv_std[c] > 0.0) {
            return Err(LayerError::InvalidBn(format!("channel {c}: inv_std must be positive")));
        }
        channels.push(fold_channel(bn, c, a));
    }
    Ok(ThresholdParams { bn: bn.clone(), affine: affine.to_vec(), channels })
}

fn fold_channel(bn: &BnParams, c: usize, a: &LayerAffine) -> ChannelThreshold {
    let fires = |s: i64| bn.decide(c, a.scale * s as f64 + a.offset + a.bias);
    let slope = bn.gamma[c] * a.scale;
    if slope == 0.0 {
        // constant decision
        let threshold = if fires(0) { i64::MIN } else { i64::MAX };
        return ChannelThreshold { threshold, direction: Direction::AtLeast };
    }
    // gamma * i * (a s + off + b - mu) + beta >= 0
    let root = -(bn.beta[c] / (bn.gamma[c] * bn.inv_std[c]) + a.offset + a.bias - bn.mu[c]) / a.scale;
    const LIMIT: f64 = (1i64 << 52) as f64;
    let guess = root.clamp(-LIMIT, LIMIT);
    if slope > 0.0 {
        // smallest s with fires(s)
        let mut t = guess.ceil() as i64;
        if guess >= LIMIT || guess <= -LIMIT {
            return ChannelThreshold { threshold: t, direction: Direction::AtLeast };
        }
        while fires(t - 1) {
            t -= 1;
        }
        while !fires(t) {
            t += 1;
        }
        ChannelThreshold { threshold: t, direction: Direction::AtLeast }
    } else {
        // largest s with fires(s)
        let mut t = guess.floor() as i64;
        if guess >= LIMIT || guess <= -LIMIT {
            return ChannelThreshold { threshold: t, direction: Direction::AtMost };
        }
        while fires(t + 1) {
            t += 1;
        }
        while !fires(t) {
            t -= 1;
        }
        ChannelThreshold { threshold: t, direction: Direction::AtMost }
    }
}

/// Applies per-channel thresholds to an accumulator map.
pub fn threshold_activate(counts: &CountMap, t: &ThresholdParams) -> Result<BitTensor, LayerError> {
    let c = counts.shape[2];
    if c != t.channels.len() {
        return Err(LayerError::ChannelMismatch { expected: t.channels.len(), got: c });
    }
    let bits: Vec<bool> = counts
        .data
        .iter()
        .enumerate()
        .map(|(i, &s)| t.channels[i % c].fire(s))
        .collect();
    Ok(BitTensor::from_bits(&bits, &counts.shape)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_affine() -> LayerAffine {
        LayerAffine { scale: 1.0, offset: 0.0, bias: 0.0 }
    }

    #[test]
    fn identity_bn_thresholds_at_zero() {
        let t = fold_bn_to_threshold(&BnParams::identity(1), &[unit_affine()]).unwrap();
        assert_eq!(t.channels[0], ChannelThreshold { threshold: 0, direction: Direction::AtLeast });
    }

    #[test]
    fn negative_gamma_flips_direction() {
        let mut bn = BnParams::identity(1);
        bn.gamma[0] = -1.0;
        let t = fold_bn_to_threshold(&bn, &[unit_affine()]).unwrap();
        assert_eq!(t.channels[0], ChannelThreshold { threshold: 0, direction: Direction::AtMost });
    }

    #[test]
    fn zero_gamma_is_constant() {
        let mut bn = BnParams::identity(2);
        bn.gamma = vec![0.0, 0.0];
        bn.beta = vec![0.5, -0.5];
        let t = fold_bn_to_threshold(&bn, &[unit_affine(); 2]).unwrap();
        assert!((0..100).all(|s| t.channels[0].fire(s)));
        assert!((0..100).all(|s| !t.channels[1].fire(s)));
    }

    #[test]
    fn activation_examples() {
        // counts laid out as pre-activation -2, 0, 5 under the unit affine
        let counts = CountMap { shape: [1, 1, 3], data: vec![0, 2, 7] };
        let a = LayerAffine { scale: 1.0, offset: -2.0, bias: 0.0 };
        let t = fold_bn_to_threshold(&BnParams::identity(3), &[a; 3]).unwrap();
        let bits = threshold_activate(&counts, &t).unwrap();
        assert_eq!(bits.to_bits(), vec![false, true, true]);
        let low = CountMap { shape: [1, 1, 3], data: vec![0, 1, 0] };
        assert_eq!(threshold_activate(&low, &t).unwrap().count_ones(), 0);
        let wrong = CountMap { shape: [1, 1, 2], data: vec![0, 0] };
        assert!(threshold_activate(&wrong, &t).is_err());
    }

    #[test]
    fn rejects_degenerate_inputs() {
        let bad = BnParams::new(vec![1.0], vec![0.0], vec![0.0], vec![0.0]);
        assert!(matches!(bad, Err(LayerError::InvalidBn(_))));
        let zero = LayerAffine { scale: 0.0, offset: 0.0, bias: 0.0 };
        assert!(fold_bn_to_threshold(&BnParams::identity(1), &[zero]).is_err());
    }
}
