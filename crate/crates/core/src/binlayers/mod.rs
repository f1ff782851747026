//! Binary network layers and deployment inference.
//!
//! Binary feature maps are [`BitTensor`](crate::bitcore::BitTensor)s of shape
//! `(h, w, c)`. Convolutions use stride 1; padded convolutions read logic 0
//! outside the map. Majority convolutions group one kernel row within one
//! input channel, so the receptive field is flattened as
//! `(channel, kernel row, kernel column)` and every `kernel` consecutive bits
//! form one group.
//!
//! Hidden layers end in batch norm plus sign, folded into integer thresholds
//! on the accumulator count; the output layer returns raw scores.

mod config;
mod layers;
mod network;
mod threshold;

use thiserror::Error;

use crate::bitcore::BitError;

pub use config::{
    ConfigString, ConfigStringError, LayerConfig, LayerKind, LayerShape, NetworkConfig,
};
pub use layers::{
    conv_forward, fc_forward, layer_counts, maxpool_binary, mconv_forward, mconv_forward_packed,
    mfc_forward, pad_fc_input, receptive_field, BinaryWeights, CountMap, LayerAffine, RealMap,
};
pub use network::{argmax, forward_network, DeployedLayer, DeployedNetwork, LayerOutput};
pub use threshold::{
    fold_bn_to_threshold, threshold_activate, BnParams, ChannelThreshold, Direction,
    ThresholdParams,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LayerError {
    #[error(transparent)]
    Bit(#[from] BitError),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("layer {layer}: {reason}")]
    InvalidConfig { layer: usize, reason: String },
    #[error("layer {layer}: {source}")]
    AtLayer { layer: usize, source: Box<LayerError> },
    #[error("majority group size {m} must equal the kernel size {kernel}")]
    GroupSize { m: usize, kernel: usize },
    #[error("expected {expected} channels, got {got}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("invalid batch norm: {0}")]
    InvalidBn(String),
    #[error("cannot parse network description: {0}")]
    Parse(String),
}

impl LayerError {
    pub(crate) fn at_layer(self, layer: usize) -> Self {
        match self {
            e @ (LayerError::AtLayer { .. } | LayerError::InvalidConfig { .. }) => e,
            e => LayerError::AtLayer { layer, source: Box::new(e) },
        }
    }
}
