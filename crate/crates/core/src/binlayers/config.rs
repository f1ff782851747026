use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::LayerError;
use crate::bitcore::MajParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv,
    Fc,
    Maxpool,
}

fn one() -> usize {
    1
}

fn two() -> usize {
    2
}

fn is_false(b: &bool) -> bool {
    !*b
}

/// One layer of a network description.
///
/// For convolutions `cin`/`cout` are channel counts and `kernel` is the odd
/// spatial size; for fully-connected layers `cin`/`cout` are vector lengths.
/// Max-pool layers only use `pool`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerConfig {
    pub kind: LayerKind,
    #[serde(default)]
    pub cin: usize,
    #[serde(default)]
    pub cout: usize,
    #[serde(default = "one")]
    pub kernel: usize,
    #[serde(default, skip_serializing_if = "is_false")]
    pub pad: bool,
    #[serde(default = "two")]
    pub pool: usize,
    #[serde(default = "one")]
    pub ff: usize,
    #[serde(default)]
    pub majority: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub maj: Option<MajParams>,
}

impl LayerConfig {
    pub fn conv(cin: usize, cout: usize, kernel: usize, pad: bool) -> Self {
        LayerConfig {
            kind: LayerKind::Conv,
            cin,
            cout,
            kernel,
            pad,
            pool: 2,
            ff: 1,
            majority: false,
            maj: None,
        }
    }

    pub fn fc(cin: usize, cout: usize) -> Self {
        LayerConfig { kind: LayerKind::Fc, kernel: 1, ..Self::conv(cin, cout, 1, false) }
    }

    pub fn maxpool(pool: usize) -> Self {
        LayerConfig { kind: LayerKind::Maxpool, pool, ..Self::conv(0, 0, 1, false) }
    }

    pub fn with_majority(mut self, majority: bool) -> Self {
        self.majority = majority;
        self
    }

    pub fn with_ff(mut self, ff: usize) -> Self {
        self.ff = ff;
        self
    }

    pub fn is_compute(&self) -> bool {
        self.kind != LayerKind::Maxpool
    }

    /// Majority parameters in effect; `None` for XnorPopcount layers.
    ///
    /// Without explicit parameters a convolution groups one kernel row
    /// (`m = kernel`) and a fully-connected layer uses `m = 3`.
    pub fn maj_params(&self) -> Option<MajParams> {
        if !self.majority || !self.is_compute() {
            return None;
        }
        Some(self.maj.unwrap_or_else(|| {
            let m = if self.kind == LayerKind::Conv { self.kernel } else { 3 };
            MajParams::for_group(m).unwrap_or_default()
        }))
    }

    /// Fully-connected input length after padding to a whole number of groups.
    pub fn padded_cin(&self) -> usize {
        match (self.kind, self.maj_params()) {
            (LayerKind::Fc, Some(p)) => self.cin.div_ceil(p.m()) * p.m(),
            _ => self.cin,
        }
    }

    /// Input pairs per output neuron.
    pub fn fan_in(&self) -> usize {
        match self.kind {
            LayerKind::Conv => self.cin * self.kernel * self.kernel,
            LayerKind::Fc => self.padded_cin(),
            LayerKind::Maxpool => 0,
        }
    }

    pub(crate) fn validate(&self, index: usize) -> Result<(), LayerError> {
        let bad = |reason: String| Err(LayerError::InvalidConfig { layer: index, reason });
        if self.ff == 0 {
            return bad("folding factor must be at least 1".into());
        }
        match self.kind {
            LayerKind::Maxpool => {
                if self.pool == 0 {
                    return bad("pool window must be at least 1".into());
                }
            }
            kind => {
                if self.cin == 0 || self.cout == 0 {
                    return bad("cin and cout must be positive".into());
                }
                if kind == LayerKind::Conv && self.kernel % 2 == 0 {
                    return bad(format!("kernel size {} is not odd", self.kernel));
                }
                if let Some(p) = self.maj.filter(|_| self.majority) {
                    if kind == LayerKind::Conv && p.m() != self.kernel {
                        return bad(format!(
                            "majority group size {} must equal the kernel size {}",
                            p.m(),
                            self.kernel
                        ));
                    }
                }
                if kind == LayerKind::Conv && self.majority && self.kernel < 3 {
                    return bad("majority convolution needs a kernel of at least 3".into());
                }
            }
        }
        Ok(())
    }
}

/// Input and output geometry `[h, w, c]` of one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub input: [usize; 3],
    pub output: [usize; 3],
}

/// A network: input geometry `[h, w, c]` and its layer sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input: [usize; 3],
    #[serde(rename = "layer")]
    pub layers: Vec<LayerConfig>,
}

impl NetworkConfig {
    pub fn from_toml(text: &str) -> Result<Self, LayerError> {
        let net: NetworkConfig =
            toml::from_str(text).map_err(|e| LayerError::Parse(e.to_string()))?;
        net.shapes()?;
        Ok(net)
    }

    pub fn load(path: &Path) -> Result<Self, LayerError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LayerError::Parse(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("network config serializes")
    }

    /// Padded CNV: six 3x3 convolutions with 2x2 pooling after every second
    /// one, then FC 4096-512-512-10. Folding factors follow the pooling rule.
    pub fn cnv_p() -> Self {
        let conv = |cin, cout| LayerConfig::conv(cin, cout, 3, true);
        let net = NetworkConfig {
            input: [32, 32, 3],
            layers: vec![
                conv(3, 64),
                conv(64, 64),
                LayerConfig::maxpool(2),
                conv(64, 128),
                conv(128, 128),
                LayerConfig::maxpool(2),
                conv(128, 256),
                conv(256, 256),
                LayerConfig::maxpool(2),
                LayerConfig::fc(4096, 512),
                LayerConfig::fc(512, 512),
                LayerConfig::fc(512, 10),
            ],
        };
        net.with_derived_folding()
    }

    /// Fully-connected network over a flattened `[h, w, c]` input.
    pub fn mlp(input: [usize; 3], hidden: &[usize], classes: usize) -> Self {
        let mut widths = vec![input.iter().product::<usize>()];
        widths.extend_from_slice(hidden);
        widths.push(classes);
        let layers = widths.windows(2).map(|w| LayerConfig::fc(w[0], w[1])).collect();
        NetworkConfig { input, layers }
    }

    /// Checks the layer chain and returns every layer's geometry.
    pub fn shapes(&self) -> Result<Vec<LayerShape>, LayerError> {
        if self.input.contains(&0) {
            return Err(LayerError::Parse(format!("input shape {:?} has a zero dimension", self.input)));
        }
        match self.layers.last() {
            None => return Err(LayerError::Parse("network has no layers".into())),
            Some(l) if !l.is_compute() => {
                return Err(LayerError::InvalidConfig {
                    layer: self.layers.len() - 1,
                    reason: "the last layer must be conv or fc".into(),
                })
            }
            _ => {}
        }
        let mut cur = self.input;
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            layer.validate(i)?;
            let [h, w, c] = cur;
            let mismatch = |reason: String| LayerError::InvalidConfig { layer: i, reason };
            let next = match layer.kind {
                LayerKind::Conv => {
                    if c != layer.cin {
                        return Err(mismatch(format!("expects {} input channels, got {c}", layer.cin)));
                    }
                    if layer.pad {
                        [h, w, layer.cout]
                    } else if h < layer.kernel || w < layer.kernel {
                        return Err(mismatch(format!(
                            "{h}x{w} input is smaller than the {}x{} kernel",
                            layer.kernel, layer.kernel
                        )));
                    } else {
                        [h - layer.kernel + 1, w - layer.kernel + 1, layer.cout]
                    }
                }
                LayerKind::Fc => {
                    if h * w * c != layer.cin {
                        return Err(mismatch(format!(
                            "expects {} inputs, previous layer produces {}",
                            layer.cin,
                            h * w * c
                        )));
                    }
                    [1, 1, layer.cout]
                }
                LayerKind::Maxpool => {
                    if h % layer.pool != 0 || w % layer.pool != 0 {
                        return Err(mismatch(format!(
                            "{h}x{w} map is not divisible by pool window {}",
                            layer.pool
                        )));
                    }
                    [h / layer.pool, w / layer.pool, c]
                }
            };
            out.push(LayerShape { input: cur, output: next });
            cur = next;
        }
        Ok(out)
    }

    pub fn output_len(&self) -> Result<usize, LayerError> {
        Ok(self.shapes()?.last().map(|s| s.output.iter().product()).unwrap_or(0))
    }

    /// Indices of conv/fc layers.
    pub fn compute_layers(&self) -> Vec<usize> {
        (0..self.layers.len()).filter(|&i| self.layers[i].is_compute()).collect()
    }

    /// CNV-shaped networks have six convolutions followed by three FC layers.
    pub fn is_cnv_shaped(&self) -> bool {
        let kinds: Vec<LayerKind> =
            self.compute_layers().iter().map(|&i| self.layers[i].kind).collect();
        kinds.len() == 9
            && kinds[..6].iter().all(|&k| k == LayerKind::Conv)
            && kinds[6..].iter().all(|&k| k == LayerKind::Fc)
    }

    /// Layers a configuration string addresses: Conv2-6 and FC1 for
    /// CNV-shaped networks, every conv/fc layer otherwise.
    pub fn eligible_layers(&self) -> Vec<usize> {
        let compute = self.compute_layers();
        if self.is_cnv_shaped() {
            compute[1..7].to_vec()
        } else {
            compute
        }
    }

    fn eligible_split(&self) -> (usize, usize) {
        let eligible = self.eligible_layers();
        let convs = eligible.iter().filter(|&&i| self.layers[i].kind == LayerKind::Conv).count();
        (convs, eligible.len() - convs)
    }

    pub fn parse_config(&self, s: &str) -> Result<ConfigString, ConfigStringError> {
        let (convs, fcs) = self.eligible_split();
        ConfigString::parse(s, convs, fcs)
    }

    /// Current B/M assignment of the eligible layers.
    pub fn config_string(&self) -> ConfigString {
        let (convs, _) = self.eligible_split();
        let flags: Vec<bool> = self.eligible_layers().iter().map(|&i| self.layers[i].majority).collect();
        ConfigString { conv: flags[..convs].to_vec(), fc: flags[convs..].to_vec() }
    }

    /// Applies a configuration: eligible layers take the given flags and all
    /// other layers become XnorPopcount layers.
    pub fn with_config(&self, cfg: &ConfigString) -> Result<Self, ConfigStringError> {
        let (convs, fcs) = self.eligible_split();
        if cfg.conv.len() != convs || cfg.fc.len() != fcs {
            return Err(ConfigStringError::Length {
                expected: ConfigString::expected_len(convs, fcs),
                got: cfg.to_string().chars().count(),
            });
        }
        let mut net = self.clone();
        net.layers.iter_mut().for_each(|l| l.majority = false);
        for (&i, &flag) in self.eligible_layers().iter().zip(cfg.flags().iter()) {
            net.layers[i].majority = flag;
        }
        Ok(net)
    }

    /// Folding factors from the pooling rule: a layer after a `p x p` pool is
    /// folded `p^2` times more than the one before it, and never more than
    /// its output channel count.
    pub fn with_derived_folding(mut self) -> Self {
        let mut running = 1usize;
        for layer in &mut self.layers {
            match layer.kind {
                LayerKind::Maxpool => {
                    running *= layer.pool * layer.pool;
                    layer.ff = 1;
                }
                _ => layer.ff = running.min(layer.cout).max(1),
            }
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigStringError {
    #[error("invalid character '{ch}' at position {pos}: expected 'B' or 'M'")]
    BadChar { ch: char, pos: usize },
    #[error("configuration string must have {expected} characters, got {got}")]
    Length { expected: usize, got: usize },
    #[error("configuration string needs '+' at position {pos}")]
    MissingSeparator { pos: usize },
}

/// B/M assignment: one character per eligible conv layer, a `+`, then one
/// per eligible fc layer (e.g. `BBMBM+M`). The `+` is omitted when either
/// side is empty.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ConfigString {
    conv: Vec<bool>,
    fc: Vec<bool>,
}

impl ConfigString {
    pub fn new(conv: Vec<bool>, fc: Vec<bool>) -> Self {
        ConfigString { conv, fc }
    }

    fn expected_len(convs: usize, fcs: usize) -> usize {
        convs + fcs + usize::from(convs > 0 && fcs > 0)
    }

    pub fn parse(s: &str, convs: usize, fcs: usize) -> Result<Self, ConfigStringError> {
        let chars: Vec<char> = s.chars().collect();
        let sep = (convs > 0 && fcs > 0).then_some(convs);
        for (pos, &ch) in chars.iter().enumerate() {
            let ok = ch == 'B' || ch == 'M' || (ch == '+' && sep == Some(pos));
            if !ok {
                if ch == '+' && sep.is_some() {
                    return Err(ConfigStringError::MissingSeparator { pos: convs });
                }
                return Err(ConfigStringError::BadChar { ch, pos });
            }
        }
        let expected = Self::expected_len(convs, fcs);
        if chars.len() != expected {
            return Err(ConfigStringError::Length { expected, got: chars.len() });
        }
        if let Some(pos) = sep {
            if chars[pos] != '+' {
                return Err(ConfigStringError::MissingSeparator { pos });
            }
        }
        let flag = |c: &char| *c == 'M';
        let conv = chars[..convs].iter().map(flag).collect();
        let fc = chars[chars.len() - fcs..].iter().map(flag).collect();
        Ok(ConfigString { conv, fc })
    }

    /// The five-conv, one-fc notation used for CNV-shaped networks.
    pub fn parse_cnv(s: &str) -> Result<Self, ConfigStringError> {
        Self::parse(s, 5, 1)
    }

    pub fn conv_flags(&self) -> &[bool] {
        &self.conv
    }

    pub fn fc_flags(&self) -> &[bool] {
        &self.fc
    }

    pub fn flags(&self) -> Vec<bool> {
        self.conv.iter().chain(&self.fc).copied().collect()
    }

    /// Every assignment over `convs` conv and `fcs` fc layers, in binary
    /// counting order with `B` as 0 and the leftmost character most
    /// significant.
    pub fn enumerate(convs: usize, fcs: usize) -> Vec<ConfigString> {
        let n = convs + fcs;
        (0u64..1 << n)
            .map(|code| {
                let flags: Vec<bool> = (0..n).map(|k| (code >> (n - 1 - k)) & 1 == 1).collect();
                ConfigString { conv: flags[..convs].to_vec(), fc: flags[convs..].to_vec() }
            })
            .collect()
    }
}

impl fmt::Display for ConfigString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ch = |b: &bool| if *b { 'M' } else { 'B' };
        let conv: String = self.conv.iter().map(ch).collect();
        let fc: String = self.fc.iter().map(ch).collect();
        if !conv.is_empty() && !fc.is_empty() {
            write!(f, "{conv}+{fc}")
        } else {
            write!(f, "{conv}{fc}")
        }
    }
}
