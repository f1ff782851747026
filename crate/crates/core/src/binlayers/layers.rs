use super::config::{LayerConfig, LayerKind};
use super::LayerError;
use crate::bitcore::{self, BitTensor, MajParams};

/// Binary weights of a conv/fc layer, one packed row per output channel.
///
/// Rows are laid out in group order: for a convolution the receptive field
/// is flattened as `(input channel, kernel row, kernel column)`, so each run
/// of `kernel` bits is one kernel row within one channel. Fully-connected
/// rows hold the padded input length, padding weights are logic 0.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryWeights {
    rows: Vec<BitTensor>,
}

impl BinaryWeights {
    pub fn new(rows: Vec<BitTensor>) -> Result<Self, LayerError> {
        let first = rows.first().ok_or_else(|| LayerError::Shape("no weight rows".into()))?;
        if rows.iter().any(|r| r.len() != first.len()) {
            return Err(LayerError::Shape("weight rows differ in length".into()));
        }
        Ok(BinaryWeights { rows })
    }

    /// Rows from a row-major `cout x fan_in` sign matrix (`> 0` is logic 1).
    pub fn from_signs(cout: usize, fan_in: usize, signs: &[f64]) -> Result<Self, LayerError> {
        if signs.len() != cout * fan_in {
            return Err(LayerError::Shape(format!(
                "expected {cout}x{fan_in} weights, got {}",
                signs.len()
            )));
        }
        let rows = signs
            .chunks(fan_in)
            .map(|row| {
                let bits: Vec<bool> = row.iter().map(|&v| v > 0.0).collect();
                BitTensor::from_bits(&bits, &[fan_in])
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(rows)
    }

    pub fn rows(&self) -> &[BitTensor] {
        &self.rows
    }

    pub fn cout(&self) -> usize {
        self.rows.len()
    }

    pub fn fan_in(&self) -> usize {
        self.rows[0].len()
    }

    /// Weight bit of a convolution at `(ky, kx, ci, co)`.
    pub fn conv_bit(&self, kernel: usize, ky: usize, kx: usize, ci: usize, co: usize) -> bool {
        self.rows[co].get((ci * kernel + ky) * kernel + kx)
    }

    /// Flips every weight.
    pub fn negated(&self) -> Self {
        BinaryWeights { rows: self.rows.iter().map(BitTensor::not).collect() }
    }
}

/// Real-valued feature map in `(h, w, c)` row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct RealMap {
    pub shape: [usize; 3],
    pub data: Vec<f64>,
}

impl RealMap {
    pub fn at(&self, y: usize, x: usize, c: usize) -> f64 {
        let [_, w, ch] = self.shape;
        self.data[(y * w + x) * ch + c]
    }
}

/// Integer accumulator map in `(h, w, c)` order: XNOR agreements for
/// XnorPopcount layers, majority-true groups for XNorMaj layers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountMap {
    pub shape: [usize; 3],
    pub data: Vec<u64>,
}

/// Maps an accumulator count `s` to the neuron pre-activation
/// `scale * s + offset + bias`.
///
/// `offset` is the bias-free constant of the neuron equation, so
/// `scale * s + offset` is exactly the `±1` dot product (or its majority
/// approximation) and the bias is added last.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerAffine {
    pub scale: f64,
    pub offset: f64,
    pub bias: f64,
}

impl LayerAffine {
    /// `2 s - N` for XnorPopcount, `2 (v1 - v0) s + 2 G v0 - N` for XNorMaj.
    pub fn for_layer(cfg: &LayerConfig, bias: f64) -> Self {
        let n = cfg.fan_in() as f64;
        match cfg.maj_params() {
            None => LayerAffine { scale: 2.0, offset: -n, bias },
            Some(p) => {
                let groups = (cfg.fan_in() / p.m()) as f64;
                LayerAffine { scale: 2.0 * p.scale(), offset: 2.0 * groups * p.v0() - n, bias }
            }
        }
    }

    #[inline]
    pub fn apply(&self, count: u64) -> f64 {
        self.scale * count as f64 + self.offset + self.bias
    }

    /// Largest count reachable by a neuron of this layer.
    pub fn max_count(cfg: &LayerConfig) -> u64 {
        match cfg.maj_params() {
            None => cfg.fan_in() as u64,
            Some(p) => (cfg.fan_in() / p.m()) as u64,
        }
    }
}

pub(crate) fn map_shape(t: &BitTensor) -> Result<[usize; 3], LayerError> {
    match *t.shape() {
        [h, w, c] => Ok([h, w, c]),
        [n] => Ok([1, 1, n]),
        ref s => Err(LayerError::Shape(format!("expected an (h, w, c) feature map, got {s:?}"))),
    }
}

fn output_dims(cfg: &LayerConfig, h: usize, w: usize) -> (usize, usize) {
    if cfg.pad {
        (h, w)
    } else {
        (h + 1 - cfg.kernel, w + 1 - cfg.kernel)
    }
}

fn check_conv(
    input: &BitTensor,
    weights: &BinaryWeights,
    bias: &[f64],
    cfg: &LayerConfig,
) -> Result<[usize; 3], LayerError> {
    if cfg.kind != LayerKind::Conv {
        return Err(LayerError::Shape("layer is not a convolution".into()));
    }
    let shape = map_shape(input)?;
    let [h, w, c] = shape;
    if c != cfg.cin {
        return Err(LayerError::Shape(format!("input has {c} channels, layer expects {}", cfg.cin)));
    }
    if !cfg.pad && (h < cfg.kernel || w < cfg.kernel) {
        return Err(LayerError::Shape(format!("{h}x{w} input is smaller than the kernel")));
    }
    if weights.cout() != cfg.cout || weights.fan_in() != cfg.fan_in() {
        return Err(LayerError::Shape(format!(
            "weights are {}x{}, layer expects {}x{}",
            weights.cout(),
            weights.fan_in(),
            cfg.cout,
            cfg.fan_in()
        )));
    }
    if bias.len() != cfg.cout {
        return Err(LayerError::Shape(format!("{} biases for {} channels", bias.len(), cfg.cout)));
    }
    Ok(shape)
}

/// Receptive field of output pixel `(oy, ox)` in group order. Padded
/// positions are logic 0.
pub fn receptive_field(
    input: &BitTensor,
    shape: [usize; 3],
    cfg: &LayerConfig,
    oy: usize,
    ox: usize,
) -> BitTensor {
    let [h, w, c] = shape;
    let k = cfg.kernel;
    let half = if cfg.pad { k / 2 } else { 0 };
    let mut field = BitTensor::zeros(&[c * k * k]).expect("non-empty field");
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let (iy, ix) = ((oy + ky).wrapping_sub(half), (ox + kx).wrapping_sub(half));
                if iy < h && ix < w && input.get((iy * w + ix) * c + ci) {
                    field.set((ci * k + ky) * k + kx, true);
                }
            }
        }
    }
    field
}

fn conv_map<F>(
    input: &BitTensor,
    shape: [usize; 3],
    cfg: &LayerConfig,
    weights: &BinaryWeights,
    mut neuron: F,
) -> Result<Vec<f64>, LayerError>
where
    F: FnMut(&BitTensor, &BitTensor, usize) -> Result<f64, LayerError>,
{
    let (oh, ow) = output_dims(cfg, shape[0], shape[1]);
    let mut data = Vec::with_capacity(oh * ow * cfg.cout);
    for oy in 0..oh {
        for ox in 0..ow {
            let field = receptive_field(input, shape, cfg, oy, ox);
            for (co, row) in weights.rows().iter().enumerate() {
                data.push(neuron(&field, row, co)?);
            }
        }
    }
    Ok(data)
}

/// Standard binary convolution (stride 1): the XnorPopcount value over each
/// receptive field plus the channel bias.
pub fn conv_forward(
    input: &BitTensor,
    weights: &BinaryWeights,
    bias: &[f64],
    cfg: &LayerConfig,
) -> Result<RealMap, LayerError> {
    let shape = check_conv(input, weights, bias, cfg)?;
    if cfg.majority {
        return Err(LayerError::Shape("conv_forward called on a majority layer".into()));
    }
    let data = conv_map(input, shape, cfg, weights, |f, r, co| {
        Ok(bitcore::xnor_popcount_neuron(f, r, bias[co])?)
    })?;
    let (oh, ow) = output_dims(cfg, shape[0], shape[1]);
    Ok(RealMap { shape: [oh, ow, cfg.cout], data })
}

fn majority_params(cfg: &LayerConfig) -> Result<MajParams, LayerError> {
    let p = cfg
        .maj_params()
        .ok_or_else(|| LayerError::Shape("layer is not a majority layer".into()))?;
    if cfg.kind == LayerKind::Conv && p.m() != cfg.kernel {
        return Err(LayerError::GroupSize { m: p.m(), kernel: cfg.kernel });
    }
    Ok(p)
}

/// Majority convolution evaluated in the training domain: for every
/// (channel, kernel row) group the `±1` dot product is clipped to `[-1, 1]`
/// and multiplied by `v1 - v0`, then the bias is added.
pub fn mconv_forward(
    input: &BitTensor,
    weights: &BinaryWeights,
    bias: &[f64],
    cfg: &LayerConfig,
) -> Result<RealMap, LayerError> {
    let shape = check_conv(input, weights, bias, cfg)?;
    let p = majority_params(cfg)?;
    let [h, w, c] = shape;
    let k = cfg.kernel;
    let half = if cfg.pad { k / 2 } else { 0 };
    let sign = |b: bool| if b { 1i64 } else { -1 };
    let (oh, ow) = output_dims(cfg, h, w);
    let mut data = Vec::with_capacity(oh * ow * cfg.cout);
    for oy in 0..oh {
        for ox in 0..ow {
            for co in 0..cfg.cout {
                let mut acc = 0.0;
                for ci in 0..c {
                    for ky in 0..k {
                        let mut dot = 0i64;
                        for kx in 0..k {
                            let (iy, ix) = ((oy + ky).wrapping_sub(half), (ox + kx).wrapping_sub(half));
                            let x = iy < h && ix < w && input.get((iy * w + ix) * c + ci);
                            dot += sign(x) * sign(weights.conv_bit(k, ky, kx, ci, co));
                        }
                        acc += dot.clamp(-1, 1) as f64 * p.scale();
                    }
                }
                data.push(acc + bias[co]);
            }
        }
    }
    Ok(RealMap { shape: [oh, ow, cfg.cout], data })
}

/// Majority convolution on packed bits: the XNorMaj neuron over each
/// group-ordered receptive field.
pub fn mconv_forward_packed(
    input: &BitTensor,
    weights: &BinaryWeights,
    bias: &[f64],
    cfg: &LayerConfig,
) -> Result<RealMap, LayerError> {
    let shape = check_conv(input, weights, bias, cfg)?;
    let p = majority_params(cfg)?;
    let data = conv_map(input, shape, cfg, weights, |f, r, co| {
        Ok(bitcore::xnormaj_neuron(f, r, &p, bias[co])?)
    })?;
    let (oh, ow) = output_dims(cfg, shape[0], shape[1]);
    Ok(RealMap { shape: [oh, ow, cfg.cout], data })
}

/// Pads a fully-connected input with logic-0 bits to the layer's fan-in.
pub fn pad_fc_input(x: &BitTensor, cfg: &LayerConfig) -> Result<BitTensor, LayerError> {
    if x.len() != cfg.cin {
        return Err(LayerError::Shape(format!("input has {} bits, layer expects {}", x.len(), cfg.cin)));
    }
    let n = cfg.fan_in();
    if n == x.len() {
        return x.clone().reshape(&[n]).map_err(Into::into);
    }
    let mut padded = BitTensor::zeros(&[n])?;
    for i in (0..x.len()).filter(|&i| x.get(i)) {
        padded.set(i, true);
    }
    Ok(padded)
}

fn check_fc(weights: &BinaryWeights, bias: &[f64], cfg: &LayerConfig) -> Result<(), LayerError> {
    if cfg.kind != LayerKind::Fc {
        return Err(LayerError::Shape("layer is not fully connected".into()));
    }
    if weights.cout() != cfg.cout || weights.fan_in() != cfg.fan_in() || bias.len() != cfg.cout {
        return Err(LayerError::Shape(format!(
            "weights {}x{} / {} biases do not match layer {}x{}",
            weights.cout(),
            weights.fan_in(),
            bias.len(),
            cfg.cout,
            cfg.fan_in()
        )));
    }
    Ok(())
}

/// Fully-connected XnorPopcount layer.
pub fn fc_forward(
    x: &BitTensor,
    weights: &BinaryWeights,
    bias: &[f64],
    cfg: &LayerConfig,
) -> Result<Vec<f64>, LayerError> {
    check_fc(weights, bias, cfg)?;
    if cfg.majority {
        return Err(LayerError::Shape("fc_forward called on a majority layer".into()));
    }
    let x = pad_fc_input(x, cfg)?;
    weights
        .rows()
        .iter()
        .zip(bias)
        .map(|(row, &b)| Ok(bitcore::xnor_popcount_neuron(&x, row, b)?))
        .collect()
}

/// Fully-connected XNorMaj layer over the padded input.
pub fn mfc_forward(
    x: &BitTensor,
    weights: &BinaryWeights,
    bias: &[f64],
    cfg: &LayerConfig,
) -> Result<Vec<f64>, LayerError> {
    check_fc(weights, bias, cfg)?;
    let p = majority_params(cfg)?;
    let x = pad_fc_input(x, cfg)?;
    weights
        .rows()
        .iter()
        .zip(bias)
        .map(|(row, &b)| Ok(bitcore::xnormaj_neuron(&x, row, &p, b)?))
        .collect()
}

/// Accumulator counts of a conv/fc layer on the deployment path.
pub fn layer_counts(
    input: &BitTensor,
    weights: &BinaryWeights,
    cfg: &LayerConfig,
) -> Result<CountMap, LayerError> {
    let count = |field: &BitTensor, row: &BitTensor| -> Result<u64, LayerError> {
        Ok(match cfg.maj_params() {
            None => bitcore::xnor_count(field, row)?,
            Some(p) => bitcore::majority_count(field, row, p.m())?,
        })
    };
    match cfg.kind {
        LayerKind::Conv => {
            let zeros = vec![0.0; cfg.cout];
            let shape = check_conv(input, weights, &zeros, cfg)?;
            if cfg.majority {
                majority_params(cfg)?;
            }
            let (oh, ow) = output_dims(cfg, shape[0], shape[1]);
            let mut data = Vec::with_capacity(oh * ow * cfg.cout);
            for oy in 0..oh {
                for ox in 0..ow {
                    let field = receptive_field(input, shape, cfg, oy, ox);
                    for row in weights.rows() {
                        data.push(count(&field, row)?);
                    }
                }
            }
            Ok(CountMap { shape: [oh, ow, cfg.cout], data })
        }
        LayerKind::Fc => {
            check_fc(weights, &vec![0.0; cfg.cout], cfg)?;
            let x = pad_fc_input(input, cfg)?;
            let data = weights.rows().iter().map(|row| count(&x, row)).collect::<Result<_, _>>()?;
            Ok(CountMap { shape: [1, 1, cfg.cout], data })
        }
        LayerKind::Maxpool => Err(LayerError::Shape("max-pool has no accumulator".into())),
    }
}

/// Binary max-pool: a window is `+1` iff any of its bits is set.
pub fn maxpool_binary(input: &BitTensor, window: usize) -> Result<BitTensor, LayerError> {
    let [h, w, c] = map_shape(input)?;
    if window == 0 || h % window != 0 || w % window != 0 {
        return Err(LayerError::Shape(format!("{h}x{w} map is not divisible by window {window}")));
    }
    let (oh, ow) = (h / window, w / window);
    let mut out = BitTensor::zeros(&[oh, ow, c])?;
    for oy in 0..oh {
        for ox in 0..ow {
            for ci in 0..c {
                let any = (0..window).any(|dy| {
                    (0..window).any(|dx| input.get(((oy * window + dy) * w + ox * window + dx) * c + ci))
                });
                if any {
                    out.set((oy * ow + ox) * c + ci, true);
                }
            }
        }
    }
    Ok(out)
}
