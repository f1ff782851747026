//! Packed binary tensors and the neuron kernels built on them.
//!
//! Two neurons are provided:
//!
//! * [`xnor_popcount_neuron`], the exact binarized dot product
//!   `2 * popcount(xnor(x, w)) - N + B`;
//! * [`xnormaj_neuron`], the approximate variant where every run of `m` XNOR
//!   bits is compressed to one majority bit, which is then scaled by
//!   `V1` (majority true) or `V0` (majority false).
//!
//! Every packed kernel has a per-bit counterpart in [`oracle`].

pub mod oracle;
mod tensor;

use thiserror::Error;

pub use tensor::{BitTensor, WORD_BITS};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BitError {
    #[error("shape mismatch: expected {expected} elements, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("value at index {index} is zero and has no sign")]
    ZeroValue { index: usize },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("length {len} is not divisible by group size {m}")]
    NotDivisible { len: usize, m: usize },
    #[error("group size must be odd and at least 3, got {0}")]
    InvalidGroupSize(usize),
    #[error("majority scales must satisfy v1 > v0 (got v1={v1}, v0={v0})")]
    InvalidScales { v1: f64, v0: f64 },
    #[error("tensors must have at least one element")]
    EmptyTensor,
    #[error("padding bits past the logical length are set")]
    NonCanonical,
    #[error("malformed serialized tensor: {0}")]
    Serialization(String),
}

/// Majority group size and output scales.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "RawMajParams")]
pub struct MajParams {
    m: usize,
    v1: f64,
    v0: f64,
}

impl MajParams {
    /// Fixed scales used for majority-3 layers.
    pub const V1_DEFAULT: f64 = 2.625;
    pub const V0_DEFAULT: f64 = 0.375;

    pub fn new(m: usize, v1: f64, v0: f64) -> Result<Self, BitError> {
        check_group_size(m)?;
        if !(v1 > v0) || !v1.is_finite() || !v0.is_finite() {
            return Err(BitError::InvalidScales { v1, v0 });
        }
        Ok(MajParams { m, v1, v0 })
    }

    /// Default scales for group size `m`.
    ///
    /// For `m = 3` these are `V1 = 2.625`, `V0 = 0.375`. Larger groups keep the
    /// ratio `V0 / m` and the sum `V1 + V0 = m`, so the per-group constant term
    /// still cancels.
    pub fn for_group(m: usize) -> Result<Self, BitError> {
        check_group_size(m)?;
        let v0 = Self::V0_DEFAULT * m as f64 / 3.0;
        Self::new(m, m as f64 - v0, v0)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn v1(&self) -> f64 {
        self.v1
    }

    pub fn v0(&self) -> f64 {
        self.v0
    }

    /// Training-domain scale `V1 - V0` applied to a clipped group dot product.
    pub fn scale(&self) -> f64 {
        self.v1 - self.v0
    }

    /// True when `V1 + V0 == m`, i.e. each group contributes exactly
    /// `scale * sign(group dot)`.
    pub fn cancels_constant(&self) -> bool {
        self.v1 + self.v0 == self.m as f64
    }
}

#[derive(serde::Deserialize)]
struct RawMajParams {
    m: usize,
    v1: f64,
    v0: f64,
}

impl TryFrom<RawMajParams> for MajParams {
    type Error = BitError;

    fn try_from(raw: RawMajParams) -> Result<Self, BitError> {
        MajParams::new(raw.m, raw.v1, raw.v0)
    }
}

impl Default for MajParams {
    fn default() -> Self {
        MajParams { m: 3, v1: Self::V1_DEFAULT, v0: Self::V0_DEFAULT }
    }
}

pub(crate) fn check_group_size(m: usize) -> Result<(), BitError> {
    if m < 3 || m % 2 == 0 {
        Err(BitError::InvalidGroupSize(m))
    } else {
        Ok(())
    }
}

fn check_same_len(a: &BitTensor, b: &BitTensor) -> Result<(), BitError> {
    if a.len() != b.len() {
        Err(BitError::LengthMismatch { left: a.len(), right: b.len() })
    } else {
        Ok(())
    }
}

/// Elementwise XNOR; the output sign is the product of the input signs.
pub fn xnor(a: &BitTensor, b: &BitTensor) -> Result<BitTensor, BitError> {
    check_same_len(a, b)?;
    let mut out = a.clone();
    for (o, &w) in out.words_mut().iter_mut().zip(b.words()) {
        *o = !(*o ^ w);
    }
    out.canonicalize();
    Ok(out)
}

pub fn popcount(t: &BitTensor) -> u64 {
    t.count_ones()
}

/// Number of positions where `x` and `w` agree, without materializing the
/// XNOR tensor.
pub fn xnor_count(x: &BitTensor, w: &BitTensor) -> Result<u64, BitError> {
    check_same_len(x, w)?;
    let full = x.len() / WORD_BITS;
    let mut count: u64 = x.words()[..full]
        .iter()
        .zip(&w.words()[..full])
        .map(|(a, b)| (!(a ^ b)).count_ones() as u64)
        .sum();
    let rem = x.len() % WORD_BITS;
    if rem != 0 {
        let mask = (1u64 << rem) - 1;
        count += (!(x.words()[full] ^ w.words()[full]) & mask).count_ones() as u64;
    }
    Ok(count)
}

/// Exact binarized neuron: `2 * popcount(xnor(x, w)) - N + bias`.
pub fn xnor_popcount_neuron(x: &BitTensor, w: &BitTensor, bias: f64) -> Result<f64, BitError> {
    let agree = xnor_count(x, w)? as i64;
    let n = x.len() as i64;
    Ok((2 * agree - n) as f64 + bias)
}

/// Compresses each consecutive run of `m` bits to its majority bit.
pub fn maj_reduce(t: &BitTensor, m: usize) -> Result<BitTensor, BitError> {
    check_group_size(m)?;
    if t.len() % m != 0 {
        return Err(BitError::NotDivisible { len: t.len(), m });
    }
    let groups = t.len() / m;
    let need = m.div_ceil(2) as u32;
    let mut out = BitTensor::zeros(&[groups])?;
    for (g, word) in (0..groups).map(|g| (g, g / WORD_BITS)) {
        if t.count_range(g * m, m) >= need {
            out.words_mut()[word] |= 1 << (g % WORD_BITS);
        }
    }
    Ok(out)
}

/// Number of majority-true groups of `xnor(x, w)`.
pub fn majority_count(x: &BitTensor, w: &BitTensor, m: usize) -> Result<u64, BitError> {
    let z = xnor(x, w)?;
    Ok(maj_reduce(&z, m)?.count_ones())
}

/// Approximate neuron:
/// `2 * sum_g (maj_g * (v1 - v0) + v0) - N + bias` over the `N / m` groups.
pub fn xnormaj_neuron(
    x: &BitTensor,
    w: &BitTensor,
    p: &MajParams,
    bias: f64,
) -> Result<f64, BitError> {
    let n = x.len();
    let trues = majority_count(x, w, p.m())?;
    let groups = (n / p.m()) as f64;
    let group_sum = trues as f64 * p.scale() + groups * p.v0();
    Ok(2.0 * group_sum - n as f64 + bias)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bits(s: &str) -> BitTensor {
        let b: Vec<bool> = s.chars().map(|c| c == '1').collect();
        BitTensor::from_bits(&b, &[b.len()]).unwrap()
    }

    #[test]
    fn xnor_truth_table() {
        assert_eq!(xnor(&bits("1100"), &bits("1010")).unwrap(), bits("1001"));
        let a = bits("10110");
        assert_eq!(xnor(&a, &a).unwrap(), BitTensor::ones(&[5]).unwrap());
        assert!(matches!(
            xnor(&bits("10"), &bits("101")),
            Err(BitError::LengthMismatch { left: 2, right: 3 })
        ));
    }

    #[test]
    fn popcount_examples() {
        assert_eq!(popcount(&bits("1001")), 2);
        assert_eq!(popcount(&BitTensor::ones(&[65]).unwrap()), 65);
    }

    #[test]
    fn popcount_neuron_extremes() {
        let x = bits("1011");
        assert_eq!(xnor_popcount_neuron(&x, &x, 0.0).unwrap(), 4.0);
        assert_eq!(xnor_popcount_neuron(&x, &x.not(), 0.0).unwrap(), -4.0);
    }

    #[test]
    fn majority_three() {
        assert_eq!(maj_reduce(&bits("110"), 3).unwrap(), bits("1"));
        assert_eq!(maj_reduce(&bits("100"), 3).unwrap(), bits("0"));
        assert_eq!(maj_reduce(&bits("011100"), 3).unwrap(), bits("10"));
    }

    #[test]
    fn maj_reduce_rejects_bad_groups() {
        assert_eq!(maj_reduce(&bits("1100"), 4), Err(BitError::InvalidGroupSize(4)));
        assert_eq!(maj_reduce(&bits("11"), 1), Err(BitError::InvalidGroupSize(1)));
        assert_eq!(maj_reduce(&bits("1100"), 3), Err(BitError::NotDivisible { len: 4, m: 3 }));
    }

    #[test]
    fn xnormaj_fixed_scale_values() {
        let p = MajParams::default();
        let x = bits("101");
        assert_eq!(xnormaj_neuron(&x, &x, &p, 0.0).unwrap(), 2.25);
        assert_eq!(xnormaj_neuron(&x, &x.not(), &p, 0.0).unwrap(), -2.25);
        assert_eq!(xnormaj_neuron(&x, &x, &p, 1.5).unwrap(), 3.75);
    }

    #[test]
    fn maj_params_validation() {
        assert!(MajParams::new(3, 2.625, 0.375).unwrap().cancels_constant());
        assert_eq!(MajParams::default().scale(), 2.25);
        assert_eq!(MajParams::new(2, 2.0, 0.0), Err(BitError::InvalidGroupSize(2)));
        assert!(matches!(MajParams::new(3, 0.3, 0.4), Err(BitError::InvalidScales { .. })));
        let p5 = MajParams::for_group(5).unwrap();
        assert!(p5.cancels_constant());
        assert_eq!(p5.v0(), 0.625);
        assert_eq!(MajParams::for_group(3).unwrap(), MajParams::default());
    }
}
