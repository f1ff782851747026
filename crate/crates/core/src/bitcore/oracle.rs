//! Per-bit reference implementations of the packed kernels.
//!
//! These read bits one at a time through [`BitTensor::get`] and never touch
//! storage words, so they share no code path with the word-level kernels.

use super::{check_group_size, BitError, BitTensor, MajParams};

fn check_len(a: &BitTensor, b: &BitTensor) -> Result<(), BitError> {
    if a.len() != b.len() {
        return Err(BitError::LengthMismatch { left: a.len(), right: b.len() });
    }
    Ok(())
}

pub fn oracle_xnor(a: &BitTensor, b: &BitTensor) -> Result<BitTensor, BitError> {
    check_len(a, b)?;
    let bits: Vec<bool> = (0..a.len()).map(|i| a.get(i) == b.get(i)).collect();
    BitTensor::from_bits(&bits, a.shape())
}

pub fn oracle_popcount(t: &BitTensor) -> u64 {
    let mut n = 0;
    for i in 0..t.len() {
        if t.get(i) {
            n += 1;
        }
    }
    n
}

pub fn oracle_maj_reduce(t: &BitTensor, m: usize) -> Result<BitTensor, BitError> {
    check_group_size(m)?;
    if t.len() % m != 0 {
        return Err(BitError::NotDivisible { len: t.len(), m });
    }
    let mut out = Vec::with_capacity(t.len() / m);
    for g in 0..t.len() / m {
        let ones = (0..m).filter(|&k| t.get(g * m + k)).count();
        // ones >= m/2 in real arithmetic
        out.push(2 * ones >= m);
    }
    BitTensor::from_bits(&out, &[out.len()])
}

/// Plain `±1` dot product plus bias.
pub fn oracle_xnor_popcount_neuron(
    x: &BitTensor,
    w: &BitTensor,
    bias: f64,
) -> Result<f64, BitError> {
    check_len(x, w)?;
    let sign = |b: bool| if b { 1i64 } else { -1 };
    let dot: i64 = (0..x.len()).map(|i| sign(x.get(i)) * sign(w.get(i))).sum();
    Ok(dot as f64 + bias)
}

/// Evaluates `2 * sum_g (maj_g * (v1 - v0) + v0) - N + bias` one group at a time.
pub fn oracle_xnormaj_neuron(
    x: &BitTensor,
    w: &BitTensor,
    p: &MajParams,
    bias: f64,
) -> Result<f64, BitError> {
    check_len(x, w)?;
    let m = p.m();
    check_group_size(m)?;
    let n = x.len();
    if n % m != 0 {
        return Err(BitError::NotDivisible { len: n, m });
    }
    let mut sum = 0.0;
    for g in 0..n / m {
        let agree = (0..m).filter(|&k| x.get(g * m + k) == w.get(g * m + k)).count();
        let maj = if 2 * agree >= m { 1.0 } else { 0.0 };
        sum += maj * (p.v1() - p.v0()) + p.v0();
    }
    Ok(2.0 * sum - n as f64 + bias)
}
