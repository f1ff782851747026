use std::io::{self, Read, Write};

use super::BitError;

/// Number of logical bits held by one storage word.
pub const WORD_BITS: usize = 64;

/// Packed binary tensor.
///
/// Bit `1` encodes `+1`, bit `0` encodes `-1`. Bits are stored in row-major
/// logical order, little-endian within each 64-bit word (logical bit `i` is bit
/// `i % 64` of word `i / 64`). Padding bits past `len` in the last word are
/// always zero.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BitTensor {
    shape: Vec<usize>,
    words: Vec<u64>,
    len: usize,
}

#[inline]
pub(crate) fn words_for(len: usize) -> usize {
    len.div_ceil(WORD_BITS)
}

/// Mask of the valid bits in the final word of a `len`-bit tensor.
#[inline]
fn tail_mask(len: usize) -> u64 {
    match len % WORD_BITS {
        0 => u64::MAX,
        r => (1u64 << r) - 1,
    }
}

fn shape_len(shape: &[usize]) -> Result<usize, BitError> {
    let len = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
    match len {
        Some(0) | None => Err(BitError::EmptyTensor),
        Some(_) if shape.is_empty() => Err(BitError::EmptyTensor),
        Some(n) => Ok(n),
    }
}

impl BitTensor {
    /// All-zero (all `-1`) tensor.
    pub fn zeros(shape: &[usize]) -> Result<Self, BitError> {
        let len = shape_len(shape)?;
        Ok(BitTensor { shape: shape.to_vec(), words: vec![0; words_for(len)], len })
    }

    /// All-one (all `+1`) tensor.
    pub fn ones(shape: &[usize]) -> Result<Self, BitError> {
        let mut t = Self::zeros(shape)?;
        t.words.iter_mut().for_each(|w| *w = u64::MAX);
        t.canonicalize();
        Ok(t)
    }

    /// Packs signs of real values: bit `i` is set iff `values[i] > 0`.
    ///
    /// Exact zeros have no sign and are rejected; binarize them first.
    pub fn pack(values: &[f64], shape: &[usize]) -> Result<Self, BitError> {
        let len = shape_len(shape)?;
        if len != values.len() {
            return Err(BitError::ShapeMismatch { expected: len, got: values.len() });
        }
        let mut t = Self::zeros(shape)?;
        for (i, &v) in values.iter().enumerate() {
            if v == 0.0 || v.is_nan() {
                return Err(BitError::ZeroValue { index: i });
            }
            if v > 0.0 {
                t.words[i / WORD_BITS] |= 1 << (i % WORD_BITS);
            }
        }
        Ok(t)
    }

    pub fn from_bits(bits: &[bool], shape: &[usize]) -> Result<Self, BitError> {
        let len = shape_len(shape)?;
        if len != bits.len() {
            return Err(BitError::ShapeMismatch { expected: len, got: bits.len() });
        }
        let mut t = Self::zeros(shape)?;
        for (i, _) in bits.iter().enumerate().filter(|(_, &b)| b) {
            t.words[i / WORD_BITS] |= 1 << (i % WORD_BITS);
        }
        Ok(t)
    }

    /// Builds a tensor from raw storage words. Non-canonical padding is rejected.
    pub fn from_words(shape: &[usize], words: Vec<u64>) -> Result<Self, BitError> {
        let len = shape_len(shape)?;
        if words.len() != words_for(len) {
            return Err(BitError::ShapeMismatch { expected: words_for(len), got: words.len() });
        }
        if words[words.len() - 1] & !tail_mask(len) != 0 {
            return Err(BitError::NonCanonical);
        }
        Ok(BitTensor { shape: shape.to_vec(), words, len })
    }

    /// Decodes to `±1` reals: element `i` is `2 * bit(i) - 1`.
    pub fn unpack(&self) -> Vec<f64> {
        (0..self.len).map(|i| if self.get(i) { 1.0 } else { -1.0 }).collect()
    }

    pub fn to_bits(&self) -> Vec<bool> {
        (0..self.len).map(|i| self.get(i)).collect()
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit index {i} out of range for length {}", self.len);
        (self.words[i / WORD_BITS] >> (i % WORD_BITS)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, bit: bool) {
        assert!(i < self.len, "bit index {i} out of range for length {}", self.len);
        let mask = 1u64 << (i % WORD_BITS);
        if bit {
            self.words[i / WORD_BITS] |= mask;
        } else {
            self.words[i / WORD_BITS] &= !mask;
        }
    }

    #[inline]
    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    /// Same bits under a new shape with the same element count.
    pub fn reshape(mut self, shape: &[usize]) -> Result<Self, BitError> {
        let len = shape_len(shape)?;
        if len != self.len {
            return Err(BitError::ShapeMismatch { expected: self.len, got: len });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Bitwise complement (negation of every `±1` value).
    pub fn not(&self) -> Self {
        let mut out = self.clone();
        out.words.iter_mut().for_each(|w| *w = !*w);
        out.canonicalize();
        out
    }

    /// Number of set bits among the `len` logical bits.
    pub fn count_ones(&self) -> u64 {
        self.words.iter().map(|w| w.count_ones() as u64).sum()
    }

    /// Number of set bits in the logical range `start..start + count`.
    pub fn count_range(&self, start: usize, count: usize) -> u32 {
        assert!(start + count <= self.len);
        let mut total = 0;
        let mut pos = start;
        let end = start + count;
        while pos < end {
            let word = pos / WORD_BITS;
            let offset = pos % WORD_BITS;
            let take = (WORD_BITS - offset).min(end - pos);
            let mask = if take == WORD_BITS { u64::MAX } else { ((1u64 << take) - 1) << offset };
            total += (self.words[word] & mask).count_ones();
            pos += take;
        }
        total
    }

    pub(crate) fn words_mut(&mut self) -> &mut [u64] {
        &mut self.words
    }

    /// Re-zeroes padding bits past `len`.
    pub(crate) fn canonicalize(&mut self) {
        let mask = tail_mask(self.len);
        if let Some(last) = self.words.last_mut() {
            *last &= mask;
        }
    }

    pub fn is_canonical(&self) -> bool {
        self.words.last().is_none_or(|w| w & !tail_mask(self.len) == 0)
    }

    /// Serialized form: `u64` len, `u16` rank, `u64` per dimension, then the
    /// storage words. All fields little-endian.
    pub fn write_to<W: Write>(&self, mut out: W) -> io::Result<()> {
        out.write_all(&(self.len as u64).to_le_bytes())?;
        out.write_all(&(self.shape.len() as u16).to_le_bytes())?;
        for &d in &self.shape {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        for &w in &self.words {
            out.write_all(&w.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(10 + 8 * (self.shape.len() + self.words.len()));
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self, BitError> {
        let mut b8 = [0u8; 8];
        let mut b2 = [0u8; 2];
        let io = |e: io::Error| BitError::Serialization(e.to_string());
        input.read_exact(&mut b8).map_err(io)?;
        let len = u64::from_le_bytes(b8) as usize;
        input.read_exact(&mut b2).map_err(io)?;
        let rank = u16::from_le_bytes(b2) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            input.read_exact(&mut b8).map_err(io)?;
            shape.push(u64::from_le_bytes(b8) as usize);
        }
        let expected = shape_len(&shape)?;
        if expected != len {
            return Err(BitError::Serialization(format!(
                "header length {len} disagrees with shape {shape:?}"
            )));
        }
        let mut words = Vec::with_capacity(words_for(len));
        for _ in 0..words_for(len) {
            input.read_exact(&mut b8).map_err(io)?;
            words.push(u64::from_le_bytes(b8));
        }
        Self::from_words(&shape, words)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, BitError> {
        let mut cursor = bytes;
        let t = Self::read_from(&mut cursor)?;
        if !cursor.is_empty() {
            return Err(BitError::Serialization(format!("{} trailing bytes", cursor.len())));
        }
        Ok(t)
    }
}
