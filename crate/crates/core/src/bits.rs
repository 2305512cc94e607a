//! Packed bit sequences, MSB-first within each byte.

use std::fmt;

use crate::error::{Error, Result};

/// A packed binary sequence.
///
/// Bit `i` lives in byte `i / 8` at position `7 - i % 8`, so the first bit of
/// the sequence is the most significant bit of the first byte. Pad bits past
/// `len` are always zero.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct BitString {
    bytes: Vec<u8>,
    len: usize,
}

impl BitString {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(bits: usize) -> Self {
        Self {
            bytes: Vec::with_capacity(bits.div_ceil(8)),
            len: 0,
        }
    }

    /// Wraps whole bytes; the length is `8 * bytes.len()`.
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        let len = bytes.len() * 8;
        Self { bytes, len }
    }

    /// Takes the first `len` bits of `bytes`, clearing anything after them.
    pub fn from_bytes_truncated(mut bytes: Vec<u8>, len: usize) -> Result<Self> {
        if len > bytes.len() * 8 {
            return Err(Error::invalid(format!(
                "bit length {len} exceeds {} available bits",
                bytes.len() * 8
            )));
        }
        bytes.truncate(len.div_ceil(8));
        let mut out = Self { bytes, len };
        out.clear_padding();
        Ok(out)
    }

    /// Parses a string of `'0'` / `'1'` characters. Whitespace is skipped.
    pub fn from_ascii(s: &str) -> Result<Self> {
        let mut out = Self::with_capacity(s.len());
        for c in s.chars() {
            match c {
                '0' => out.push(false),
                '1' => out.push(true),
                c if c.is_whitespace() => {}
                c => return Err(Error::invalid(format!("unexpected character {c:?} in bit string"))),
            }
        }
        Ok(out)
    }

    pub fn from_bits<I: IntoIterator<Item = bool>>(bits: I) -> Self {
        let mut out = Self::new();
        out.extend(bits);
        out
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Backing bytes, including the zeroed pad bits of the last byte.
    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }

    pub fn get(&self, i: usize) -> Option<bool> {
        (i < self.len).then(|| self.bytes[i / 8] >> (7 - i % 8) & 1 == 1)
    }

    pub fn push(&mut self, bit: bool) {
        if self.len % 8 == 0 {
            self.bytes.push(0);
        }
        if bit {
            let last = self.bytes.len() - 1;
            self.bytes[last] |= 0x80 >> (self.len % 8);
        }
        self.len += 1;
    }

    /// Appends whole bytes. Fast path when the current length is byte aligned.
    pub fn extend_from_bytes(&mut self, bytes: &[u8]) {
        if self.len % 8 == 0 {
            self.bytes.extend_from_slice(bytes);
            self.len += bytes.len() * 8;
        } else {
            for &b in bytes {
                for k in 0..8 {
                    self.push(b >> (7 - k) & 1 == 1);
                }
            }
        }
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.bytes[i / 8] >> (7 - i % 8) & 1 == 1)
    }

    /// Unpacks into one `u8` (0 or 1) per bit.
    pub fn to_unpacked(&self) -> Vec<u8> {
        self.iter().map(u8::from).collect()
    }

    pub fn count_ones(&self) -> usize {
        self.bytes.iter().map(|b| b.count_ones() as usize).sum()
    }

    /// Bit-wise complement over the first `len` bits.
    pub fn complement(&self) -> Self {
        let mut out = Self {
            bytes: self.bytes.iter().map(|b| !b).collect(),
            len: self.len,
        };
        out.clear_padding();
        out
    }

    /// Number of positions at which `self` and `other` differ.
    pub fn hamming_weight_of_xor(&self, other: &Self) -> Result<usize> {
        if self.len != other.len {
            return Err(Error::invalid(format!(
                "bit strings differ in length ({} vs {})",
                self.len, other.len
            )));
        }
        let mut chunks_a = self.bytes.chunks_exact(8);
        let mut chunks_b = other.bytes.chunks_exact(8);
        let mut total = 0usize;
        for (a, b) in (&mut chunks_a).zip(&mut chunks_b) {
            let a = u64::from_ne_bytes(a.try_into().expect("8-byte chunk"));
            let b = u64::from_ne_bytes(b.try_into().expect("8-byte chunk"));
            total += (a ^ b).count_ones() as usize;
        }
        total += chunks_a
            .remainder()
            .iter()
            .zip(chunks_b.remainder())
            .map(|(a, b)| (a ^ b).count_ones() as usize)
            .sum::<usize>();
        Ok(total)
    }

    /// Copies bits `[start, start + len)` into a new string.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        let end = start
            .checked_add(len)
            .filter(|&e| e <= self.len)
            .ok_or_else(|| Error::invalid(format!("slice {start}+{len} out of range for {} bits", self.len)))?;
        if start % 8 == 0 {
            let bytes = self.bytes[start / 8..end.div_ceil(8)].to_vec();
            return Self::from_bytes_truncated(bytes, len);
        }
        Ok(Self::from_bits((start..end).map(|i| self.bytes[i / 8] >> (7 - i % 8) & 1 == 1)))
    }

    /// Splits into consecutive chunks of `chunk_bits`; a short tail is dropped.
    pub fn chunks(&self, chunk_bits: usize) -> Result<Vec<Self>> {
        if chunk_bits == 0 {
            return Err(Error::invalid("chunk length must be positive"));
        }
        (0..self.len / chunk_bits)
            .map(|k| self.slice(k * chunk_bits, chunk_bits))
            .collect()
    }

    /// `'0'`/`'1'` text rendering.
    pub fn to_ascii(&self) -> String {
        self.iter().map(|b| if b { '1' } else { '0' }).collect()
    }

    fn clear_padding(&mut self) {
        let rem = self.len % 8;
        if rem != 0 {
            if let Some(last) = self.bytes.last_mut() {
                *last &= 0xFFu8 << (8 - rem);
            }
        }
    }
}

impl Extend<bool> for BitString {
    fn extend<I: IntoIterator<Item = bool>>(&mut self, iter: I) {
        for b in iter {
            self.push(b);
        }
    }
}

impl FromIterator<bool> for BitString {
    fn from_iter<I: IntoIterator<Item = bool>>(iter: I) -> Self {
        Self::from_bits(iter)
    }
}

impl fmt::Debug for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.len <= 64 {
            write!(f, "BitString({})", self.to_ascii())
        } else {
            let head: String = self.iter().take(64).map(|b| if b { '1' } else { '0' }).collect();
            write!(f, "BitString({} bits, {head}...)", self.len)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn msb_first_layout() {
        let b = BitString::from_ascii("10000000 01").unwrap();
        assert_eq!(b.len(), 10);
        assert_eq!(b.as_bytes(), &[0x80, 0x40]);
        assert_eq!(b.get(0), Some(true));
        assert_eq!(b.get(9), Some(true));
        assert_eq!(b.get(10), None);
    }

    #[test]
    fn rejects_garbage() {
        assert!(BitString::from_ascii("0102").is_err());
    }

    #[test]
    fn truncation_zeroes_padding() {
        let b = BitString::from_bytes_truncated(vec![0xFF, 0xFF], 11).unwrap();
        assert_eq!(b.as_bytes(), &[0xFF, 0xE0]);
        assert_eq!(b.count_ones(), 11);
        assert!(BitString::from_bytes_truncated(vec![0xFF], 9).is_err());
    }

    #[test]
    fn complement_keeps_padding_clear() {
        let b = BitString::from_ascii("101").unwrap();
        let c = b.complement();
        assert_eq!(c.to_ascii(), "010");
        assert_eq!(c.as_bytes(), &[0x40]);
    }

    #[test]
    fn unaligned_slice_and_chunks() {
        let b = BitString::from_ascii("1100101011110000").unwrap();
        assert_eq!(b.slice(3, 6).unwrap().to_ascii(), "010101");
        let parts = b.chunks(5).unwrap();
        assert_eq!(parts.len(), 3);
        assert_eq!(parts[2].to_ascii(), "11000");
    }

    proptest! {
        #[test]
        fn ascii_round_trip(bits in proptest::collection::vec(any::<bool>(), 0..300)) {
            let b = BitString::from_bits(bits.iter().copied());
            prop_assert_eq!(b.len(), bits.len());
            prop_assert_eq!(BitString::from_ascii(&b.to_ascii()).unwrap(), b.clone());
            prop_assert_eq!(b.iter().collect::<Vec<_>>(), bits);
        }

        #[test]
        fn xor_weight_matches_naive(a in proptest::collection::vec(any::<bool>(), 0..200), seed in any::<u64>()) {
            let b: Vec<bool> = a.iter().enumerate().map(|(i, &x)| x ^ ((seed >> (i % 64)) & 1 == 1)).collect();
            let naive = a.iter().zip(&b).filter(|(x, y)| x != y).count();
            let sa = BitString::from_bits(a.iter().copied());
            let sb = BitString::from_bits(b.iter().copied());
            prop_assert_eq!(sa.hamming_weight_of_xor(&sb).unwrap(), naive);
        }
    }
}
