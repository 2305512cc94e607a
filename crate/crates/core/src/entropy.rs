//! Min-entropy of raw frames and the SHA-256 input block length it implies.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::puf_sim::SpeckleImage;
use crate::stats::{chi_square_uniform, ChiSquareTest};

/// Output length of one SHA-256 block.
pub const DIGEST_BITS: usize = 256;

/// Pooled counts of 8-bit grey values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GreyHistogram {
    #[serde(with = "counts_serde")]
    counts: [u64; 256],
    total: u64,
}

mod counts_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(c: &[u64; 256], s: S) -> Result<S::Ok, S::Error> {
        c.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u64; 256], D::Error> {
        let v = Vec::<u64>::deserialize(d)?;
        v.try_into()
            .map_err(|v: Vec<u64>| serde::de::Error::invalid_length(v.len(), &"256 counts"))
    }
}

impl Default for GreyHistogram {
    fn default() -> Self {
        Self {
            counts: [0; 256],
            total: 0,
        }
    }
}

impl GreyHistogram {
    pub fn from_bytes(bytes: &[u8]) -> Self {
        let mut h = Self::default();
        h.add_bytes(bytes);
        h
    }

    pub fn from_counts(counts: [u64; 256]) -> Self {
        Self {
            counts,
            total: counts.iter().sum(),
        }
    }

    pub fn add_bytes(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.counts[b as usize] += 1;
        }
        self.total += bytes.len() as u64;
    }

    pub fn merge(mut self, other: &Self) -> Self {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total += other.total;
        self
    }

    pub fn counts(&self) -> &[u64; 256] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    /// Largest bin probability.
    pub fn p_max(&self) -> Option<f64> {
        let max = *self.counts.iter().max()?;
        (self.total > 0).then(|| max as f64 / self.total as f64)
    }

    /// Chi-square test of the 256 bins against a uniform law.
    pub fn uniformity(&self) -> Option<ChiSquareTest> {
        chi_square_uniform(&self.counts)
    }

    /// `grey,count,probability` rows with a header.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("grey,count,probability\n");
        for (g, &c) in self.counts.iter().enumerate() {
            let p = if self.total > 0 { c as f64 / self.total as f64 } else { 0.0 };
            let _ = writeln!(s, "{g},{c},{p}");
        }
        s
    }
}

/// Pools grey values over every pixel of every frame.
pub fn grey_histogram(images: &[SpeckleImage]) -> Result<GreyHistogram> {
    if images.is_empty() {
        return Err(Error::invalid("grey histogram needs at least one image"));
    }
    Ok(images
        .par_iter()
        .map(|img| GreyHistogram::from_bytes(img.pixels()))
        .reduce(GreyHistogram::default, |a, b| a.merge(&b)))
}

/// `-log2(p_max)` in bits per 8-bit symbol.
pub fn min_entropy(hist: &GreyHistogram) -> Result<f64> {
    let p = hist
        .p_max()
        .ok_or_else(|| Error::invalid("min-entropy of an empty histogram"))?;
    // -log2(1) is -0.0
    Ok((-p.log2()).max(0.0))
}

/// Smallest byte-aligned input length whose min-entropy covers `out_bits`:
/// `ceil(out_bits · 8 / h_min)` rounded up to a multiple of 8.
pub fn required_block_bits(h_min: f64, out_bits: usize) -> Result<usize> {
    if !(h_min > 0.0 && h_min <= 8.0) {
        return Err(Error::invalid(format!("min-entropy must be in (0, 8], got {h_min}")));
    }
    if out_bits == 0 {
        return Err(Error::invalid("output length must be positive"));
    }
    let raw = (out_bits as f64 * 8.0 / h_min).ceil() as usize;
    Ok(raw.div_ceil(8) * 8)
}

/// Min-entropy assessment of a calibration dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    /// Full-precision min-entropy, bits per 8-bit symbol.
    pub h_min: f64,
    /// `h_min` to three decimals.
    pub h_min_3dp: f64,
    /// `h_min` to two decimals.
    pub h_min_2dp: f64,
    pub p_max: f64,
    /// `h_min / 8`, from the unrounded value.
    pub extraction_ratio: f64,
    pub block_bits: usize,
    pub out_bits: usize,
    pub samples: u64,
    pub source: String,
}

impl EntropyReport {
    pub fn from_histogram(hist: &GreyHistogram, source: impl Into<String>) -> Result<Self> {
        let h_min = min_entropy(hist)?;
        let block_bits = required_block_bits(h_min, DIGEST_BITS)?;
        Ok(Self {
            h_min,
            h_min_3dp: round_to(h_min, 3),
            h_min_2dp: round_to(h_min, 2),
            p_max: hist.p_max().unwrap_or(0.0),
            extraction_ratio: h_min / 8.0,
            block_bits,
            out_bits: DIGEST_BITS,
            samples: hist.total(),
            source: source.into(),
        })
    }
}

fn round_to(v: f64, places: i32) -> f64 {
    let s = 10f64.powi(places);
    (v * s).round() / s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::puf_sim::Dims;
    use proptest::prelude::*;

    fn constant(v: u8) -> SpeckleImage {
        SpeckleImage::filled(Dims::square(2), v).unwrap()
    }

    #[test]
    fn histogram_examples() {
        let h = grey_histogram(&[constant(0)]).unwrap();
        assert_eq!(h.counts()[0], 4);
        assert_eq!(h.total(), 4);
        assert_eq!(h.counts()[1..].iter().sum::<u64>(), 0);

        let h = grey_histogram(&[constant(10), constant(20)]).unwrap();
        assert_eq!((h.counts()[10], h.counts()[20], h.total()), (4, 4, 8));

        assert!(grey_histogram(&[]).is_err());
    }

    #[test]
    fn min_entropy_examples() {
        assert_eq!(min_entropy(&GreyHistogram::from_counts([3; 256])).unwrap(), 8.0);
        assert_eq!(min_entropy(&grey_histogram(&[constant(9)]).unwrap()).unwrap(), 0.0);
        let mut c = [0u64; 256];
        c[..4].copy_from_slice(&[1, 1, 1, 1]);
        assert_eq!(min_entropy(&GreyHistogram::from_counts(c)).unwrap(), 2.0);
        assert!(min_entropy(&GreyHistogram::default()).is_err());
    }

    #[test]
    fn block_bits_examples() {
        assert_eq!(required_block_bits(5.959, 256).unwrap(), 344);
        // the two-decimal figure overshoots 344 (2048 / 5.95 = 344.2)
        assert_eq!(required_block_bits(5.95, 256).unwrap(), 352);
        assert_eq!(required_block_bits(8.0, 256).unwrap(), 256);
        assert_eq!(required_block_bits(4.0, 256).unwrap(), 512);
        assert!(required_block_bits(0.0, 256).is_err());
        assert!(required_block_bits(-1.0, 256).is_err());
        assert!(required_block_bits(8.5, 256).is_err());
    }

    #[test]
    fn ratio_rounds_to_quoted_figure() {
        let r: f64 = 5.95 / 8.0;
        assert_eq!(r, 0.74375);
        assert_eq!((r * 1000.0).round() / 1000.0, 0.744);
    }

    #[test]
    fn report_invariants() {
        let mut c = [1u64; 256];
        c[17] = 40;
        let h = GreyHistogram::from_counts(c);
        let r = EntropyReport::from_histogram(&h, "synthetic").unwrap();
        assert!((r.h_min + r.p_max.log2()).abs() < 1e-12);
        assert_eq!(r.extraction_ratio, r.h_min / 8.0);
        assert!(r.block_bits as f64 >= 256.0 * 8.0 / r.h_min);
        assert_eq!(r.block_bits % 8, 0);
        let json = serde_json::to_string(&h).unwrap();
        assert_eq!(serde_json::from_str::<GreyHistogram>(&json).unwrap(), h);
    }

    #[test]
    fn unique_argmax_increment_lowers_entropy() {
        let mut c = [5u64; 256];
        c[3] = 6;
        let before = min_entropy(&GreyHistogram::from_counts(c)).unwrap();
        c[3] += 1;
        assert!(min_entropy(&GreyHistogram::from_counts(c)).unwrap() < before);
    }

    proptest! {
        #[test]
        fn block_bits_monotone(a in 0.01f64..8.0, b in 0.01f64..8.0) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let bl = required_block_bits(lo, 256).unwrap();
            let bh = required_block_bits(hi, 256).unwrap();
            prop_assert!(bl >= bh);
            prop_assert!(bh >= 256);
        }

        #[test]
        fn entropy_is_eight_only_when_uniform(counts in proptest::collection::vec(1u64..4, 256)) {
            let c: [u64; 256] = counts.try_into().unwrap();
            let h = min_entropy(&GreyHistogram::from_counts(c)).unwrap();
            let uniform = c.iter().all(|&x| x == c[0]);
            prop_assert!(h <= 8.0);
            prop_assert_eq!(h == 8.0, uniform);
        }
    }
}
