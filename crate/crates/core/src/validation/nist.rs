//! SP800-22 test subset.
//!
//! Each test takes an unpacked sequence (`0`/`1` per byte) and returns its
//! P-value(s). The functions here only enforce what the statistic needs to be
//! defined; [`nist_test`] additionally enforces the recommended minimum
//! lengths unless told otherwise.

use std::fmt;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::bits::BitString;
use crate::error::{Error, Result};
use crate::stats::{erfc, igamc, normal_cdf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NistTest {
    Frequency,
    BlockFrequency,
    Runs,
    LongestRun,
    CumulativeSums,
    Spectral,
    Serial,
    ApproximateEntropy,
}

impl NistTest {
    pub const ALL: [NistTest; 8] = [
        NistTest::Frequency,
        NistTest::BlockFrequency,
        NistTest::CumulativeSums,
        NistTest::Runs,
        NistTest::LongestRun,
        NistTest::Spectral,
        NistTest::Serial,
        NistTest::ApproximateEntropy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NistTest::Frequency => "Frequency",
            NistTest::BlockFrequency => "BlockFrequency",
            NistTest::Runs => "Runs",
            NistTest::LongestRun => "LongestRun",
            NistTest::CumulativeSums => "CumulativeSums",
            NistTest::Spectral => "FFT",
            NistTest::Serial => "Serial",
            NistTest::ApproximateEntropy => "ApproximateEntropy",
        }
    }

    /// Labels of the P-values the test returns, in order.
    pub fn variants(self) -> &'static [&'static str] {
        match self {
            NistTest::CumulativeSums => &["forward", "reverse"],
            NistTest::Serial => &["p1", "p2"],
            _ => &[""],
        }
    }

    /// Recommended minimum sequence length under `params`.
    pub fn recommended_min_len(self, params: &NistParams) -> usize {
        match self {
            NistTest::Frequency | NistTest::Runs | NistTest::CumulativeSums => 100,
            NistTest::BlockFrequency => params.block_frequency_m.max(100),
            NistTest::LongestRun => 128,
            NistTest::Spectral => 1000,
            // m < floor(log2 n) - 2
            NistTest::Serial => 1 << (params.serial_m + 3),
            // m < floor(log2 n) - 5
            NistTest::ApproximateEntropy => 1 << (params.approximate_entropy_m + 6),
        }
    }
}

impl fmt::Display for NistTest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Test parameters; echoed verbatim into every report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NistParams {
    /// Block length M of the block frequency test.
    pub block_frequency_m: usize,
    /// Pattern length m of the serial test.
    pub serial_m: usize,
    /// Pattern length m of the approximate entropy test.
    pub approximate_entropy_m: usize,
    /// Reject sequences shorter than the recommended minimum.
    pub enforce_recommended_lengths: bool,
}

impl Default for NistParams {
    fn default() -> Self {
        Self {
            block_frequency_m: 128,
            serial_m: 16,
            approximate_entropy_m: 10,
            enforce_recommended_lengths: true,
        }
    }
}

impl NistParams {
    pub fn validate(&self) -> Result<()> {
        if self.block_frequency_m == 0 {
            return Err(Error::invalid("block_frequency_m must be positive"));
        }
        if !(2..=24).contains(&self.serial_m) {
            return Err(Error::invalid("serial_m must be in 2..=24"));
        }
        if !(1..=24).contains(&self.approximate_entropy_m) {
            return Err(Error::invalid("approximate_entropy_m must be in 1..=24"));
        }
        Ok(())
    }
}

/// Runs one test on a packed sequence.
pub fn nist_test(test: NistTest, bits: &BitString, params: &NistParams) -> Result<Vec<f64>> {
    params.validate()?;
    if params.enforce_recommended_lengths {
        let needed = test.recommended_min_len(params);
        if bits.len() < needed {
            return Err(Error::InsufficientData {
                test: test.name().into(),
                needed,
                got: bits.len(),
            });
        }
    }
    run_unpacked(test, &bits.to_unpacked(), params)
}

pub(crate) fn run_unpacked(test: NistTest, eps: &[u8], params: &NistParams) -> Result<Vec<f64>> {
    Ok(match test {
        NistTest::Frequency => vec![frequency(eps)?],
        NistTest::BlockFrequency => vec![block_frequency(eps, params.block_frequency_m)?],
        NistTest::Runs => vec![runs(eps)?],
        NistTest::LongestRun => vec![longest_run_of_ones(eps)?],
        NistTest::CumulativeSums => {
            let (f, r) = cumulative_sums(eps)?;
            vec![f, r]
        }
        NistTest::Spectral => vec![spectral(eps)?],
        NistTest::Serial => {
            let (p1, p2) = serial(eps, params.serial_m)?;
            vec![p1, p2]
        }
        NistTest::ApproximateEntropy => vec![approximate_entropy(eps, params.approximate_entropy_m)?],
    })
}

fn need(test: &str, needed: usize, got: usize) -> Result<()> {
    if got < needed {
        return Err(Error::InsufficientData {
            test: test.into(),
            needed,
            got,
        });
    }
    Ok(())
}

fn ones(eps: &[u8]) -> usize {
    eps.iter().filter(|&&b| b == 1).count()
}

/// Monobit frequency test.
pub fn frequency(eps: &[u8]) -> Result<f64> {
    need("Frequency", 1, eps.len())?;
    let n = eps.len() as f64;
    let s = 2.0 * ones(eps) as f64 - n;
    Ok(erfc(s.abs() / n.sqrt() / std::f64::consts::SQRT_2))
}

/// Frequency within blocks of `m` bits.
pub fn block_frequency(eps: &[u8], m: usize) -> Result<f64> {
    need("BlockFrequency", m.max(1), eps.len())?;
    let blocks = eps.len() / m;
    let chi2: f64 = eps
        .chunks_exact(m)
        .map(|b| {
            let pi = ones(b) as f64 / m as f64 - 0.5;
            pi * pi
        })
        .sum::<f64>()
        * 4.0
        * m as f64;
    Ok(igamc(blocks as f64 / 2.0, chi2 / 2.0))
}

/// Runs test. Returns 0 when the frequency prerequisite fails.
pub fn runs(eps: &[u8]) -> Result<f64> {
    need("Runs", 2, eps.len())?;
    let n = eps.len() as f64;
    let pi = ones(eps) as f64 / n;
    if (pi - 0.5).abs() >= 2.0 / n.sqrt() {
        return Ok(0.0);
    }
    let v = 1 + eps.windows(2).filter(|w| w[0] != w[1]).count();
    let num = (v as f64 - 2.0 * n * pi * (1.0 - pi)).abs();
    let den = 2.0 * (2.0 * n).sqrt() * pi * (1.0 - pi);
    Ok(erfc(num / den))
}

/// Longest run of ones in a block; block size chosen from `n`.
pub fn longest_run_of_ones(eps: &[u8]) -> Result<f64> {
    need("LongestRun", 128, eps.len())?;
    let n = eps.len();
    let (m, lo, pis): (usize, usize, &[f64]) = if n < 6272 {
        (8, 1, &[0.2148, 0.3672, 0.2305, 0.1875])
    } else if n < 750_000 {
        (128, 4, &[0.1174, 0.2430, 0.2493, 0.1752, 0.1027, 0.1124])
    } else {
        (10_000, 10, &[0.0882, 0.2092, 0.2483, 0.1933, 0.1208, 0.0675, 0.0727])
    };
    let k = pis.len() - 1;
    let blocks = n / m;
    let mut nu = vec![0u64; k + 1];
    for block in eps.chunks_exact(m) {
        let (mut run, mut longest) = (0usize, 0usize);
        for &b in block {
            if b == 1 {
                run += 1;
                longest = longest.max(run);
            } else {
                run = 0;
            }
        }
        nu[longest.clamp(lo, lo + k) - lo] += 1;
    }
    let chi2: f64 = nu
        .iter()
        .zip(pis)
        .map(|(&v, &p)| {
            let e = blocks as f64 * p;
            (v as f64 - e).powi(2) / e
        })
        .sum();
    Ok(igamc(k as f64 / 2.0, chi2 / 2.0))
}

/// Cumulative sums, forward and reverse.
pub fn cumulative_sums(eps: &[u8]) -> Result<(f64, f64)> {
    need("CumulativeSums", 1, eps.len())?;
    let max_excursion = |it: &mut dyn Iterator<Item = &u8>| {
        let mut s = 0i64;
        let mut z = 0i64;
        for &b in it {
            s += if b == 1 { 1 } else { -1 };
            z = z.max(s.abs());
        }
        z
    };
    let n = eps.len() as i64;
    let fwd = max_excursion(&mut eps.iter());
    let rev = max_excursion(&mut eps.iter().rev());
    Ok((cusum_p(n, fwd), cusum_p(n, rev)))
}

fn cusum_p(n: i64, z: i64) -> f64 {
    if z == 0 {
        // only possible for empty input
        return 1.0;
    }
    let sqrt_n = (n as f64).sqrt();
    let zf = z as f64;
    // Integer bounds with truncating division, as in the reference code.
    let mut sum1 = 0.0;
    let mut k = (-n / z + 1) / 4;
    while k <= (n / z - 1) / 4 {
        let kf = k as f64;
        sum1 += normal_cdf((4.0 * kf + 1.0) * zf / sqrt_n) - normal_cdf((4.0 * kf - 1.0) * zf / sqrt_n);
        k += 1;
    }
    let mut sum2 = 0.0;
    let mut k = (-n / z - 3) / 4;
    while k <= (n / z - 1) / 4 {
        let kf = k as f64;
        sum2 += normal_cdf((4.0 * kf + 3.0) * zf / sqrt_n) - normal_cdf((4.0 * kf + 1.0) * zf / sqrt_n);
        k += 1;
    }
    (1.0 - sum1 + sum2).clamp(0.0, 1.0)
}

/// Discrete Fourier transform (spectral) test.
pub fn spectral(eps: &[u8]) -> Result<f64> {
    need("FFT", 2, eps.len())?;
    let n = eps.len();
    let mut x: Vec<Complex64> = eps
        .iter()
        .map(|&b| Complex64::new(if b == 1 { 1.0 } else { -1.0 }, 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut x);
    let nf = n as f64;
    let threshold = ((1.0f64 / 0.05).ln() * nf).sqrt();
    let below = x[..n / 2].iter().filter(|c| c.norm() < threshold).count() as f64;
    let expected = 0.95 * nf / 2.0;
    let d = (below - expected) / (nf * 0.95 * 0.05 / 4.0).sqrt();
    Ok(erfc(d.abs() / std::f64::consts::SQRT_2))
}

/// Overlapping m-bit pattern counts with wrap-around.
fn pattern_counts(eps: &[u8], m: usize) -> Vec<u64> {
    let mut counts = vec![0u64; 1 << m];
    if m == 0 {
        counts[0] = eps.len() as u64;
        return counts;
    }
    let n = eps.len();
    let mask = (1usize << m) - 1;
    let mut idx = 0usize;
    for &b in eps.iter().take(m - 1) {
        idx = (idx << 1) | b as usize;
    }
    for i in 0..n {
        let b = eps[(i + m - 1) % n];
        idx = ((idx << 1) | b as usize) & mask;
        counts[idx] += 1;
    }
    counts
}

fn psi_squared(eps: &[u8], m: usize) -> f64 {
    if m == 0 {
        return 0.0;
    }
    let n = eps.len() as f64;
    let sum: f64 = pattern_counts(eps, m).iter().map(|&c| (c as f64) * (c as f64)).sum();
    sum * (1u64 << m) as f64 / n - n
}

/// Serial test with pattern length `m`; returns (P-value 1, P-value 2).
pub fn serial(eps: &[u8], m: usize) -> Result<(f64, f64)> {
    if m < 2 {
        return Err(Error::invalid("serial test needs m >= 2"));
    }
    need("Serial", m, eps.len())?;
    let p0 = psi_squared(eps, m);
    let p1 = psi_squared(eps, m - 1);
    let p2 = psi_squared(eps, m - 2);
    let d1 = p0 - p1;
    let d2 = p0 - 2.0 * p1 + p2;
    Ok((
        igamc(2f64.powi(m as i32 - 2), d1 / 2.0),
        igamc(2f64.powi(m as i32 - 3), d2 / 2.0),
    ))
}

fn phi(eps: &[u8], m: usize) -> f64 {
    let n = eps.len() as f64;
    pattern_counts(eps, m)
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            p * p.ln()
        })
        .sum()
}

/// Approximate entropy with block length `m`.
pub fn approximate_entropy(eps: &[u8], m: usize) -> Result<f64> {
    if m == 0 {
        return Err(Error::invalid("approximate entropy needs m >= 1"));
    }
    need("ApproximateEntropy", m + 1, eps.len())?;
    let n = eps.len() as f64;
    let apen = phi(eps, m) - phi(eps, m + 1);
    let chi2 = 2.0 * n * (std::f64::consts::LN_2 - apen);
    Ok(igamc(2f64.powi(m as i32 - 1), chi2 / 2.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eps(s: &str) -> Vec<u8> {
        BitString::from_ascii(s).unwrap().to_unpacked()
    }

    #[test]
    fn pattern_counts_wrap() {
        // 0011011101 with m = 3, counts from the serial worked example
        let c = pattern_counts(&eps("0011011101"), 3);
        assert_eq!(c, vec![0, 1, 1, 2, 1, 2, 2, 1]);
        assert_eq!(pattern_counts(&eps("0011011101"), 2), vec![1, 3, 3, 3]);
    }

    #[test]
    fn frequency_extremes() {
        let all_ones = vec![1u8; 100];
        assert!(frequency(&all_ones).unwrap() < 1e-20);
        let alternating: Vec<u8> = (0..100).map(|i| (i % 2) as u8).collect();
        assert_eq!(frequency(&alternating).unwrap(), 1.0);
    }

    #[test]
    fn runs_prerequisite() {
        let biased: Vec<u8> = (0..100).map(|i| u8::from(i % 10 != 0)).collect();
        assert_eq!(runs(&biased).unwrap(), 0.0);
    }

    #[test]
    fn short_sequences_are_reported() {
        let bits = BitString::from_ascii("1011010101").unwrap();
        match nist_test(NistTest::Frequency, &bits, &NistParams::default()) {
            Err(Error::InsufficientData { needed, got, .. }) => assert_eq!((needed, got), (100, 10)),
            other => panic!("unexpected {other:?}"),
        }
        assert!(longest_run_of_ones(&[1; 127]).is_err());
    }
}
