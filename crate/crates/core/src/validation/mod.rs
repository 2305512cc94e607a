//! Output checks: Pearson decorrelation, Hamming-distance distribution with
//! degrees of freedom, and the SP800-22 battery.

mod battery;
mod nist;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bits::BitString;
use crate::error::{Error, Result};
use crate::stats::compensated_sum;

pub use battery::{proportion_threshold, run_battery, uniformity_p_value, TestItem, TestReport, TestSummary};
pub use nist::{
    approximate_entropy, block_frequency, cumulative_sums, frequency, longest_run_of_ones, nist_test, runs,
    serial, spectral, NistParams, NistTest,
};

/// Product-moment correlation of two equal-length sequences.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!("lengths differ ({} vs {})", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::invalid("correlation needs at least 2 samples"));
    }
    let n = a.len() as f64;
    let ma = compensated_sum(a.iter().copied()) / n;
    let mb = compensated_sum(b.iter().copied()) / n;
    let saa = compensated_sum(a.iter().map(|x| (x - ma) * (x - ma)));
    let sbb = compensated_sum(b.iter().map(|y| (y - mb) * (y - mb)));
    if saa == 0.0 {
        return Err(Error::UndefinedCorrelation("first sequence"));
    }
    if sbb == 0.0 {
        return Err(Error::UndefinedCorrelation("second sequence"));
    }
    let sab = compensated_sum(a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)));
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// [`pearson`] over byte sequences.
pub fn pearson_bytes(a: &[u8], b: &[u8]) -> Result<f64> {
    let fa: Vec<f64> = a.iter().map(|&v| f64::from(v)).collect();
    let fb: Vec<f64> = b.iter().map(|&v| f64::from(v)).collect();
    pearson(&fa, &fb)
}

/// Correlation of consecutive raw frames against that of their hashed outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecorrelationReport {
    /// Consecutive pairs `(k, k + 1)` evaluated.
    pub pairs: usize,
    pub raw_mean_abs: f64,
    pub hashed_mean_abs: f64,
    pub hashed_max_abs: f64,
    /// Bytes per hashed output.
    pub hashed_len: usize,
    /// `4 / sqrt(hashed_len)`.
    pub bound: f64,
    /// `raw_mean_abs / hashed_mean_abs`.
    pub reduction: f64,
    pub within_bound: bool,
}

/// Pearson |ρ| over consecutive pairs, before and after hashing. `raw[k]`
/// and `hashed[k]` must come from the same frame.
pub fn decorrelation(raw: &[&[u8]], hashed: &[&[u8]]) -> Result<DecorrelationReport> {
    if raw.len() != hashed.len() {
        return Err(Error::invalid("one hashed output per raw frame is required"));
    }
    if raw.len() < 2 {
        return Err(Error::invalid("decorrelation needs at least 2 frames"));
    }
    let mean_abs = |xs: &[&[u8]]| -> Result<Vec<f64>> {
        xs.par_windows(2)
            .map(|w| pearson_bytes(w[0], w[1]).map(f64::abs))
            .collect()
    };
    let r = mean_abs(raw)?;
    let h = mean_abs(hashed)?;
    let pairs = r.len();
    let raw_mean_abs = compensated_sum(r.iter().copied()) / pairs as f64;
    let hashed_mean_abs = compensated_sum(h.iter().copied()) / pairs as f64;
    let hashed_max_abs = h.iter().copied().fold(0.0, f64::max);
    let hashed_len = hashed.iter().map(|x| x.len()).min().unwrap_or(0);
    let bound = 4.0 / (hashed_len as f64).sqrt();
    Ok(DecorrelationReport {
        pairs,
        raw_mean_abs,
        hashed_mean_abs,
        hashed_max_abs,
        hashed_len,
        bound,
        reduction: raw_mean_abs / hashed_mean_abs,
        within_bound: hashed_max_abs <= bound,
    })
}

/// `μ(1 − μ) / σ²`: the number of independent fair bits that would give a
/// binomial Hamming-distance spread of `σ`.
pub fn degrees_of_freedom(mu: f64, sigma: f64) -> Result<f64> {
    if !(mu > 0.0 && mu < 1.0) {
        return Err(Error::invalid(format!("mu must be in (0, 1), got {mu}")));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
    }
    Ok(mu * (1.0 - mu) / (sigma * sigma))
}

/// Least-squares Gaussian `amplitude · exp(−(x − center)² / (2 width²))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit {
    pub amplitude: f64,
    pub center: f64,
    pub width: f64,
    /// Coefficient of determination of the fit over the histogram bins.
    pub r_squared: f64,
}

impl GaussianFit {
    pub fn eval(&self, x: f64) -> f64 {
        let z = (x - self.center) / self.width;
        self.amplitude * (-0.5 * z * z).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HdFitReport {
    pub mu: f64,
    pub sigma: f64,
    pub n_words: usize,
    pub n_pairs: u64,
    pub word_bits: usize,
    pub dof: f64,
    /// `histogram[k]` = pairs differing in exactly `k` bits.
    pub histogram: Vec<u64>,
    pub gaussian_fit: GaussianFit,
}

/// All-pairs fractional Hamming distances of equal-length words.
pub fn hd_fit(words: &[BitString]) -> Result<HdFitReport> {
    if words.len() < 2 {
        return Err(Error::invalid("hd_fit needs at least 2 words"));
    }
    let bits = words[0].len();
    if bits == 0 {
        return Err(Error::invalid("words must be non-empty"));
    }
    if let Some(w) = words.iter().find(|w| w.len() != bits) {
        return Err(Error::invalid(format!("word of {} bits among {bits}-bit words", w.len())));
    }
    let histogram = (0..words.len())
        .into_par_iter()
        .map(|i| {
            let mut h = vec![0u64; bits + 1];
            for b in &words[i + 1..] {
                let d = words[i].hamming_weight_of_xor(b).expect("lengths checked");
                h[d] += 1;
            }
            h
        })
        .reduce(
            || vec![0u64; bits + 1],
            |mut a, b| {
                a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
                a
            },
        );
    let pairs: u64 = histogram.iter().sum();
    // exact integer moments
    let s1: u128 = histogram.iter().enumerate().map(|(k, &c)| k as u128 * c as u128).sum();
    let s2: u128 = histogram
        .iter()
        .enumerate()
        .map(|(k, &c)| (k * k) as u128 * c as u128)
        .sum();
    let p = pairs as u128;
    let l = bits as f64;
    let mu = s1 as f64 / (pairs as f64 * l);
    let var = (p * s2 - s1 * s1) as f64 / ((pairs as f64).powi(2) * l * l);
    let sigma = var.sqrt();
    let dof = degrees_of_freedom(mu, sigma)?;
    let xs: Vec<f64> = (0..=bits).map(|k| k as f64 / l).collect();
    let ys: Vec<f64> = histogram.iter().map(|&c| c as f64).collect();
    let gaussian_fit = fit_gaussian(&xs, &ys, mu, sigma);
    Ok(HdFitReport {
        mu,
        sigma,
        n_words: words.len(),
        n_pairs: pairs,
        word_bits: bits,
        dof,
        histogram,
        gaussian_fit,
    })
}

/// Levenberg–Marquardt on (amplitude, center, width), started from moments.
pub fn fit_gaussian(xs: &[f64], ys: &[f64], center0: f64, width0: f64) -> GaussianFit {
    let peak = ys.iter().copied().fold(0.0, f64::max);
    let mut theta = [peak, center0, width0.max(1e-9)];
    let sse = |t: &[f64; 3]| -> f64 {
        xs.iter()
            .zip(ys)
            .map(|(&x, &y)| {
                let z = (x - t[1]) / t[2];
                let r = y - t[0] * (-0.5 * z * z).exp();
                r * r
            })
            .sum()
    };
    let mut lambda = 1e-3;
    let mut current = sse(&theta);
    for _ in 0..200 {
        let mut jtj = [[0.0f64; 3]; 3];
        let mut jtr = [0.0f64; 3];
        for (&x, &y) in xs.iter().zip(ys) {
            let [a, c, w] = theta;
            let dx = x - c;
            let e = (-0.5 * dx * dx / (w * w)).exp();
            let r = y - a * e;
            let j = [e, a * e * dx / (w * w), a * e * dx * dx / (w * w * w)];
            for p in 0..3 {
                jtr[p] += j[p] * r;
                for q in 0..3 {
                    jtj[p][q] += j[p] * j[q];
                }
            }
        }
        let mut improved = false;
        for _ in 0..20 {
            let mut m = jtj;
            for (p, row) in m.iter_mut().enumerate() {
                row[p] += lambda * jtj[p][p].max(1e-300);
            }
            let Some(step) = solve3(m, jtr) else {
                lambda *= 10.0;
                continue;
            };
            let cand = [theta[0] + step[0], theta[1] + step[1], (theta[2] + step[2]).abs().max(1e-12)];
            let s = sse(&cand);
            if s < current {
                let rel = (current - s) / current.max(f64::MIN_POSITIVE);
                theta = cand;
                current = s;
                lambda = (lambda / 10.0).max(1e-12);
                improved = rel > 1e-14;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    let mean_y = ys.iter().sum::<f64>() / ys.len() as f64;
    let sst: f64 = ys.iter().map(|y| (y - mean_y).powi(2)).sum();
    GaussianFit {
        amplitude: theta[0],
        center: theta[1],
        width: theta[2],
        r_squared: if sst > 0.0 { 1.0 - current / sst } else { 1.0 },
    }
}

fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let s: f64 = (row + 1..3).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pearson_examples() {
        let x: Vec<f64> = (0..256).map(|v| ((v * 37) % 256) as f64).collect();
        let inv: Vec<f64> = x.iter().map(|v| 255.0 - v).collect();
        assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&x, &inv).unwrap() + 1.0).abs() < 1e-12);
        assert!(matches!(pearson(&x, &[3.0; 256]), Err(Error::UndefinedCorrelation(_))));
        assert!(pearson(&x, &x[..10]).is_err());
        assert!(pearson(&[1.0], &[2.0]).is_err());
    }

    #[test]
    fn dof_examples() {
        assert!((degrees_of_freedom(0.50001, 0.03125).unwrap() - 256.0).abs() < 0.5);
        assert!((degrees_of_freedom(0.5, 0.05).unwrap() - 100.0).abs() < 1e-9);
        assert!((degrees_of_freedom(0.5, 0.5).unwrap() - 1.0).abs() < 1e-12);
        assert!(degrees_of_freedom(0.0, 0.1).is_err());
        assert!(degrees_of_freedom(1.0, 0.1).is_err());
        assert!(degrees_of_freedom(0.5, 0.0).is_err());
    }

    #[test]
    fn hd_fit_small_case() {
        let w = |s: &str| BitString::from_ascii(s).unwrap();
        let r = hd_fit(&[w("0000"), w("0011"), w("1111")]).unwrap();
        // distances 2, 4, 2 out of 4 bits
        assert_eq!(r.n_pairs, 3);
        assert_eq!(r.histogram, vec![0, 0, 2, 0, 1]);
        assert!((r.mu - 8.0 / 12.0).abs() < 1e-12);
        let expect_var = ((0.5f64 - r.mu).powi(2) * 2.0 + (1.0 - r.mu).powi(2)) / 3.0;
        assert!((r.sigma - expect_var.sqrt()).abs() < 1e-12);
        assert!(hd_fit(&[w("01"), w("011")]).is_err());
        assert!(hd_fit(&[w("01")]).is_err());
    }

    #[test]
    fn gaussian_fit_recovers_parameters() {
        let truth = GaussianFit {
            amplitude: 1000.0,
            center: 0.5,
            width: 0.031,
            r_squared: 1.0,
        };
        let xs: Vec<f64> = (0..=256).map(|k| k as f64 / 256.0).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| truth.eval(x)).collect();
        let fit = fit_gaussian(&xs, &ys, 0.49, 0.04);
        assert!((fit.amplitude - 1000.0).abs() < 1e-6);
        assert!((fit.center - 0.5).abs() < 1e-9);
        assert!((fit.width - 0.031).abs() < 1e-9);
        assert!(fit.r_squared > 0.999_999);
    }

    #[test]
    fn hd_fit_on_coin_flips() {
        use rand::{RngCore, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(7);
        let words: Vec<BitString> = (0..2000)
            .map(|_| {
                let mut w = vec![0u8; 32];
                rng.fill_bytes(&mut w);
                BitString::from_bytes(w)
            })
            .collect();
        let r = hd_fit(&words).unwrap();
        assert_eq!(r.n_pairs, 2000 * 1999 / 2);
        // pairs are dependent; 3 sigma of the mean over the words themselves
        let sigma_mu = 0.03125 / (2000f64).sqrt();
        assert!((r.mu - 0.5).abs() < 3.0 * sigma_mu, "{}", r.mu);
        assert!((r.dof - 256.0).abs() < 0.05 * 256.0, "{}", r.dof);
        assert!(r.gaussian_fit.r_squared > 0.99);
        assert!((r.gaussian_fit.center - 0.5).abs() < 0.005);
    }

    #[test]
    fn decorrelation_of_copies_and_noise() {
        let a: Vec<u8> = (0..4096u32).map(|v| (v.wrapping_mul(2_654_435_761) >> 24) as u8).collect();
        let b: Vec<u8> = a.iter().map(|v| v.wrapping_add(1) / 2).collect();
        let h1: Vec<u8> = (0..1024u32).map(|v| (v.wrapping_mul(40_503) >> 7) as u8).collect();
        let h2: Vec<u8> = (0..1024u32).map(|v| (v.wrapping_mul(69_069) >> 9) as u8).collect();
        let r = decorrelation(&[&a, &b, &a], &[&h1, &h2, &h1]).unwrap();
        assert_eq!(r.pairs, 2);
        assert!(r.raw_mean_abs > 0.5);
        assert_eq!(r.hashed_len, 1024);
        assert_eq!(r.bound, 4.0 / 32.0);
        assert!(r.reduction > 1.0);
        assert!(decorrelation(&[&a], &[&h1]).is_err());
        assert!(decorrelation(&[&a, &b], &[&h1]).is_err());
    }

    proptest! {
        #[test]
        fn pearson_is_affine_invariant(
            a in proptest::collection::vec(-100.0f64..100.0, 8..40),
            noise in proptest::collection::vec(-100.0f64..100.0, 40),
            scale in prop_oneof![-50.0f64..-0.01, 0.01f64..50.0],
            shift in -1e3f64..1e3,
        ) {
            let b: Vec<f64> = a.iter().zip(&noise).map(|(x, n)| x + n).collect();
            let (Ok(r), Ok(r_sym)) = (pearson(&a, &b), pearson(&b, &a)) else { return Ok(()); };
            prop_assert!((r - r_sym).abs() < 1e-12);
            let t: Vec<f64> = b.iter().map(|v| scale * v + shift).collect();
            let r2 = pearson(&a, &t).unwrap();
            prop_assert!((r2 - scale.signum() * r).abs() < 1e-9);
        }
    }
}
