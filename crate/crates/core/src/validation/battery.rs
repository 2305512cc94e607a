//! Multi-sequence aggregation of the SP800-22 subset: P-value uniformity and
//! pass proportion per test item.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bits::BitString;
use crate::error::{Error, Result};
use crate::stats::chi_square_sf;

use super::nist::{run_unpacked, NistParams, NistTest};

/// Uniformity P-values below this fail.
pub const UNIFORMITY_CUTOFF: f64 = 0.0001;
/// Fewest subsequences a battery accepts.
pub const MIN_SUBSEQUENCES: usize = 10;

/// `(1 − α) − 3·sqrt(α(1 − α)/m)`.
pub fn proportion_threshold(m: usize, alpha: f64) -> f64 {
    let p = 1.0 - alpha;
    p - 3.0 * (p * alpha / m as f64).sqrt()
}

/// Chi-square over ten equal-width P-value bins, 9 degrees of freedom.
pub fn uniformity_p_value(p_values: &[f64]) -> f64 {
    let mut bins = [0u64; 10];
    for &p in p_values {
        bins[((p * 10.0) as usize).min(9)] += 1;
    }
    let expected = p_values.len() as f64 / 10.0;
    let chi2: f64 = bins.iter().map(|&f| (f as f64 - expected).powi(2) / expected).sum();
    chi_square_sf(chi2, 9.0)
}

/// One P-value stream: a test, or one variant of a multi-P test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestItem {
    pub test: NistTest,
    /// `Test` or `Test(variant)`.
    pub name: String,
    /// One entry per subsequence, in subsequence order.
    pub p_values: Vec<f64>,
    pub uniformity_p: f64,
    pub proportion: f64,
    pub passed: bool,
}

/// Per-test scalar summary: the minimum over that test's items.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSummary {
    pub test: NistTest,
    pub min_uniformity_p: f64,
    pub min_proportion: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub items: Vec<TestItem>,
    pub summaries: Vec<TestSummary>,
    pub passed: bool,
    pub sequence_bits: usize,
    pub subsequence_bits: usize,
    pub subsequences: usize,
    pub alpha: f64,
    pub proportion_threshold: f64,
    pub uniformity_cutoff: f64,
    pub params: NistParams,
}

impl TestReport {
    pub fn item(&self, name: &str) -> Option<&TestItem> {
        self.items.iter().find(|i| i.name == name)
    }

    /// `subsequence,<item>...` rows with one column per test item.
    pub fn p_values_csv(&self) -> String {
        let mut s = String::from("subsequence");
        for item in &self.items {
            let _ = write!(s, ",{}", item.name);
        }
        s.push('\n');
        for k in 0..self.subsequences {
            let _ = write!(s, "{k}");
            for item in &self.items {
                let _ = write!(s, ",{}", item.p_values[k]);
            }
            s.push('\n');
        }
        s
    }

    /// One line per summary, NIST style.
    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<20} {:>12} {:>12}  result   ({} x {} bits, alpha {}, threshold {:.4})\n",
            "test", "P_T", "proportion", self.subsequences, self.subsequence_bits, self.alpha, self.proportion_threshold
        );
        for t in &self.summaries {
            let _ = writeln!(
                s,
                "{:<20} {:>12.6} {:>12.4}  {}",
                t.test.name(),
                t.min_uniformity_p,
                t.min_proportion,
                if t.passed { "PASS" } else { "FAIL" }
            );
        }
        s
    }
}

/// Splits `bits` into whole subsequences, runs every test on each, and
/// aggregates per test item. The incomplete tail is discarded.
pub fn run_battery(bits: &BitString, subseq_bits: usize, alpha: f64, params: &NistParams) -> Result<TestReport> {
    params.validate()?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must be in (0, 1), got {alpha}")));
    }
    if subseq_bits == 0 {
        return Err(Error::invalid("subsequence length must be positive"));
    }
    let m = bits.len() / subseq_bits;
    if m < MIN_SUBSEQUENCES {
        return Err(Error::InsufficientData {
            test: "battery".into(),
            needed: MIN_SUBSEQUENCES * subseq_bits,
            got: bits.len(),
        });
    }
    if params.enforce_recommended_lengths {
        for t in NistTest::ALL {
            let needed = t.recommended_min_len(params);
            if subseq_bits < needed {
                return Err(Error::InsufficientData {
                    test: t.name().into(),
                    needed,
                    got: subseq_bits,
                });
            }
        }
    }

    // [subsequence][test] -> P-values
    let per_seq: Vec<Vec<Vec<f64>>> = (0..m)
        .into_par_iter()
        .map(|k| {
            let eps = bits.slice(k * subseq_bits, subseq_bits)?.to_unpacked();
            NistTest::ALL
                .iter()
                .map(|&t| run_unpacked(t, &eps, params))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let threshold = proportion_threshold(m, alpha);
    let mut items = Vec::new();
    let mut summaries = Vec::new();
    for (ti, &test) in NistTest::ALL.iter().enumerate() {
        let first = items.len();
        for (vi, variant) in test.variants().iter().enumerate() {
            let p_values: Vec<f64> = per_seq.iter().map(|s| s[ti][vi]).collect();
            let uniformity_p = uniformity_p_value(&p_values);
            let proportion = p_values.iter().filter(|&&p| p >= alpha).count() as f64 / m as f64;
            let name = if variant.is_empty() {
                test.name().to_string()
            } else {
                format!("{}({variant})", test.name())
            };
            items.push(TestItem {
                test,
                name,
                p_values,
                uniformity_p,
                proportion,
                passed: uniformity_p >= UNIFORMITY_CUTOFF && proportion >= threshold,
            });
        }
        let mine = &items[first..];
        summaries.push(TestSummary {
            test,
            min_uniformity_p: mine.iter().map(|i| i.uniformity_p).fold(f64::INFINITY, f64::min),
            min_proportion: mine.iter().map(|i| i.proportion).fold(f64::INFINITY, f64::min),
            passed: mine.iter().all(|i| i.passed),
        });
    }
    Ok(TestReport {
        passed: items.iter().all(|i| i.passed),
        items,
        summaries,
        sequence_bits: bits.len(),
        subsequence_bits: subseq_bits,
        subsequences: m,
        alpha,
        proportion_threshold: threshold,
        uniformity_cutoff: UNIFORMITY_CUTOFF,
        params: *params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_for_thousand_sequences() {
        assert!((proportion_threshold(1000, 0.01) - 0.98056).abs() < 1e-5);
        assert!((proportion_threshold(100, 0.01) - 0.96015).abs() < 1e-5);
    }

    #[test]
    fn degenerate_p_values_fail_uniformity() {
        let p = vec![0.5; 1000];
        assert!(uniformity_p_value(&p) < UNIFORMITY_CUTOFF);
        let proportion = p.iter().filter(|&&v| v >= 0.01).count() as f64 / 1000.0;
        assert_eq!(proportion, 1.0);
    }

    #[test]
    fn evenly_spread_p_values_are_uniform() {
        let p: Vec<f64> = (0..1000).map(|k| (k as f64 + 0.5) / 1000.0).collect();
        assert!((uniformity_p_value(&p) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn too_few_subsequences() {
        let bits = BitString::from_bytes(vec![0x5A; 125 * 9]);
        let err = run_battery(&bits, 1000, 0.01, &NistParams::default()).unwrap_err();
        assert!(matches!(err, Error::InsufficientData { .. }), "{err}");
    }

    #[test]
    fn all_zero_stream_fails() {
        let params = NistParams {
            serial_m: 3,
            approximate_entropy_m: 2,
            ..NistParams::default()
        };
        let bits = BitString::from_bytes(vec![0; 1250 * 10]);
        let r = run_battery(&bits, 10_000, 0.01, &params).unwrap();
        assert!(!r.passed);
        let f = r.item("Frequency").unwrap();
        assert_eq!(f.proportion, 0.0);
        assert!(!f.passed);
        assert_eq!(r.items.len(), 10);
        assert_eq!(r.summaries.len(), 8);
    }
}
