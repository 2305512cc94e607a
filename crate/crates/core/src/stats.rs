//! Shared numeric helpers: compensated summation, special functions and the
//! goodness-of-fit tests used across the characterisation and validation
//! stages.

use statrs::function::{erf, gamma};

/// Neumaier-compensated running sum.
///
/// This is the only accumulation strategy used for floating-point reductions
/// in the crate; reductions always walk their inputs in index order so the
/// result does not depend on how the inputs were produced.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = Self::new();
        for x in iter {
            s.add(x);
        }
        s
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(iter: I) -> f64 {
    iter.into_iter().collect::<CompensatedSum>().value()
}

/// Mean and population standard deviation (two-pass, compensated).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = compensated_sum(values.iter().copied()) / n;
    let var = compensated_sum(values.iter().map(|x| (x - mean) * (x - mean))) / n;
    (mean, var.sqrt())
}

/// Complementary error function.
pub fn erfc(x: f64) -> f64 {
    erf::erfc(x)
}

/// Upper regularised incomplete gamma function Q(a, x), the `igamc` of
/// SP800-22.
pub fn igamc(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    gamma::gamma_ur(a, x)
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Survival function of a chi-square variable with `dof` degrees of freedom.
pub fn chi_square_sf(stat: f64, dof: f64) -> f64 {
    igamc(dof / 2.0, stat / 2.0)
}

/// Result of a chi-square goodness-of-fit test against a uniform law.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ChiSquareTest {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

impl ChiSquareTest {
    /// True if uniformity is rejected at significance `alpha`.
    pub fn rejects(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

/// Pearson chi-square test of `counts` against equal expected frequencies.
pub fn chi_square_uniform(counts: &[u64]) -> Option<ChiSquareTest> {
    let total: u64 = counts.iter().sum();
    if counts.len() < 2 || total == 0 {
        return None;
    }
    let expected = total as f64 / counts.len() as f64;
    let statistic = compensated_sum(counts.iter().map(|&c| {
        let d = c as f64 - expected;
        d * d / expected
    }));
    let dof = counts.len() - 1;
    Some(ChiSquareTest {
        statistic,
        dof,
        p_value: chi_square_sf(statistic, dof as f64),
    })
}

/// Kolmogorov–Smirnov distance of a sample from U(0, 1).
pub fn ks_distance_uniform(sample: &[f64]) -> f64 {
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let x = x.clamp(0.0, 1.0);
            let lo = x - i as f64 / n;
            let hi = (i + 1) as f64 / n - x;
            lo.max(hi)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic one-sample KS critical value `c(alpha) / sqrt(n)`.
pub fn ks_critical(n: usize, alpha: f64) -> f64 {
    let c = (-0.5 * (alpha / 2.0).ln()).sqrt();
    c / (n as f64).sqrt()
}
