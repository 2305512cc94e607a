//! Dataset characterisation: Euclidean distances between normalised frames
//! and fractional Hamming distances between Gabor-hash fingerprints.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bits::BitString;
use crate::error::{Error, Result};
use crate::puf_sim::{Dims, SpeckleImage};
use crate::stats::{compensated_sum, mean_std};

/// Grey values scaled to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedImage {
    dims: Dims,
    data: Vec<f64>,
}

impl NormalizedImage {
    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }
}

/// Divides every grey value by 255.
pub fn normalize_image(img: &SpeckleImage) -> NormalizedImage {
    NormalizedImage {
        dims: img.dims(),
        data: img.pixels().iter().map(|&g| f64::from(g) / 255.0).collect(),
    }
}

/// `sqrt(Σ (a_i - b_i)²)` over all pixels.
pub fn euclidean_distance(a: &NormalizedImage, b: &NormalizedImage) -> Result<f64> {
    if a.dims != b.dims {
        return Err(Error::invalid(format!(
            "cannot compare {}x{} with {}x{}",
            a.dims.width, a.dims.height, b.dims.width, b.dims.height
        )));
    }
    let ss = compensated_sum(a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)));
    Ok(ss.sqrt())
}

/// Single-orientation Gabor hash settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaborParams {
    /// Carrier wavelength, pixels.
    pub wavelength: f64,
    /// Gaussian envelope width, pixels.
    pub sigma: f64,
    pub orientation_deg: f64,
    /// Spacing of the sampling grid, pixels.
    pub stride: usize,
}

impl Default for GaborParams {
    fn default() -> Self {
        Self {
            wavelength: 8.0,
            sigma: 4.0,
            orientation_deg: 45.0,
            stride: 8,
        }
    }
}

impl GaborParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.wavelength > 0.0 && self.wavelength.is_finite()) {
            return Err(Error::invalid("gabor wavelength must be positive"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid("gabor sigma must be positive"));
        }
        if !self.orientation_deg.is_finite() {
            return Err(Error::invalid("gabor orientation must be finite"));
        }
        if self.stride == 0 {
            return Err(Error::invalid("gabor stride must be positive"));
        }
        Ok(())
    }

    /// Kernel half-width, `ceil(3σ)`.
    pub fn radius(&self) -> usize {
        (3.0 * self.sigma).ceil() as usize
    }

    /// Sampling grid for a frame: `(columns, rows)`, or `None` if the frame
    /// cannot hold one kernel. The fingerprint has `columns · rows` bits.
    pub fn grid(&self, dims: Dims) -> Option<(usize, usize)> {
        let support = 2 * self.radius() + 1;
        if dims.width < support || dims.height < support {
            return None;
        }
        Some((
            (dims.width - support) / self.stride + 1,
            (dims.height - support) / self.stride + 1,
        ))
    }
}

/// Complex Gabor kernel with both parts corrected to zero DC.
#[derive(Debug, Clone)]
pub struct GaborKernel {
    radius: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl GaborKernel {
    pub fn new(params: &GaborParams) -> Result<Self> {
        params.validate()?;
        let r = params.radius() as isize;
        let side = (2 * r + 1) as usize;
        let theta = params.orientation_deg.to_radians();
        let (sin_t, cos_t) = theta.sin_cos();
        let mut env = Vec::with_capacity(side * side);
        let mut re = Vec::with_capacity(side * side);
        let mut im = Vec::with_capacity(side * side);
        for dy in -r..=r {
            for dx in -r..=r {
                let (x, y) = (dx as f64, dy as f64);
                let g = (-(x * x + y * y) / (2.0 * params.sigma * params.sigma)).exp();
                let along = x * cos_t + y * sin_t;
                let phase = 2.0 * PI * along / params.wavelength;
                env.push(g);
                re.push(g * phase.cos());
                im.push(g * phase.sin());
            }
        }
        let env_sum = compensated_sum(env.iter().copied());
        for part in [&mut re, &mut im] {
            let k = compensated_sum(part.iter().copied()) / env_sum;
            for (v, g) in part.iter_mut().zip(&env) {
                *v -= k * g;
            }
        }
        Ok(Self {
            radius: r as usize,
            re,
            im,
        })
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    /// Sum of the real part; zero up to rounding.
    pub fn dc(&self) -> f64 {
        compensated_sum(self.re.iter().copied())
    }

    /// Complex response centred at `(cx, cy)`.
    fn respond(&self, img: &NormalizedImage, cx: usize, cy: usize) -> (f64, f64) {
        let side = 2 * self.radius + 1;
        let w = img.dims.width;
        let (mut re, mut im) = (0.0, 0.0);
        for ky in 0..side {
            let row = (cy + ky - self.radius) * w + cx - self.radius;
            let pixels = &img.data[row..row + side];
            let kre = &self.re[ky * side..(ky + 1) * side];
            let kim = &self.im[ky * side..(ky + 1) * side];
            for ((p, a), b) in pixels.iter().zip(kre).zip(kim) {
                re += p * a;
                im += p * b;
            }
        }
        (re, im)
    }
}

/// Real parts of the Gabor response on the sampling grid, row-major.
pub fn gabor_response(img: &SpeckleImage, params: &GaborParams) -> Result<Vec<f64>> {
    let (cols, rows) = params.grid(img.dims()).ok_or_else(|| {
        Error::invalid(format!(
            "{}x{} image is smaller than the {}-pixel Gabor kernel",
            img.width(),
            img.height(),
            2 * params.radius() + 1
        ))
    })?;
    let kernel = GaborKernel::new(params)?;
    let norm = normalize_image(img);
    let r = kernel.radius();
    let mut out = Vec::with_capacity(cols * rows);
    for gy in 0..rows {
        for gx in 0..cols {
            out.push(kernel.respond(&norm, r + gx * params.stride, r + gy * params.stride).0);
        }
    }
    Ok(out)
}

/// Binarised Gabor fingerprint: bit = 1 where the real response is positive.
///
/// Output length is fixed by the frame size, see [`GaborParams::grid`]; with
/// the defaults a 256×256 frame yields a 29×29 = 841-bit fingerprint.
pub fn gabor_hash(img: &SpeckleImage, params: &GaborParams) -> Result<BitString> {
    Ok(gabor_response(img, params)?.into_iter().map(|v| v > 0.0).collect())
}

/// Fraction of differing bits.
pub fn hamming_distance(a: &BitString, b: &BitString) -> Result<f64> {
    if a.is_empty() {
        return Err(Error::invalid("hamming distance of empty bit strings"));
    }
    Ok(a.hamming_weight_of_xor(b)? as f64 / a.len() as f64)
}

/// Histogram bin rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Binning {
    /// Width `2·IQR·n^(-1/3)`.
    #[default]
    FreedmanDiaconis,
    Fixed(usize),
}

const MAX_BINS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `counts.len() + 1` ascending edges; the last bin is closed.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn build(values: &[f64], binning: Binning) -> Self {
        if values.is_empty() {
            return Self {
                edges: vec![0.0, 1.0],
                counts: vec![0],
            };
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
        if hi <= lo {
            return Self {
                edges: vec![lo, lo + 1.0],
                counts: vec![values.len() as u64],
            };
        }
        let bins = match binning {
            Binning::Fixed(b) => b.max(1),
            Binning::FreedmanDiaconis => {
                let iqr = sorted_quantile(&sorted, 0.75) - sorted_quantile(&sorted, 0.25);
                let width = 2.0 * iqr / (values.len() as f64).cbrt();
                if width > 0.0 {
                    ((hi - lo) / width).ceil() as usize
                } else {
                    1
                }
            }
        }
        .clamp(1, MAX_BINS);
        let step = (hi - lo) / bins as f64;
        let edges = (0..=bins).map(|k| lo + k as f64 * step).collect();
        let mut counts = vec![0u64; bins];
        for &v in values {
            let k = (((v - lo) / step) as usize).min(bins - 1);
            counts[k] += 1;
        }
        Self { edges, counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// `bin_start,bin_end,count` rows with a header.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_start,bin_end,count\n");
        for (k, c) in self.counts.iter().enumerate() {
            let _ = writeln!(s, "{},{},{}", self.edges[k], self.edges[k + 1], c);
        }
        s
    }
}

/// Linear-interpolated quantile of sorted data.
fn sorted_quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    match sorted.get(i + 1) {
        Some(next) => sorted[i] + frac * (next - sorted[i]),
        None => sorted[i],
    }
}

/// Summary of a metric over all unordered pairs of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub mean: f64,
    pub std: f64,
    /// `std / mean`.
    pub cv: f64,
    pub min: f64,
    pub max: f64,
    /// Number of items in the dataset.
    pub n: usize,
    /// `n(n-1)/2`; the histogram counts sum to this.
    pub pairs: usize,
    pub histogram: Histogram,
}

impl DatasetStats {
    /// Builds the summary from already-evaluated pair values.
    pub fn from_values(n: usize, values: &[f64], binning: Binning) -> Self {
        let (mean, std) = mean_std(values);
        Self {
            mean,
            std,
            cv: std / mean,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            n,
            pairs: values.len(),
            histogram: Histogram::build(values, binning),
        }
    }

    /// True if every value here lies strictly below every value of `other`.
    pub fn separated_below(&self, other: &DatasetStats) -> bool {
        self.max < other.min
    }
}

/// Evaluates `metric` over all unordered pairs `(i, j)`, `i < j`.
///
/// Rows are evaluated in parallel but values are reduced in `(i, j)` order,
/// so the statistics are independent of scheduling.
pub fn pairwise_values<T, F>(items: &[T], metric: F) -> Result<Vec<f64>>
where
    T: Sync,
    F: Fn(&T, &T) -> Result<f64> + Sync,
{
    if items.len() < 2 {
        return Err(Error::invalid(format!(
            "pairwise statistics need at least 2 items, got {}",
            items.len()
        )));
    }
    let rows: Vec<Vec<f64>> = (0..items.len())
        .into_par_iter()
        .map(|i| {
            items[i + 1..]
                .iter()
                .map(|b| metric(&items[i], b))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(rows.concat())
}

pub fn pairwise_stats<T, F>(items: &[T], metric: F, binning: Binning) -> Result<DatasetStats>
where
    T: Sync,
    F: Fn(&T, &T) -> Result<f64> + Sync,
{
    let values = pairwise_values(items, metric)?;
    Ok(DatasetStats::from_values(items.len(), &values, binning))
}

/// Pairwise Euclidean distances between normalised frames.
pub fn euclidean_stats(images: &[NormalizedImage], binning: Binning) -> Result<DatasetStats> {
    pairwise_stats(images, euclidean_distance, binning)
}

/// Pairwise fractional Hamming distances between fingerprints.
pub fn hamming_stats(prints: &[BitString], binning: Binning) -> Result<DatasetStats> {
    pairwise_stats(prints, hamming_distance, binning)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn img(w: usize, h: usize, f: impl Fn(usize, usize) -> u8) -> SpeckleImage {
        let grey = (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        SpeckleImage::new(Dims::new(w, h), grey).unwrap()
    }

    #[test]
    fn normalisation_values() {
        assert!(normalize_image(&img(2, 2, |_, _| 0)).values().iter().all(|&v| v == 0.0));
        assert!(normalize_image(&img(2, 2, |_, _| 255)).values().iter().all(|&v| v == 1.0));
        assert_eq!(normalize_image(&img(1, 1, |_, _| 51)).values()[0], 0.2);
    }

    #[test]
    fn euclidean_examples() {
        let zero = normalize_image(&img(4, 4, |_, _| 0));
        let one = normalize_image(&img(4, 4, |_, _| 255));
        assert_eq!(euclidean_distance(&zero, &zero).unwrap(), 0.0);
        assert!((euclidean_distance(&zero, &one).unwrap() - 4.0).abs() < 1e-12);
        let other = normalize_image(&img(2, 8, |_, _| 0));
        assert!(matches!(euclidean_distance(&zero, &other), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn hamming_examples() {
        let a = BitString::from_ascii("10110").unwrap();
        let b = BitString::from_ascii("10011").unwrap();
        assert!((hamming_distance(&a, &b).unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(hamming_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(hamming_distance(&a, &a.complement()).unwrap(), 1.0);
        assert!(hamming_distance(&a, &BitString::from_ascii("1").unwrap()).is_err());
        assert!(hamming_distance(&BitString::new(), &BitString::new()).is_err());
    }

    #[test]
    fn kernel_has_zero_dc() {
        let k = GaborKernel::new(&GaborParams::default()).unwrap();
        assert!(k.dc().abs() < 1e-12);
        assert_eq!(k.radius(), 12);
    }

    #[test]
    fn grid_size_is_documented_value() {
        assert_eq!(GaborParams::default().grid(Dims::square(256)), Some((29, 29)));
        assert_eq!(GaborParams::default().grid(Dims::square(24)), None);
    }

    #[test]
    fn small_image_rejected() {
        let small = img(10, 10, |x, _| x as u8);
        assert!(matches!(gabor_hash(&small, &GaborParams::default()), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn hash_is_deterministic_and_complement_flips_bits() {
        let a = img(64, 64, |x, y| ((x * 37 + y * 101 + x * y * 13) % 251) as u8);
        let comp = img(64, 64, |x, y| 255 - a.get(x, y));
        let p = GaborParams::default();
        assert_eq!(gabor_hash(&a, &p).unwrap(), gabor_hash(&a, &p).unwrap());
        let ra = gabor_response(&a, &p).unwrap();
        let rc = gabor_response(&comp, &p).unwrap();
        let ha = gabor_hash(&a, &p).unwrap();
        let hc = gabor_hash(&comp, &p).unwrap();
        let mut checked = 0;
        for (k, (x, y)) in ra.iter().zip(&rc).enumerate() {
            assert!((x + y).abs() < 1e-9, "responses are not negatives");
            if x.abs() > 1e-9 {
                assert_ne!(ha.get(k), hc.get(k));
                checked += 1;
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn pairwise_stats_examples() {
        let a = normalize_image(&img(3, 3, |_, _| 7));
        let s = euclidean_stats(&[a.clone(), a.clone()], Binning::default()).unwrap();
        assert_eq!((s.mean, s.std, s.pairs), (0.0, 0.0, 1));

        let s = pairwise_stats(&[0, 1, 2], |_, _| Ok(1.0), Binning::default()).unwrap();
        assert_eq!((s.mean, s.std, s.cv, s.pairs), (1.0, 0.0, 0.0, 3));
        assert_eq!(s.histogram.total(), 3);

        assert!(pairwise_stats(&[0], |_, _| Ok(1.0), Binning::default()).is_err());
    }

    #[test]
    fn pair_count_law() {
        let s = pairwise_stats(&(0..100).collect::<Vec<_>>(), |a, b| Ok((a * b) as f64), Binning::Fixed(7)).unwrap();
        assert_eq!(s.pairs, 4950);
        assert_eq!(s.histogram.total(), 4950);
        assert_eq!(s.histogram.counts.len(), 7);
        assert!((s.cv * s.mean - s.std).abs() < 1e-9);
    }

    #[test]
    fn histogram_csv_layout() {
        let h = Histogram::build(&[0.0, 1.0, 1.0, 2.0], Binning::Fixed(2));
        assert_eq!(h.to_csv(), "bin_start,bin_end,count\n0,1,1\n1,2,3\n");
    }

    proptest! {
        #[test]
        fn euclidean_metric_axioms(
            a in proptest::collection::vec(any::<u8>(), 16),
            b in proptest::collection::vec(any::<u8>(), 16),
            c in proptest::collection::vec(any::<u8>(), 16),
        ) {
            let n = |v: &Vec<u8>| normalize_image(&SpeckleImage::new(Dims::square(4), v.clone()).unwrap());
            let (a, b, c) = (n(&a), n(&b), n(&c));
            let ab = euclidean_distance(&a, &b).unwrap();
            prop_assert_eq!(ab, euclidean_distance(&b, &a).unwrap());
            prop_assert_eq!(euclidean_distance(&a, &a).unwrap(), 0.0);
            prop_assert!(a == b || ab > 0.0);
            let ac = euclidean_distance(&a, &c).unwrap();
            let cb = euclidean_distance(&c, &b).unwrap();
            prop_assert!(ab <= ac + cb + 1e-12);
        }

        #[test]
        fn hamming_symmetric_and_complement_invariant(
            a in proptest::collection::vec(any::<bool>(), 1..100),
            seed in any::<u64>(),
        ) {
            let b: Vec<bool> = a.iter().enumerate().map(|(i, &x)| x ^ (seed >> (i % 64) & 1 == 1)).collect();
            let a = BitString::from_bits(a);
            let b = BitString::from_bits(b);
            let d = hamming_distance(&a, &b).unwrap();
            prop_assert_eq!(d, hamming_distance(&b, &a).unwrap());
            prop_assert_eq!(d, hamming_distance(&a.complement(), &b.complement()).unwrap());
        }
    }
}
