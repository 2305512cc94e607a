//! Speckle-image synthesis.
//!
//! An SLM phase pattern illuminates a stand-in for the scattering token: a
//! cascade of random phase screens separated by unitary spectral free-space
//! propagation. The camera stage maps intensity to 8-bit grey values with an
//! exposure percentile, shot noise and read noise.
//!
//! All randomness comes from ChaCha20 keyed by a 64-bit seed, with one stream
//! per purpose, so every result is reproducible across platforms and thread
//! counts.

mod fft;
mod image;
mod transmission;

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use image::SpeckleImage;
pub use transmission::TransmissionMatrix;

use fft::{bin_of, signed_freq, Fft2};

const PATTERN_STREAM: u64 = 0x5041_5454;
const SCREEN_STREAM: u64 = 0x5343_5200_0000_0000;
const NOISE_STREAM: u64 = 0x4E4F_4953;

/// The simulation generator for `seed`, on the stream reserved for `stream`.
pub fn sim_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Grid size in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub width: usize,
    pub height: usize,
}

impl Dims {
    pub const fn new(width: usize, height: usize) -> Self {
        Self { width, height }
    }

    pub const fn square(side: usize) -> Self {
        Self::new(side, side)
    }

    pub const fn area(&self) -> usize {
        self.width * self.height
    }

    fn check(&self, what: &str) -> Result<()> {
        if self.area() == 0 {
            return Err(Error::invalid(format!(
                "{what} must be positive, got {}x{}",
                self.width, self.height
            )));
        }
        Ok(())
    }
}

/// SLM configuration: one phase in `[0, 2π)` per modulator pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePattern {
    dims: Dims,
    phase: Vec<f64>,
}

impl PhasePattern {
    pub fn new(dims: Dims, phase: Vec<f64>) -> Result<Self> {
        dims.check("pattern dims")?;
        if phase.len() != dims.area() {
            return Err(Error::invalid("phase buffer does not match pattern dims"));
        }
        if let Some(p) = phase.iter().find(|p| !(0.0..TAU).contains(*p)) {
            return Err(Error::invalid(format!("phase {p} outside [0, 2π)")));
        }
        Ok(Self { dims, phase })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn phases(&self) -> &[f64] {
        &self.phase
    }

    /// Returns a copy with pixel `(x, y)` shifted by `delta` radians (mod 2π).
    pub fn with_shifted_pixel(&self, x: usize, y: usize, delta: f64) -> Result<Self> {
        if x >= self.dims.width || y >= self.dims.height {
            return Err(Error::invalid(format!("pixel ({x}, {y}) outside pattern")));
        }
        let mut phase = self.phase.clone();
        let i = y * self.dims.width + x;
        phase[i] = wrap_phase(phase[i] + delta);
        Self::new(self.dims, phase)
    }

    /// Phases quantised to bytes, `floor(256·φ/2π)`, i.e. the values that
    /// would be written to an 8-bit SLM.
    pub fn quantized_bytes(&self) -> Vec<u8> {
        self.phase
            .iter()
            .map(|p| ((p / TAU) * 256.0).floor().min(255.0) as u8)
            .collect()
    }
}

fn wrap_phase(p: f64) -> f64 {
    let w = p.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if w >= TAU {
        0.0
    } else {
        w
    }
}

fn uniform_phases(rng: &mut ChaCha20Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| wrap_phase(rng.random::<f64>() * TAU))
        .collect()
}

/// I.i.d. uniform phases over `[0, 2π)` from the pattern stream of `seed`.
pub fn uniform_phase_pattern(seed: u64, dims: Dims) -> Result<PhasePattern> {
    dims.check("pattern dims")?;
    let mut rng = sim_rng(seed, PATTERN_STREAM);
    PhasePattern::new(dims, uniform_phases(&mut rng, dims.area()))
}

/// The parameter record that fully determines a [`PufModel`]; this is what
/// gets persisted, never the screens themselves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PufParams {
    pub seed: u64,
    pub num_screens: usize,
    pub in_dims: Dims,
    pub out_dims: Dims,
    /// Free-space hop between screens, in pixel² units: the spectral transfer
    /// function is `exp(-iπ·d·(fx² + fy²))` with `f` in cycles per pixel, so a
    /// point source spreads over roughly `d` output pixels per hop.
    pub propagation_distance: f64,
}

impl Default for PufParams {
    fn default() -> Self {
        Self {
            seed: 1,
            num_screens: 3,
            in_dims: Dims::square(64),
            out_dims: Dims::square(256),
            propagation_distance: 64.0,
        }
    }
}

impl PufParams {
    pub fn validate(&self) -> Result<()> {
        if self.num_screens == 0 {
            return Err(Error::invalid("num_screens must be at least 1"));
        }
        self.in_dims.check("in_dims")?;
        self.out_dims.check("out_dims")?;
        if !self.propagation_distance.is_finite() || self.propagation_distance < 0.0 {
            return Err(Error::invalid(format!(
                "propagation_distance must be finite and non-negative, got {}",
                self.propagation_distance
            )));
        }
        Ok(())
    }
}

/// Deterministic multi-screen scattering model standing in for the token.
#[derive(Clone)]
pub struct PufModel {
    params: PufParams,
    screens: Vec<Vec<f64>>,
    /// Free-space transfer function on the output grid, in FFT bin order.
    transfer: Vec<Complex64>,
    fft_in: Fft2,
    fft_out: Fft2,
}

impl std::fmt::Debug for PufModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PufModel").field("params", &self.params).finish_non_exhaustive()
    }
}

/// Builds the model for the given parameters.
pub fn create_puf(
    seed: u64,
    num_screens: usize,
    in_dims: Dims,
    out_dims: Dims,
    propagation_distance: f64,
) -> Result<PufModel> {
    PufModel::new(PufParams {
        seed,
        num_screens,
        in_dims,
        out_dims,
        propagation_distance,
    })
}

/// A complex optical field on a pixel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    dims: Dims,
    data: Vec<Complex64>,
}

impl Field {
    pub fn new(dims: Dims, data: Vec<Complex64>) -> Result<Self> {
        dims.check("field dims")?;
        if data.len() != dims.area() {
            return Err(Error::invalid("field buffer does not match dims"));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Dims) -> Self {
        Self {
            dims,
            data: vec![Complex64::new(0.0, 0.0); dims.area()],
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn values(&self) -> &[Complex64] {
        &self.data
    }

    pub fn intensity(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.norm_sqr()).collect()
    }

    /// Σ|E|², compensated.
    pub fn energy(&self) -> f64 {
        crate::stats::compensated_sum(self.data.iter().map(|c| c.norm_sqr()))
    }
}

impl PufModel {
    pub fn new(params: PufParams) -> Result<Self> {
        params.validate()?;
        let out = params.out_dims;
        let screens = (0..params.num_screens)
            .map(|k| {
                let mut rng = sim_rng(params.seed, SCREEN_STREAM + k as u64);
                uniform_phases(&mut rng, out.area())
            })
            .collect();
        Ok(Self {
            params,
            screens,
            transfer: transfer_function(out, params.propagation_distance),
            fft_in: Fft2::new(params.in_dims),
            fft_out: Fft2::new(out),
        })
    }

    pub fn params(&self) -> &PufParams {
        &self.params
    }

    pub fn in_dims(&self) -> Dims {
        self.params.in_dims
    }

    pub fn out_dims(&self) -> Dims {
        self.params.out_dims
    }

    /// Phase values of screen `k`, row-major on the output grid.
    pub fn screen(&self, k: usize) -> Option<&[f64]> {
        self.screens.get(k).map(Vec::as_slice)
    }

    /// Runs the SLM field `exp(iφ)` through the cascade.
    pub fn propagate(&self, pattern: &PhasePattern) -> Result<Field> {
        self.propagate_traced(pattern).map(|(field, _)| field)
    }

    /// Like [`propagate`](Self::propagate), also returning the field energy
    /// before the first step and after every propagation or screen step.
    pub fn propagate_traced(&self, pattern: &PhasePattern) -> Result<(Field, Vec<f64>)> {
        if pattern.dims() != self.params.in_dims {
            return Err(Error::invalid(format!(
                "pattern is {}x{}, model expects {}x{}",
                pattern.dims().width,
                pattern.dims().height,
                self.params.in_dims.width,
                self.params.in_dims.height
            )));
        }
        let mut energies = Vec::with_capacity(2 * self.params.num_screens + 1);
        let mut input: Vec<Complex64> = pattern
            .phases()
            .iter()
            .map(|&p| Complex64::from_polar(1.0, p))
            .collect();
        energies.push(energy(&input));

        // first hop: spectral resampling onto the camera grid, then free space
        self.fft_in.forward(&mut input);
        let mut field = self.resample_spectrum(&input);
        self.apply_transfer(&mut field);
        self.fft_out.inverse(&mut field);
        energies.push(energy(&field));

        for (k, screen) in self.screens.iter().enumerate() {
            if k > 0 {
                self.fft_out.forward(&mut field);
                self.apply_transfer(&mut field);
                self.fft_out.inverse(&mut field);
                energies.push(energy(&field));
            }
            for (e, &phi) in field.iter_mut().zip(screen) {
                *e *= Complex64::from_polar(1.0, phi);
            }
            energies.push(energy(&field));
        }
        Ok((
            Field {
                dims: self.params.out_dims,
                data: field,
            },
            energies,
        ))
    }

    /// Dense transmission matrix of this model, built with direct DFT sums.
    /// Only practical for small grids.
    pub fn transmission_matrix(&self) -> Result<TransmissionMatrix> {
        TransmissionMatrix::from_model(self)
    }

    /// Copies input-grid spectrum bins onto the output grid. Every input
    /// frequency is kept when upsampling, which makes this an isometry.
    fn resample_spectrum(&self, spec_in: &[Complex64]) -> Vec<Complex64> {
        let (i, o) = (self.params.in_dims, self.params.out_dims);
        if i == o {
            return spec_in.to_vec();
        }
        let mut out = vec![Complex64::new(0.0, 0.0); o.area()];
        for ky in 0..i.height {
            let Some(oy) = bin_of(signed_freq(ky, i.height), o.height) else {
                continue;
            };
            for kx in 0..i.width {
                if let Some(ox) = bin_of(signed_freq(kx, i.width), o.width) {
                    out[oy * o.width + ox] = spec_in[ky * i.width + kx];
                }
            }
        }
        out
    }

    fn apply_transfer(&self, spectrum: &mut [Complex64]) {
        for (s, h) in spectrum.iter_mut().zip(&self.transfer) {
            *s *= h;
        }
    }

    pub(crate) fn screens(&self) -> &[Vec<f64>] {
        &self.screens
    }
}

fn energy(v: &[Complex64]) -> f64 {
    crate::stats::compensated_sum(v.iter().map(|c| c.norm_sqr()))
}

/// `exp(-iπ d (fx² + fy²))` in FFT bin order, `f` in cycles per pixel.
pub(crate) fn transfer_function(dims: Dims, distance: f64) -> Vec<Complex64> {
    let mut h = Vec::with_capacity(dims.area());
    for ky in 0..dims.height {
        let fy = signed_freq(ky, dims.height) as f64 / dims.height as f64;
        for kx in 0..dims.width {
            let fx = signed_freq(kx, dims.width) as f64 / dims.width as f64;
            h.push(Complex64::from_polar(1.0, -PI * distance * (fx * fx + fy * fy)));
        }
    }
    h
}

/// Camera noise model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseParams {
    /// Photon-noise strength: a pixel at grey level `g` receives Gaussian
    /// noise of variance `shot_scale · g` (the normal limit of Poisson
    /// counting with `1/shot_scale` photons per grey level).
    pub shot_scale: f64,
    /// Additive Gaussian read noise, in grey levels.
    pub read_sigma: f64,
    pub noise_seed: u64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            shot_scale: 0.5,
            read_sigma: 2.0,
            noise_seed: 0,
        }
    }
}

impl NoiseParams {
    pub const NONE: Self = Self {
        shot_scale: 0.0,
        read_sigma: 0.0,
        noise_seed: 0,
    };

    pub fn with_seed(self, noise_seed: u64) -> Self {
        Self { noise_seed, ..self }
    }

    pub fn is_noiseless(&self) -> bool {
        self.shot_scale == 0.0 && self.read_sigma == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("shot_scale", self.shot_scale), ("read_sigma", self.read_sigma)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Quantises `|field|²` to an 8-bit frame.
///
/// The `exposure_percentile` quantile of the intensity maps to grey 255;
/// shot and read noise are then added, and values are clamped and rounded.
pub fn capture(field: &Field, noise: &NoiseParams, exposure_percentile: f64) -> Result<SpeckleImage> {
    if !(exposure_percentile > 0.0 && exposure_percentile <= 1.0) {
        return Err(Error::invalid(format!(
            "exposure_percentile must be in (0, 1], got {exposure_percentile}"
        )));
    }
    noise.validate()?;
    let intensity = field.intensity();
    if intensity.iter().any(|v| !v.is_finite()) {
        return Err(Error::Internal("non-finite value in optical field".into()));
    }
    let reference = quantile(&intensity, exposure_percentile);
    let gain = if reference > 0.0 { 255.0 / reference } else { 0.0 };

    let mut rng = sim_rng(noise.noise_seed, NOISE_STREAM);
    let grey = intensity
        .iter()
        .map(|&i| {
            let mut g = i * gain;
            if !noise.is_noiseless() {
                let shot: f64 = rng.sample(StandardNormal);
                let read: f64 = rng.sample(StandardNormal);
                g += (noise.shot_scale * g).sqrt() * shot + noise.read_sigma * read;
            }
            g.clamp(0.0, 255.0).round() as u8
        })
        .collect();
    SpeckleImage::new(field.dims(), grey)
}

/// Order statistic at rank `ceil(p·n)` (1-based).
fn quantile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    let k = ((p * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1;
    let (_, q, _) = v.select_nth_unstable_by(k, f64::total_cmp);
    *q
}

/// `capture(propagate(puf, pattern), …)`.
pub fn render(
    puf: &PufModel,
    pattern: &PhasePattern,
    noise: &NoiseParams,
    exposure_percentile: f64,
) -> Result<SpeckleImage> {
    capture(&puf.propagate(pattern)?, noise, exposure_percentile)
}

/// Renders frames in parallel; frame `k` uses `patterns[k]` and `noises[k]`.
pub fn render_batch(
    puf: &PufModel,
    patterns: &[PhasePattern],
    noises: &[NoiseParams],
    exposure_percentile: f64,
) -> Result<Vec<SpeckleImage>> {
    if patterns.len() != noises.len() {
        return Err(Error::invalid("one noise setting per pattern is required"));
    }
    patterns
        .par_iter()
        .zip(noises)
        .map(|(p, n)| render(puf, p, n, exposure_percentile))
        .collect()
}

/// Speckle contrast `σ_I / μ_I`.
pub fn intensity_contrast(field: &Field) -> f64 {
    let (mean, std) = crate::stats::mean_std(&field.intensity());
    std / mean
}
