//! The single TOML configuration behind every command.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extractor::{sha256, ExtractorConfig};
use crate::metrics::GaborParams;
use crate::puf_sim::{Dims, NoiseParams, PufParams};
use crate::validation::NistParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub puf: PufParams,
    pub dataset: DatasetSettings,
    pub noise: NoiseParams,
    pub gabor: GaborParams,
    pub extractor: ExtractorSettings,
    pub battery: BatterySettings,
    pub bench: BenchSettings,
    pub output: OutputSettings,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSettings {
    /// Pattern seed of the intra dataset; inter frame `k` uses `base + 1 + k`.
    pub pattern_seed_base: u64,
    /// Frames of one fixed pattern, differing only in camera noise.
    pub intra_frames: usize,
    /// Frames of distinct patterns.
    pub inter_frames: usize,
    pub exposure_percentile: f64,
}

impl Default for DatasetSettings {
    fn default() -> Self {
        Self {
            pattern_seed_base: 1000,
            intra_frames: 100,
            inter_frames: 200,
            exposure_percentile: 0.99,
        }
    }
}

/// Extractor settings; `block_bits` may be left to calibration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractorSettings {
    pub block_bits: Option<usize>,
    pub span_images: bool,
    pub crop: Option<Dims>,
}

impl ExtractorSettings {
    pub fn resolve(&self, block_bits: usize) -> Result<ExtractorConfig> {
        let cfg = ExtractorConfig {
            block_bits,
            span_images: self.span_images,
            crop: self.crop,
        };
        cfg.validate().map_err(at("extractor.block_bits"))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BatterySettings {
    pub subsequence_bits: usize,
    pub alpha: f64,
    pub nist: NistParams,
}

impl Default for BatterySettings {
    fn default() -> Self {
        Self {
            subsequence_bits: 1_000_000,
            alpha: 0.01,
            nist: NistParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSettings {
    /// Frames simulated and then extracted per measurement.
    pub frames: usize,
    pub repeats: usize,
}

impl Default for BenchSettings {
    fn default() -> Self {
        Self { frames: 64, repeats: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSettings {
    pub dir: PathBuf,
}

impl Default for OutputSettings {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

/// Maps a plain argument error onto a config field.
fn at(field: &'static str) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::InvalidArgument(m) => Error::config(field, m),
        e => e,
    }
}

fn require(ok: bool, field: &str, message: impl Into<String>) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::config(field, message))
    }
}

fn dims_ok(d: Dims, field: &str) -> Result<()> {
    require(d.area() > 0, field, format!("must be positive, got {}x{}", d.width, d.height))
}

fn finite_nonneg(v: f64, field: &str) -> Result<()> {
    require(v.is_finite() && v >= 0.0, field, format!("must be finite and >= 0, got {v}"))
}

fn toml_int(v: u64, field: &str) -> Result<()> {
    require(
        i64::try_from(v).is_ok(),
        field,
        format!("{v} does not fit a TOML integer (max {})", i64::MAX),
    )
}

impl PipelineConfig {
    /// Checks every field; the error names the first offending one.
    pub fn validate(&self) -> Result<()> {
        let p = &self.puf;
        toml_int(p.seed, "puf.seed")?;
        require(p.num_screens >= 1, "puf.num_screens", "must be at least 1")?;
        dims_ok(p.in_dims, "puf.in_dims")?;
        dims_ok(p.out_dims, "puf.out_dims")?;
        finite_nonneg(p.propagation_distance, "puf.propagation_distance")?;

        let d = &self.dataset;
        toml_int(d.pattern_seed_base, "dataset.pattern_seed_base")?;
        toml_int(
            d.pattern_seed_base.saturating_add(d.inter_frames as u64 + 1),
            "dataset.pattern_seed_base",
        )?;
        require(d.intra_frames >= 1, "dataset.intra_frames", "must be at least 1")?;
        require(d.inter_frames >= 1, "dataset.inter_frames", "must be at least 1")?;
        require(
            d.exposure_percentile > 0.0 && d.exposure_percentile <= 1.0,
            "dataset.exposure_percentile",
            format!("must be in (0, 1], got {}", d.exposure_percentile),
        )?;

        finite_nonneg(self.noise.shot_scale, "noise.shot_scale")?;
        finite_nonneg(self.noise.read_sigma, "noise.read_sigma")?;
        toml_int(self.noise.noise_seed, "noise.noise_seed")?;
        toml_int(
            self.noise
                .noise_seed
                .saturating_add((d.intra_frames + d.inter_frames) as u64),
            "noise.noise_seed",
        )?;

        let g = &self.gabor;
        require(g.wavelength.is_finite() && g.wavelength > 0.0, "gabor.wavelength", "must be positive")?;
        require(g.sigma.is_finite() && g.sigma > 0.0, "gabor.sigma", "must be positive")?;
        require(g.orientation_deg.is_finite(), "gabor.orientation_deg", "must be finite")?;
        require(g.stride >= 1, "gabor.stride", "must be positive")?;
        require(
            g.grid(p.out_dims).is_some(),
            "gabor.sigma",
            format!("kernel of radius {} does not fit puf.out_dims", g.radius()),
        )?;

        if let Some(b) = self.extractor.block_bits {
            self.extractor.resolve(b)?;
        }
        if let Some(c) = self.extractor.crop {
            dims_ok(c, "extractor.crop")?;
            require(
                c.width <= p.out_dims.width && c.height <= p.out_dims.height,
                "extractor.crop",
                "must fit inside puf.out_dims",
            )?;
        }

        let b = &self.battery;
        require(b.subsequence_bits >= 1, "battery.subsequence_bits", "must be positive")?;
        require(b.alpha > 0.0 && b.alpha < 1.0, "battery.alpha", format!("must be in (0, 1), got {}", b.alpha))?;
        require(b.nist.block_frequency_m >= 1, "battery.nist.block_frequency_m", "must be positive")?;
        require(
            (2..=24).contains(&b.nist.serial_m),
            "battery.nist.serial_m",
            "must be in 2..=24",
        )?;
        require(
            (1..=24).contains(&b.nist.approximate_entropy_m),
            "battery.nist.approximate_entropy_m",
            "must be in 1..=24",
        )?;

        require(self.bench.frames >= 1, "bench.frames", "must be at least 1")?;
        require(self.bench.repeats >= 1, "bench.repeats", "must be at least 1")?;
        require(!self.output.dir.as_os_str().is_empty(), "output.dir", "must not be empty")?;
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let field = e
                .span()
                .map(|s| format!("toml bytes {}..{}", s.start, s.end))
                .unwrap_or_else(|| "toml".into());
            Error::config(field, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises to TOML")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config { field, message } => Error::Config {
                field: format!("{}: {field}", path.display()),
                message,
            },
            e => e,
        })
    }

    /// Hex SHA-256 of the resolved config, ignoring the output directory so
    /// that reruns elsewhere carry the same digest.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.output = OutputSettings::default();
        hex::encode(sha256(&serde_json::to_vec(&c).expect("config serialises")))
    }

    pub fn out_dir(&self) -> &Path {
        &self.output.dir
    }
}
