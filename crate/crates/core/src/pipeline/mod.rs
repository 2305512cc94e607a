//! End-to-end orchestration over an output directory.
//!
//! Layout under the output directory:
//!
//! ```text
//! config.toml                       resolved configuration
//! dataset/manifest.json             frame list and seeds
//! dataset/{intra,inter}/frame_NNNNN.pgm (+ .json sidecar)
//! dataset/timing.json
//! characterize/stats.json, {euclidean,hamming}_{intra,inter}.csv
//! calibrate/entropy_report.json, grey_histogram.csv
//! extract/bitstream.bin, bitstream.txt, provenance.json, throughput.json
//! test/report.json, p_values.csv, summary.txt
//! pipeline/summary.json
//! bench/bench.json
//! ```

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

pub use config::{BatterySettings, BenchSettings, DatasetSettings, ExtractorSettings, OutputSettings, PipelineConfig};

use crate::bits::BitString;
use crate::entropy::{grey_histogram, EntropyReport};
use crate::error::{Error, Result};
use crate::extractor::{extract, sha256, ExtractorConfig, Provenance, RandomBitstream};
use crate::metrics::{euclidean_stats, gabor_hash, hamming_stats, normalize_image, Binning, DatasetStats, GaborParams};
use crate::puf_sim::{render_batch, uniform_phase_pattern, Dims, NoiseParams, PhasePattern, PufModel, PufParams, SpeckleImage};
use crate::stats::ChiSquareTest;
use crate::validation::{decorrelation, pearson, run_battery, DecorrelationReport, TestReport};

/// Headline rate of the camera-bound optical setup, bits per second.
pub const OPTICAL_REFERENCE_BITS_PER_SECOND: f64 = 0.96e9;

const BITSTREAM_REL: &str = "extract/bitstream.bin";

/// Paths of every artifact under an output root.
#[derive(Debug, Clone)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset")
    }

    pub fn manifest(&self) -> PathBuf {
        self.dataset().join("manifest.json")
    }

    pub fn characterize(&self) -> PathBuf {
        self.root.join("characterize")
    }

    pub fn calibrate(&self) -> PathBuf {
        self.root.join("calibrate")
    }

    pub fn entropy_report(&self) -> PathBuf {
        self.calibrate().join("entropy_report.json")
    }

    pub fn extract(&self) -> PathBuf {
        self.root.join("extract")
    }

    pub fn bitstream(&self) -> PathBuf {
        self.root.join(BITSTREAM_REL)
    }

    pub fn test(&self) -> PathBuf {
        self.root.join("test")
    }

    pub fn pipeline(&self) -> PathBuf {
        self.root.join("pipeline")
    }

    pub fn bench(&self) -> PathBuf {
        self.root.join("bench")
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Internal(e.to_string()))?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

// ---------------------------------------------------------------- simulate

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameKind {
    Intra,
    Inter,
}

impl FrameKind {
    pub fn dir_name(self) -> &'static str {
        match self {
            FrameKind::Intra => "intra",
            FrameKind::Inter => "inter",
        }
    }
}

/// Per-frame provenance, also written as the frame's JSON sidecar.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameMeta {
    pub kind: FrameKind,
    pub index: usize,
    /// Relative to the dataset directory.
    pub file: String,
    pub puf_seed: u64,
    pub pattern_seed: u64,
    pub noise_seed: u64,
    /// Hex SHA-256 of the raster bytes.
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_digest: String,
    pub puf: PufParams,
    pub noise: NoiseParams,
    pub exposure_percentile: f64,
    pub frame_dims: Dims,
    pub intra: Vec<FrameMeta>,
    pub inter: Vec<FrameMeta>,
}

/// Frames plus their manifest.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: Manifest,
    pub intra: Vec<SpeckleImage>,
    pub inter: Vec<SpeckleImage>,
}

impl Dataset {
    pub fn inter_pattern_seeds(&self) -> Vec<u64> {
        self.manifest.inter.iter().map(|m| m.pattern_seed).collect()
    }
}

/// `(pattern_seed, noise_seed)` of every frame: intra frames share the base
/// pattern seed; inter frame `k` uses `base + 1 + k`. Noise seeds are
/// consecutive from `noise.noise_seed` across intra then inter.
pub fn frame_seeds(cfg: &PipelineConfig, kind: FrameKind) -> Vec<(u64, u64)> {
    let d = &cfg.dataset;
    let n0 = cfg.noise.noise_seed;
    match kind {
        FrameKind::Intra => (0..d.intra_frames as u64)
            .map(|k| (d.pattern_seed_base, n0 + k))
            .collect(),
        FrameKind::Inter => (0..d.inter_frames as u64)
            .map(|k| (d.pattern_seed_base + 1 + k, n0 + d.intra_frames as u64 + k))
            .collect(),
    }
}

fn render_frames(puf: &PufModel, cfg: &PipelineConfig, seeds: &[(u64, u64)]) -> Result<Vec<SpeckleImage>> {
    let patterns: Vec<PhasePattern> = seeds
        .par_iter()
        .map(|&(p, _)| uniform_phase_pattern(p, cfg.puf.in_dims))
        .collect::<Result<_>>()?;
    let noises: Vec<NoiseParams> = seeds.iter().map(|&(_, n)| cfg.noise.with_seed(n)).collect();
    render_batch(puf, &patterns, &noises, cfg.dataset.exposure_percentile)
}

/// Renders both datasets in memory.
pub fn simulate(cfg: &PipelineConfig) -> Result<Dataset> {
    cfg.validate()?;
    let puf = PufModel::new(cfg.puf)?;
    let digest = cfg.digest();
    let mut out = Vec::new();
    for kind in [FrameKind::Intra, FrameKind::Inter] {
        let seeds = frame_seeds(cfg, kind);
        let frames = render_frames(&puf, cfg, &seeds)?;
        let metas = seeds
            .iter()
            .zip(&frames)
            .enumerate()
            .map(|(index, (&(pattern_seed, noise_seed), img))| FrameMeta {
                kind,
                index,
                file: format!("{}/frame_{index:05}.pgm", kind.dir_name()),
                puf_seed: cfg.puf.seed,
                pattern_seed,
                noise_seed,
                sha256: hex::encode(sha256(img.pixels())),
            })
            .collect::<Vec<_>>();
        out.push((frames, metas));
    }
    let (inter, inter_meta) = out.pop().expect("two kinds");
    let (intra, intra_meta) = out.pop().expect("two kinds");
    Ok(Dataset {
        manifest: Manifest {
            config_digest: digest,
            puf: cfg.puf,
            noise: cfg.noise,
            exposure_percentile: cfg.dataset.exposure_percentile,
            frame_dims: cfg.puf.out_dims,
            intra: intra_meta,
            inter: inter_meta,
        },
        intra,
        inter,
    })
}

/// Writes frames, sidecars and the manifest under `dir`.
pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    for kind in [FrameKind::Intra, FrameKind::Inter] {
        create_dir(&dir.join(kind.dir_name()))?;
    }
    let all = ds
        .manifest
        .intra
        .iter()
        .zip(&ds.intra)
        .chain(ds.manifest.inter.iter().zip(&ds.inter));
    for (meta, img) in all {
        let path = dir.join(&meta.file);
        img.write_pgm(&path)?;
        write_json(&path.with_extension("json"), meta)?;
    }
    write_json(&dir.join("manifest.json"), &ds.manifest)
}

/// Reads a dataset back; every missing frame is named in the error.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest: Manifest = read_json(&dir.join("manifest.json"))?;
    let missing: Vec<&str> = manifest
        .intra
        .iter()
        .chain(&manifest.inter)
        .filter(|m| !dir.join(&m.file).is_file())
        .map(|m| m.file.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Format {
            path: dir.to_path_buf(),
            message: format!("{} missing frame(s): {}", missing.len(), missing.join(", ")),
        });
    }
    let load = |metas: &[FrameMeta]| -> Result<Vec<SpeckleImage>> {
        metas.par_iter().map(|m| SpeckleImage::read_pgm(&dir.join(&m.file))).collect()
    };
    let intra = load(&manifest.intra)?;
    let inter = load(&manifest.inter)?;
    Ok(Dataset { manifest, intra, inter })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationTiming {
    pub frames: usize,
    pub seconds: f64,
}

/// Simulates and persists the datasets; returns the in-memory copy too.
pub fn cmd_simulate(cfg: &PipelineConfig) -> Result<(Dataset, SimulationTiming)> {
    cfg.validate()?;
    let layout = Layout::new(cfg.out_dir());
    create_dir(layout.root())?;
    write_bytes(&layout.config(), cfg.to_toml().as_bytes())?;
    let t = Instant::now();
    let ds = simulate(cfg)?;
    let timing = SimulationTiming {
        frames: ds.intra.len() + ds.inter.len(),
        seconds: t.elapsed().as_secs_f64(),
    };
    write_dataset(&layout.dataset(), &ds)?;
    write_json(&layout.dataset().join("timing.json"), &timing)?;
    Ok((ds, timing))
}

// ------------------------------------------------------------ characterize

/// One metric over both datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub intra: DatasetStats,
    pub inter: DatasetStats,
    /// Every intra value lies below every inter value.
    pub separated: bool,
}

impl Comparison {
    fn new(intra: DatasetStats, inter: DatasetStats) -> Self {
        Self {
            separated: intra.separated_below(&inter),
            intra,
            inter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharacterizeReport {
    pub config_digest: String,
    pub euclidean: Comparison,
    pub hamming: Comparison,
    pub gabor: GaborParams,
    pub fingerprint_bits: usize,
}

/// Pairwise Euclidean and Gabor-hash statistics of both datasets.
pub fn characterize(ds: &Dataset, gabor: &GaborParams) -> Result<CharacterizeReport> {
    for (name, frames) in [("intra", &ds.intra), ("inter", &ds.inter)] {
        if frames.len() < 2 {
            return Err(Error::invalid(format!(
                "{name} dataset has {} frame(s); at least 2 are required",
                frames.len()
            )));
        }
    }
    let euclid = |frames: &[SpeckleImage]| {
        let norm: Vec<_> = frames.par_iter().map(normalize_image).collect();
        euclidean_stats(&norm, Binning::default())
    };
    let hashes = |frames: &[SpeckleImage]| -> Result<Vec<BitString>> {
        frames.par_iter().map(|f| gabor_hash(f, gabor)).collect()
    };
    let intra_h = hashes(&ds.intra)?;
    let inter_h = hashes(&ds.inter)?;
    Ok(CharacterizeReport {
        config_digest: ds.manifest.config_digest.clone(),
        euclidean: Comparison::new(euclid(&ds.intra)?, euclid(&ds.inter)?),
        fingerprint_bits: intra_h[0].len(),
        hamming: Comparison::new(
            hamming_stats(&intra_h, Binning::default())?,
            hamming_stats(&inter_h, Binning::default())?,
        ),
        gabor: *gabor,
    })
}

fn write_characterization(dir: &Path, r: &CharacterizeReport) -> Result<()> {
    for (metric, c) in [("euclidean", &r.euclidean), ("hamming", &r.hamming)] {
        write_bytes(&dir.join(format!("{metric}_intra.csv")), c.intra.histogram.to_csv().as_bytes())?;
        write_bytes(&dir.join(format!("{metric}_inter.csv")), c.inter.histogram.to_csv().as_bytes())?;
    }
    write_json(&dir.join("stats.json"), r)
}

pub fn cmd_characterize(cfg: &PipelineConfig) -> Result<CharacterizeReport> {
    let layout = Layout::new(cfg.out_dir());
    let ds = load_dataset(&layout.dataset())?;
    let r = characterize(&ds, &cfg.gabor)?;
    write_characterization(&layout.characterize(), &r)?;
    Ok(r)
}

// --------------------------------------------------------------- calibrate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub config_digest: String,
    pub entropy: EntropyReport,
    /// Chi-square of the pooled raw grey histogram against uniform.
    pub raw_uniformity: Option<ChiSquareTest>,
}

/// Min-entropy of the inter dataset and the block length it implies.
pub fn calibrate(ds: &Dataset) -> Result<(CalibrationReport, String)> {
    let hist = grey_histogram(&ds.inter)?;
    let entropy = EntropyReport::from_histogram(&hist, format!("{} inter frames", ds.inter.len()))?;
    Ok((
        CalibrationReport {
            config_digest: ds.manifest.config_digest.clone(),
            entropy,
            raw_uniformity: hist.uniformity(),
        },
        hist.to_csv(),
    ))
}

pub fn cmd_calibrate(cfg: &PipelineConfig) -> Result<CalibrationReport> {
    let layout = Layout::new(cfg.out_dir());
    let ds = load_dataset(&layout.dataset())?;
    let (r, csv) = calibrate(&ds)?;
    write_json(&layout.entropy_report(), &r)?;
    write_bytes(&layout.calibrate().join("grey_histogram.csv"), csv.as_bytes())?;
    Ok(r)
}

// ----------------------------------------------------------------- extract

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockBitsSource {
    CommandLine,
    Config,
    Calibration,
}

/// Picks the block length: explicit override, then config, then the
/// persisted calibration.
pub fn resolve_block_bits(cfg: &PipelineConfig, explicit: Option<usize>) -> Result<(usize, BlockBitsSource)> {
    if let Some(b) = explicit {
        return Ok((b, BlockBitsSource::CommandLine));
    }
    if let Some(b) = cfg.extractor.block_bits {
        return Ok((b, BlockBitsSource::Config));
    }
    let path = Layout::new(cfg.out_dir()).entropy_report();
    if !path.is_file() {
        return Err(Error::config(
            "extractor.block_bits",
            format!("not set and no calibration at {}; run calibrate or pass a block length", path.display()),
        ));
    }
    let r: CalibrationReport = read_json(&path)?;
    Ok((r.entropy.block_bits, BlockBitsSource::Calibration))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputReport {
    pub frames: usize,
    pub raw_bits_in: u64,
    pub random_bits_out: u64,
    pub block_bits: usize,
    pub span_images: bool,
    /// Extraction only: frame bytes to bitstream.
    pub wall_seconds: f64,
    pub bits_per_second: f64,
    /// Frame synthesis, when known; never part of `bits_per_second`.
    pub simulation_seconds: Option<f64>,
    pub stages: Vec<StageTiming>,
    pub optical_reference_bits_per_second: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionRecord {
    pub provenance: Provenance,
    pub dataset_config_digest: String,
    pub extractor: ExtractorConfig,
    pub block_bits_source: BlockBitsSource,
    pub frames: usize,
    pub raw_bits: u64,
    pub blocks: usize,
    pub output_bits: u64,
    /// Hex SHA-256 of `bitstream.bin`.
    pub bitstream_sha256: String,
}

/// Hashes the inter frames; returns the stream and the timed report.
pub fn extract_dataset(
    ds: &Dataset,
    ext: &ExtractorConfig,
    simulation_seconds: Option<f64>,
) -> Result<(RandomBitstream, ThroughputReport)> {
    let t = Instant::now();
    let stream = extract(&ds.inter, ext)?.ok_or_else(|| {
        Error::invalid(format!(
            "{} frames yield no complete {}-bit block",
            ds.inter.len(),
            ext.block_bits
        ))
    })?;
    let wall = t.elapsed().as_secs_f64();
    let stream = stream.with_sources(ds.manifest.puf.seed, ds.inter_pattern_seeds());
    let out_bits = stream.bits.len() as u64;
    let mut stages = Vec::new();
    if let Some(s) = simulation_seconds {
        stages.push(StageTiming {
            stage: "simulate".into(),
            seconds: s,
        });
    }
    stages.push(StageTiming {
        stage: "extract".into(),
        seconds: wall,
    });
    let report = ThroughputReport {
        frames: ds.inter.len(),
        raw_bits_in: stream.raw_bits,
        random_bits_out: out_bits,
        block_bits: ext.block_bits,
        span_images: ext.span_images,
        wall_seconds: wall,
        bits_per_second: out_bits as f64 / wall.max(1e-12),
        simulation_seconds,
        stages,
        optical_reference_bits_per_second: OPTICAL_REFERENCE_BITS_PER_SECOND,
    };
    Ok((stream, report))
}

fn write_extraction(
    layout: &Layout,
    ds: &Dataset,
    ext: &ExtractorConfig,
    source: BlockBitsSource,
    stream: &RandomBitstream,
    throughput: &ThroughputReport,
    export_ascii: bool,
) -> Result<ExtractionRecord> {
    let dir = layout.extract();
    write_bytes(&layout.bitstream(), stream.as_bytes())?;
    if export_ascii {
        let mut text = stream.bits.to_ascii();
        text.push('\n');
        write_bytes(&dir.join("bitstream.txt"), text.as_bytes())?;
    }
    let record = ExtractionRecord {
        provenance: stream.provenance.clone(),
        dataset_config_digest: ds.manifest.config_digest.clone(),
        extractor: *ext,
        block_bits_source: source,
        frames: ds.inter.len(),
        raw_bits: stream.raw_bits,
        blocks: stream.blocks,
        output_bits: stream.bits.len() as u64,
        bitstream_sha256: hex::encode(sha256(stream.as_bytes())),
    };
    write_json(&dir.join("provenance.json"), &record)?;
    write_json(&dir.join("throughput.json"), throughput)?;
    Ok(record)
}

pub fn cmd_extract(
    cfg: &PipelineConfig,
    block_bits: Option<usize>,
    export_ascii: bool,
) -> Result<(ExtractionRecord, ThroughputReport)> {
    let layout = Layout::new(cfg.out_dir());
    let (bits, source) = resolve_block_bits(cfg, block_bits)?;
    let ext = cfg.extractor.resolve(bits)?;
    let ds = load_dataset(&layout.dataset())?;
    let sim = read_json::<SimulationTiming>(&layout.dataset().join("timing.json"))
        .ok()
        .map(|t| t.seconds);
    let (stream, throughput) = extract_dataset(&ds, &ext, sim)?;
    let record = write_extraction(&layout, &ds, &ext, source, &stream, &throughput, export_ascii)?;
    Ok((record, throughput))
}

// -------------------------------------------------------------------- test

/// Reads a raw MSB-first bitstream file.
pub fn read_bitstream(path: &Path) -> Result<BitString> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(BitString::from_bytes(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestRecord {
    /// Relative to the output directory when it is the extracted stream.
    pub input: PathBuf,
    pub input_sha256: String,
    pub report: TestReport,
}

fn write_test(dir: &Path, record: &TestRecord) -> Result<()> {
    write_json(&dir.join("report.json"), record)?;
    write_bytes(&dir.join("p_values.csv"), record.report.p_values_csv().as_bytes())?;
    write_bytes(&dir.join("summary.txt"), record.report.table().as_bytes())
}

fn battery(cfg: &PipelineConfig, bits: &BitString) -> Result<TestReport> {
    let b = &cfg.battery;
    run_battery(bits, b.subsequence_bits, b.alpha, &b.nist)
}

/// Runs the battery on `input`, or on the extracted bitstream by default.
pub fn cmd_test(cfg: &PipelineConfig, input: Option<&Path>) -> Result<TestRecord> {
    let layout = Layout::new(cfg.out_dir());
    let (path, shown) = match input {
        Some(p) => (p.to_path_buf(), p.to_path_buf()),
        None => (layout.bitstream(), PathBuf::from(BITSTREAM_REL)),
    };
    let bits = read_bitstream(&path)?;
    let record = TestRecord {
        input_sha256: hex::encode(sha256(bits.as_bytes())),
        input: shown,
        report: battery(cfg, &bits)?,
    };
    write_test(&layout.test(), &record)?;
    Ok(record)
}

// ---------------------------------------------------------------- pipeline

/// Correlation between SLM pattern bits and output bits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatternCorrelation {
    pub rho: f64,
    pub n_bits: usize,
    /// `4 / sqrt(n_bits)`.
    pub bound: f64,
    pub within_bound: bool,
}

/// Quantised pattern bits of the inter frames, in frame order, against the
/// same number of leading output bits.
pub fn pattern_correlation(cfg: &PipelineConfig, ds: &Dataset, stream: &BitString) -> Result<PatternCorrelation> {
    let patterns: Vec<Vec<u8>> = ds
        .manifest
        .inter
        .par_iter()
        .map(|m| uniform_phase_pattern(m.pattern_seed, cfg.puf.in_dims).map(|p| p.quantized_bytes()))
        .collect::<Result<_>>()?;
    let pattern_bits = BitString::from_bytes(patterns.concat());
    let n = pattern_bits.len().min(stream.len());
    let to_f = |b: &BitString| -> Vec<f64> { b.iter().take(n).map(|x| f64::from(u8::from(x))).collect() };
    let rho = pearson(&to_f(&pattern_bits), &to_f(stream))?;
    let bound = 4.0 / (n as f64).sqrt();
    Ok(PatternCorrelation {
        rho,
        n_bits: n,
        bound,
        within_bound: rho.abs() <= bound,
    })
}

/// Consecutive-frame Pearson before and after per-frame hashing.
pub fn frame_decorrelation(frames: &[SpeckleImage], ext: &ExtractorConfig) -> Result<DecorrelationReport> {
    let per_frame = ExtractorConfig {
        span_images: false,
        ..*ext
    };
    let hashed: Vec<Vec<u8>> = frames
        .par_iter()
        .map(|f| {
            let out = extract(std::slice::from_ref(f), &per_frame)?
                .ok_or_else(|| Error::invalid("frame smaller than one block"))?;
            Ok(out.bits.into_bytes())
        })
        .collect::<Result<_>>()?;
    let raw: Vec<&[u8]> = frames.iter().map(|f| f.pixels()).collect();
    let hashed: Vec<&[u8]> = hashed.iter().map(Vec::as_slice).collect();
    decorrelation(&raw, &hashed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub config_digest: String,
    pub frames: usize,
    pub euclidean_separated: bool,
    pub inter_hd_mean: f64,
    pub inter_hd_cv: f64,
    pub h_min: f64,
    pub block_bits: usize,
    pub block_bits_source: BlockBitsSource,
    pub output_bits: u64,
    pub bitstream_sha256: String,
    pub battery_passed: bool,
    pub pattern_correlation: PatternCorrelation,
    pub decorrelation: DecorrelationReport,
    /// Battery passed and the pattern correlation is within its bound.
    pub passed: bool,
}

/// Every stage in order; the first failure aborts with the stage name.
pub fn cmd_pipeline(cfg: &PipelineConfig, block_bits: Option<usize>, export_ascii: bool) -> Result<PipelineSummary> {
    cfg.validate()?;
    let layout = Layout::new(cfg.out_dir());

    let (ds, timing) = cmd_simulate(cfg).map_err(Error::stage("simulate"))?;

    let character = characterize(&ds, &cfg.gabor)
        .and_then(|r| write_characterization(&layout.characterize(), &r).map(|_| r))
        .map_err(Error::stage("characterize"))?;

    let calibration = calibrate(&ds)
        .and_then(|(r, csv)| {
            write_json(&layout.entropy_report(), &r)?;
            write_bytes(&layout.calibrate().join("grey_histogram.csv"), csv.as_bytes())?;
            Ok(r)
        })
        .map_err(Error::stage("calibrate"))?;

    let (ext, source, stream, record) = (|| {
        let (bits, source) = match block_bits.or(cfg.extractor.block_bits) {
            Some(b) if block_bits.is_some() => (b, BlockBitsSource::CommandLine),
            Some(b) => (b, BlockBitsSource::Config),
            None => (calibration.entropy.block_bits, BlockBitsSource::Calibration),
        };
        let ext = cfg.extractor.resolve(bits)?;
        let (stream, throughput) = extract_dataset(&ds, &ext, Some(timing.seconds))?;
        let record = write_extraction(&layout, &ds, &ext, source, &stream, &throughput, export_ascii)?;
        Ok((ext, source, stream, record))
    })()
    .map_err(Error::stage("extract"))?;

    let tested = battery(cfg, &stream.bits)
        .and_then(|report| {
            let record = TestRecord {
                input: PathBuf::from(BITSTREAM_REL),
                input_sha256: record.bitstream_sha256.clone(),
                report,
            };
            write_test(&layout.test(), &record)?;
            Ok(record)
        })
        .map_err(Error::stage("test"))?;

    let (pattern, decor) = pattern_correlation(cfg, &ds, &stream.bits)
        .and_then(|p| Ok((p, frame_decorrelation(&ds.inter, &ext)?)))
        .map_err(Error::stage("correlate"))?;

    let summary = PipelineSummary {
        config_digest: cfg.digest(),
        frames: ds.intra.len() + ds.inter.len(),
        euclidean_separated: character.euclidean.separated,
        inter_hd_mean: character.hamming.inter.mean,
        inter_hd_cv: character.hamming.inter.cv,
        h_min: calibration.entropy.h_min,
        block_bits: ext.block_bits,
        block_bits_source: source,
        output_bits: record.output_bits,
        bitstream_sha256: record.bitstream_sha256.clone(),
        battery_passed: tested.report.passed,
        pattern_correlation: pattern,
        decorrelation: decor,
        passed: tested.report.passed && pattern.within_bound,
    };
    write_json(&layout.pipeline().join("summary.json"), &summary).map_err(Error::stage("report"))?;
    Ok(summary)
}

// ------------------------------------------------------------------- bench

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionRate {
    pub threads: usize,
    /// Fastest of the repeats.
    pub seconds: f64,
    pub bits_out: u64,
    pub bits_per_second: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub frames: usize,
    pub frame_dims: Dims,
    pub block_bits: usize,
    pub simulation_seconds: f64,
    pub simulation_frames_per_second: f64,
    pub extraction: Vec<ExtractionRate>,
    pub optical_reference_bits_per_second: f64,
}

impl BenchReport {
    pub fn table(&self) -> String {
        let mut s = format!(
            "simulation: {} frames {}x{} in {:.3} s ({:.1} frames/s)\n",
            self.frames, self.frame_dims.width, self.frame_dims.height, self.simulation_seconds, self.simulation_frames_per_second
        );
        for r in &self.extraction {
            s.push_str(&format!(
                "extraction: {:>3} thread(s) {:>10.1} Mbit/s ({} bits in {:.4} s, block {} bits)\n",
                r.threads,
                r.bits_per_second / 1e6,
                r.bits_out,
                r.seconds,
                self.block_bits
            ));
        }
        s.push_str(&format!(
            "reference: optical setup {:.2} Gbit/s (camera bound)\n",
            self.optical_reference_bits_per_second / 1e9
        ));
        s
    }
}

/// Times the extraction path over `frames`, best of `repeats`, on a pool of
/// `threads` workers.
pub fn time_extraction(frames: &[SpeckleImage], ext: &ExtractorConfig, threads: usize, repeats: usize) -> Result<ExtractionRate> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Internal(e.to_string()))?;
    let mut best = f64::INFINITY;
    let mut bits_out = 0;
    for _ in 0..repeats.max(1) {
        let t = Instant::now();
        let out = pool.install(|| extract(frames, ext))?;
        best = best.min(t.elapsed().as_secs_f64());
        bits_out = out.map_or(0, |o| o.bits.len() as u64);
    }
    Ok(ExtractionRate {
        threads,
        seconds: best,
        bits_out,
        bits_per_second: bits_out as f64 / best.max(1e-12),
    })
}

pub fn cmd_bench(cfg: &PipelineConfig, block_bits: Option<usize>) -> Result<BenchReport> {
    cfg.validate()?;
    let puf = PufModel::new(cfg.puf)?;
    let n = cfg.bench.frames;
    let seeds: Vec<(u64, u64)> = (0..n as u64)
        .map(|k| (cfg.dataset.pattern_seed_base + 1 + k, cfg.noise.noise_seed + k))
        .collect();
    let t = Instant::now();
    let frames = render_frames(&puf, cfg, &seeds)?;
    let sim = t.elapsed().as_secs_f64();
    let bits = match block_bits.or(cfg.extractor.block_bits) {
        Some(b) => b,
        None => EntropyReport::from_histogram(&grey_histogram(&frames)?, "bench frames")?.block_bits,
    };
    let ext = cfg.extractor.resolve(bits)?;
    let mut extraction = vec![time_extraction(&frames, &ext, 1, cfg.bench.repeats)?];
    let all = rayon::current_num_threads();
    if all > 1 {
        extraction.push(time_extraction(&frames, &ext, all, cfg.bench.repeats)?);
    }
    let report = BenchReport {
        frames: n,
        frame_dims: cfg.puf.out_dims,
        block_bits: bits,
        simulation_seconds: sim,
        simulation_frames_per_second: n as f64 / sim.max(1e-12),
        extraction,
        optical_reference_bits_per_second: OPTICAL_REFERENCE_BITS_PER_SECOND,
    };
    write_json(&Layout::new(cfg.out_dir()).bench().join("bench.json"), &report)?;
    Ok(report)
}
