//! SHA-256 block extraction.
//!
//! Raw frames are serialised row-major, one byte per pixel, cut into
//! consecutive `block_bits / 8`-byte blocks and each block is replaced by its
//! SHA-256 digest. Digests are concatenated in block order; a tail shorter
//! than one block is discarded. There is no salt, key or counter, so equal
//! blocks give equal digests.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bits::BitString;
use crate::entropy::{GreyHistogram, DIGEST_BITS};
use crate::error::{Error, Result};
use crate::puf_sim::{Dims, SpeckleImage};

const DIGEST_BYTES: usize = DIGEST_BITS / 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractorConfig {
    /// Raw input bits per digest; byte aligned and at least 256.
    pub block_bits: usize,
    /// Let blocks straddle frame boundaries. When false every frame is
    /// chopped on its own and its residual is dropped.
    #[serde(default)]
    pub span_images: bool,
    /// Use only the top-left sub-frame of each image.
    #[serde(default)]
    pub crop: Option<Dims>,
}

impl ExtractorConfig {
    pub fn new(block_bits: usize) -> Result<Self> {
        let cfg = Self {
            block_bits,
            span_images: false,
            crop: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.block_bits < DIGEST_BITS {
            return Err(Error::invalid(format!(
                "block_bits must be at least {DIGEST_BITS}, got {}",
                self.block_bits
            )));
        }
        if self.block_bits % 8 != 0 {
            return Err(Error::invalid(format!(
                "block_bits must be a multiple of 8, got {}",
                self.block_bits
            )));
        }
        if let Some(c) = self.crop {
            if c.area() == 0 {
                return Err(Error::invalid("crop dimensions must be positive"));
            }
        }
        Ok(())
    }

    pub fn block_bytes(&self) -> usize {
        self.block_bits / 8
    }

    /// Hex SHA-256 of the config's JSON form, used for provenance.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialises");
        hex::encode(sha256(&json))
    }

    /// Output bits produced from frames of the given raw bit counts.
    pub fn output_bits(&self, frame_bits: &[u64]) -> u64 {
        let b = self.block_bits as u64;
        let blocks = if self.span_images {
            frame_bits.iter().sum::<u64>() / b
        } else {
            frame_bits.iter().map(|f| f / b).sum()
        };
        blocks * DIGEST_BITS as u64
    }
}

/// Row-major raster bytes of a frame.
pub fn image_to_bytes(img: &SpeckleImage) -> &[u8] {
    img.pixels()
}

/// FIPS 180-4 SHA-256.
pub fn sha256(block: &[u8]) -> [u8; 32] {
    Sha256::digest(block).into()
}

/// Where a bitstream came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Provenance {
    pub puf_seed: Option<u64>,
    pub pattern_seeds: Vec<u64>,
    pub config_digest: String,
}

/// Extractor output.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomBitstream {
    pub bits: BitString,
    pub provenance: Provenance,
    pub raw_bits: u64,
    pub blocks: usize,
}

impl RandomBitstream {
    pub fn with_sources(mut self, puf_seed: u64, pattern_seeds: Vec<u64>) -> Self {
        self.provenance.puf_seed = Some(puf_seed);
        self.provenance.pattern_seeds = pattern_seeds;
        self
    }

    pub fn as_bytes(&self) -> &[u8] {
        self.bits.as_bytes()
    }

    /// Consecutive 256-bit output words.
    pub fn words(&self) -> impl Iterator<Item = BitString> + '_ {
        self.as_bytes()
            .chunks_exact(DIGEST_BYTES)
            .map(|w| BitString::from_bytes(w.to_vec()))
    }
}

/// Hashes every complete block of `segments`, treating each segment as an
/// independent source. Digests come back in block order for any thread count.
pub fn hash_blocks(segments: &[&[u8]], block_bytes: usize) -> Vec<u8> {
    let blocks: Vec<&[u8]> = segments
        .iter()
        .flat_map(|s| s.chunks_exact(block_bytes))
        .collect();
    let digests: Vec<[u8; 32]> = blocks.par_iter().map(|b| sha256(b)).collect();
    digests.concat()
}

/// Runs the extractor over frames in order.
///
/// Returns `Ok(None)` when the input does not fill a single block, which is
/// an empty result rather than an error.
pub fn extract(images: &[SpeckleImage], cfg: &ExtractorConfig) -> Result<Option<RandomBitstream>> {
    cfg.validate()?;
    if images.is_empty() {
        return Err(Error::invalid("extraction needs at least one image"));
    }
    let cropped: Vec<SpeckleImage>;
    let frames: Vec<&SpeckleImage> = match cfg.crop {
        Some(c) => {
            cropped = images.iter().map(|i| i.crop(c)).collect::<Result<_>>()?;
            cropped.iter().collect()
        }
        None => images.iter().collect(),
    };
    let joined: Vec<u8>;
    let segments: Vec<&[u8]> = if cfg.span_images {
        joined = frames.iter().flat_map(|f| image_to_bytes(f)).copied().collect();
        vec![&joined]
    } else {
        frames.iter().map(|f| image_to_bytes(f)).collect()
    };
    let raw_bits = segments.iter().map(|s| s.len() as u64 * 8).sum();
    let out = hash_blocks(&segments, cfg.block_bytes());
    if out.is_empty() {
        return Ok(None);
    }
    Ok(Some(RandomBitstream {
        blocks: out.len() / DIGEST_BYTES,
        bits: BitString::from_bytes(out),
        provenance: Provenance {
            config_digest: cfg.digest(),
            ..Provenance::default()
        },
        raw_bits,
    }))
}

/// Byte histogram of what one frame hashes to; `None` if it yields no block.
pub fn hashed_image_view(img: &SpeckleImage, cfg: &ExtractorConfig) -> Result<Option<GreyHistogram>> {
    Ok(extract(std::slice::from_ref(img), cfg)?.map(|s| GreyHistogram::from_bytes(s.as_bytes())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(w: usize, h: usize, px: Vec<u8>) -> SpeckleImage {
        SpeckleImage::new(Dims::new(w, h), px).unwrap()
    }

    #[test]
    fn raster_order() {
        assert_eq!(image_to_bytes(&image(2, 2, vec![1, 2, 3, 4])), &[1, 2, 3, 4]);
        assert_eq!(image_to_bytes(&image(3, 3, vec![0; 9])), &[0; 9]);
    }

    #[test]
    fn known_digests() {
        assert_eq!(
            hex::encode(sha256(b"")),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        assert!(hex::encode(sha256(b"abc")).starts_with("ba7816bf"));
    }

    #[test]
    fn config_validation() {
        assert!(ExtractorConfig::new(255).is_err());
        assert!(ExtractorConfig::new(260).is_err());
        assert!(ExtractorConfig::new(344).is_ok());
    }

    #[test]
    fn output_length_law() {
        let cfg = ExtractorConfig::new(344).unwrap();
        let img = image(256, 256, (0..65536u32).map(|v| (v * 7 % 251) as u8).collect());
        let out = extract(&[img], &cfg).unwrap().unwrap();
        assert_eq!(out.blocks, 1524);
        assert_eq!(out.bits.len(), 390_144);
        assert_eq!(cfg.output_bits(&[524_288]), 390_144);
    }

    #[test]
    fn reference_frame_arithmetic() {
        let cfg = ExtractorConfig::new(344).unwrap();
        let frame = 2448u64 * 2048 * 8;
        assert_eq!(cfg.output_bits(&[frame]), 29_847_808);
        assert_eq!(cfg.output_bits(&[frame; 36]), 36 * 116_593 * 256);
    }

    #[test]
    fn spanning_uses_residuals() {
        // two frames of 40 bytes with 32-byte blocks: 1 block each, or 2 blocks spanning
        let a = image(8, 5, (0..40).collect());
        let b = image(8, 5, (40..80).collect());
        let mut cfg = ExtractorConfig::new(256).unwrap();
        assert_eq!(extract(&[a.clone(), b.clone()], &cfg).unwrap().unwrap().blocks, 2);
        cfg.block_bits = 336; // 42 bytes
        assert!(extract(&[a.clone()], &cfg).unwrap().is_none());
        assert!(extract(&[a.clone(), b.clone()], &cfg).unwrap().is_none());
        cfg.span_images = true;
        let out = extract(&[a, b], &cfg).unwrap().unwrap();
        assert_eq!(out.blocks, 1);
        let joined: Vec<u8> = (0..42).collect();
        assert_eq!(out.as_bytes(), &sha256(&joined));
    }

    #[test]
    fn crop_limits_input() {
        let img = image(16, 16, (0..=255).collect());
        let cfg = ExtractorConfig {
            crop: Some(Dims::new(8, 4)),
            ..ExtractorConfig::new(256).unwrap()
        };
        let out = extract(&[img.clone()], &cfg).unwrap().unwrap();
        assert_eq!(out.raw_bits, 8 * 4 * 8);
        assert_eq!(out.as_bytes(), &sha256(img.crop(Dims::new(8, 4)).unwrap().pixels()));
    }

    #[test]
    fn constant_frame_repeats_one_digest() {
        let cfg = ExtractorConfig::new(256).unwrap();
        let img = image(32, 4, vec![0; 128]);
        let out = extract(&[img.clone()], &cfg).unwrap().unwrap();
        let words: Vec<_> = out.words().collect();
        assert_eq!(words.len(), 4);
        assert!(words.iter().all(|w| w == &words[0]));
        let h = hashed_image_view(&img, &cfg).unwrap().unwrap();
        let d = sha256(&[0; 32]);
        assert_eq!(h, GreyHistogram::from_bytes(&d.repeat(4)));
    }

    #[test]
    fn empty_extraction_is_not_an_error() {
        let cfg = ExtractorConfig::new(1024).unwrap();
        let img = image(4, 4, vec![1; 16]);
        assert!(hashed_image_view(&img, &cfg).unwrap().is_none());
        assert!(extract(&[], &cfg).is_err());
    }

    #[test]
    fn digests_follow_block_order_for_any_pool() {
        let data: Vec<u8> = (0..43 * 500).map(|v| (v % 253) as u8).collect();
        let reference: Vec<u8> = data.chunks_exact(43).flat_map(sha256).collect();
        for threads in [1, 3, 8] {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            let out = pool.install(|| hash_blocks(&[&data], 43));
            assert_eq!(out, reference);
        }
    }
}
