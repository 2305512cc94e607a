//! Block-level avalanche, output-length law and the word Hamming-distance
//! law on simulated speckle.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use speckle_rng::extractor::{extract, sha256, ExtractorConfig};
use speckle_rng::puf_sim::{render_batch, uniform_phase_pattern, Dims, NoiseParams, PufModel, PufParams, SpeckleImage};
use speckle_rng::validation::hd_fit;

#[test]
fn single_bit_flips_avalanche() {
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    // binomial(256, 1/2): mean 128, sd 8
    let (lo, hi) = (128 - 5 * 8, 128 + 5 * 8);
    let mut total = 0u64;
    let mut flips = 0u64;
    for _ in 0..8 {
        let block: Vec<u8> = (0..43).map(|_| rng.random()).collect();
        let d0 = sha256(&block);
        for bit in 0..block.len() * 8 {
            let mut b = block.clone();
            b[bit / 8] ^= 0x80 >> (bit % 8);
            let d1 = sha256(&b);
            let hd: u32 = d0.iter().zip(&d1).map(|(x, y)| (x ^ y).count_ones()).sum();
            assert!((lo..=hi).contains(&hd), "bit {bit}: {hd}");
            total += u64::from(hd);
            flips += 1;
        }
    }
    let mean = total as f64 / flips as f64;
    assert!((mean - 128.0).abs() < 5.0 * 8.0 / (flips as f64).sqrt(), "{mean}");
}

#[test]
fn speckle_words_follow_the_binomial_law() {
    let puf = PufModel::new(PufParams::default()).unwrap();
    let dims = PufParams::default().in_dims;
    let pats: Vec<_> = (0..2).map(|k| uniform_phase_pattern(300 + k, dims).unwrap()).collect();
    let noises: Vec<_> = (0..2).map(|k| NoiseParams::default().with_seed(k)).collect();
    let frames = render_batch(&puf, &pats, &noises, 0.99).unwrap();
    let out = extract(&frames, &ExtractorConfig::new(344).unwrap()).unwrap().unwrap();
    let words: Vec<_> = out.words().take(1000).collect();
    assert_eq!(words.len(), 1000);
    let r = hd_fit(&words).unwrap();
    assert!((r.mu - 0.5).abs() < 0.005, "mu {}", r.mu);
    assert!((r.sigma - 0.03125).abs() < 0.003, "sigma {}", r.sigma);
}

fn frames_of(sizes: &[(usize, usize)]) -> Vec<SpeckleImage> {
    sizes
        .iter()
        .enumerate()
        .map(|(k, &(w, h))| {
            let px = (0..w * h).map(|i| (i * 7 + k * 13) as u8).collect();
            SpeckleImage::new(Dims::new(w, h), px).unwrap()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn output_length_law(
        sizes in proptest::collection::vec((1usize..40, 1usize..40), 1..6),
        block_bytes in 32usize..80,
        span in any::<bool>(),
    ) {
        let frames = frames_of(&sizes);
        let cfg = ExtractorConfig { block_bits: block_bytes * 8, span_images: span, crop: None };
        let raw: Vec<u64> = frames.iter().map(|f| f.pixels().len() as u64 * 8).collect();
        let expected = cfg.output_bits(&raw);
        let got = extract(&frames, &cfg).unwrap().map_or(0, |o| o.bits.len() as u64);
        prop_assert_eq!(got, expected);
        prop_assert_eq!(got % 256, 0);
        if span {
            prop_assert_eq!(got, raw.iter().sum::<u64>() / cfg.block_bits as u64 * 256);
        }
    }

    #[test]
    fn digests_are_in_block_order(seed in any::<u64>()) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let px: Vec<u8> = (0..32 * 32).map(|_| rng.random()).collect();
        let frame = SpeckleImage::new(Dims::square(32), px.clone()).unwrap();
        let out = extract(&[frame], &ExtractorConfig::new(256).unwrap()).unwrap().unwrap();
        let reference: Vec<u8> = px.chunks_exact(32).flat_map(sha256).collect();
        prop_assert_eq!(out.as_bytes(), &reference[..]);
    }
}
