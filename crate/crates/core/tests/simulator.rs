//! Speckle statistics and dataset-level behaviour of the simulator and the
//! fingerprint metrics.

use speckle_rng::metrics::{euclidean_stats, gabor_hash, hamming_stats, normalize_image, Binning, GaborParams};
use speckle_rng::puf_sim::{
    intensity_contrast, render_batch, uniform_phase_pattern, Dims, NoiseParams, PhasePattern, PufModel, PufParams,
};

fn patterns(first_seed: u64, n: usize, dims: Dims) -> Vec<PhasePattern> {
    (0..n as u64).map(|k| uniform_phase_pattern(first_seed + k, dims).unwrap()).collect()
}

fn noises(first_seed: u64, n: usize) -> Vec<NoiseParams> {
    (0..n as u64).map(|k| NoiseParams::default().with_seed(first_seed + k)).collect()
}

#[test]
fn fully_developed_speckle_contrast() {
    for (screens, in_side, out_side, d) in [(2, 16, 64, 16.0), (3, 16, 64, 16.0), (3, 64, 256, 64.0), (5, 32, 128, 32.0)] {
        let puf = PufModel::new(PufParams {
            num_screens: screens,
            in_dims: Dims::square(in_side),
            out_dims: Dims::square(out_side),
            propagation_distance: d,
            ..PufParams::default()
        })
        .unwrap();
        for p in patterns(40, 3, Dims::square(in_side)) {
            let c = intensity_contrast(&puf.propagate(&p).unwrap());
            assert!((0.9..=1.1).contains(&c), "screens {screens} {out_side}px: contrast {c}");
        }
    }
}

#[test]
fn noise_keeps_intra_below_inter() {
    let puf = PufModel::new(PufParams::default()).unwrap();
    let dims = PufParams::default().in_dims;
    let fixed = uniform_phase_pattern(1, dims).unwrap();
    let intra = render_batch(&puf, &vec![fixed; 100], &noises(0, 100), 0.99).unwrap();
    let inter = render_batch(&puf, &patterns(2, 200, dims), &noises(100, 200), 0.99).unwrap();
    let norm = |v: &[_]| v.iter().map(normalize_image).collect::<Vec<_>>();
    let a = euclidean_stats(&norm(&intra), Binning::default()).unwrap();
    let e = euclidean_stats(&norm(&inter), Binning::default()).unwrap();
    assert!(a.max < e.min, "intra max {} vs inter min {}", a.max, e.min);
    assert!(a.min > 0.0, "noise must make intra frames differ");

    let g = GaborParams::default();
    let prints: Vec<_> = inter.iter().map(|f| gabor_hash(f, &g).unwrap()).collect();
    let h = hamming_stats(&prints, Binning::default()).unwrap();
    assert!((h.mean - 0.5).abs() < 0.02, "inter HD mean {}", h.mean);
}

#[test]
fn fingerprint_positions_are_balanced() {
    // Default geometry. A fixed scatterer leaves a weak per-position bias
    // (spread ~0.02 here, ~0.04 at 128x128), so smaller grids miss the band.
    let params = PufParams::default();
    let puf = PufModel::new(params).unwrap();
    let n = 1000;
    let frames = render_batch(&puf, &patterns(5000, n, params.in_dims), &noises(0, n), 0.99).unwrap();
    let g = GaborParams::default();
    let prints: Vec<_> = frames.iter().map(|f| gabor_hash(f, &g).unwrap()).collect();
    let bits = prints[0].len();
    assert_eq!(bits, 29 * 29);
    for pos in 0..bits {
        let ones = prints.iter().filter(|p| p.get(pos).unwrap()).count();
        let frac = ones as f64 / n as f64;
        assert!((0.4..=0.6).contains(&frac), "position {pos}: {frac}");
    }
}

#[test]
fn rendering_ignores_thread_count() {
    let params = PufParams {
        in_dims: Dims::square(16),
        out_dims: Dims::square(64),
        propagation_distance: 16.0,
        ..PufParams::default()
    };
    let puf = PufModel::new(params).unwrap();
    let pats = patterns(9, 24, params.in_dims);
    let ns = noises(3, 24);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| render_batch(&puf, &pats, &ns, 0.99).unwrap())
    };
    assert_eq!(run(1), run(4));
    let rebuilt = PufModel::new(params).unwrap();
    assert_eq!(render_batch(&rebuilt, &pats, &ns, 0.99).unwrap(), run(2));
}
