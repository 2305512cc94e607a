#![allow(dead_code)]

use speckle_rng::validation::{NistParams, NistTest};
use speckle_rng::BitString;

/// 100-bit sequence used by several SP800-22 worked examples.
pub const EPS_100: &str =
    "1100100100001111110110101010001000100001011010001100001000110100110001001100011001100010100010111000";

pub const EPS_128: &str = "11001100000101010110110001001100111000000000001001001101010100010001001111010110100000001101011111001100111001101101100010110010";

pub struct WorkedExample {
    pub label: &'static str,
    pub test: NistTest,
    pub bits: &'static str,
    pub params: NistParams,
    /// Index into the test's P-value list.
    pub variant: usize,
    pub expected: f64,
}

pub const TOLERANCE: f64 = 1e-4;

fn p(bf_m: usize, serial_m: usize, apen_m: usize) -> NistParams {
    NistParams {
        block_frequency_m: bf_m,
        serial_m,
        approximate_entropy_m: apen_m,
        enforce_recommended_lengths: false,
    }
}

pub fn worked_examples() -> Vec<WorkedExample> {
    use NistTest::*;
    let d = p(128, 16, 10);
    let ex = |label, test, bits, params, variant, expected| WorkedExample {
        label,
        test,
        bits,
        params,
        variant,
        expected,
    };
    vec![
        ex("frequency/10", Frequency, "1011010101", d, 0, 0.527089),
        ex("frequency/100", Frequency, EPS_100, d, 0, 0.109599),
        ex("block_frequency/10", BlockFrequency, "0110011010", p(3, 16, 10), 0, 0.801252),
        ex("block_frequency/100", BlockFrequency, EPS_100, p(10, 16, 10), 0, 0.706438),
        ex("runs/10", Runs, "1001101011", d, 0, 0.147232),
        ex("runs/100", Runs, EPS_100, d, 0, 0.500798),
        ex("longest_run/128", LongestRun, EPS_128, d, 0, 0.180609),
        ex("cusum/10 forward", CumulativeSums, "1011010111", d, 0, 0.4116588),
        ex("cusum/100 forward", CumulativeSums, EPS_100, d, 0, 0.219194),
        ex("cusum/100 reverse", CumulativeSums, EPS_100, d, 1, 0.114866),
        ex("fft/10", Spectral, "1001010011", d, 0, 0.029523),
        ex("fft/100", Spectral, EPS_100, d, 0, 0.168669),
        ex("serial/10 p1", Serial, "0011011101", p(128, 3, 10), 0, 0.808792),
        ex("serial/10 p2", Serial, "0011011101", p(128, 3, 10), 1, 0.670320),
        ex("apen/10", ApproximateEntropy, "0100110101", p(128, 16, 3), 0, 0.261961),
        ex("apen/100", ApproximateEntropy, EPS_100, p(128, 16, 2), 0, 0.235301),
    ]
}

impl WorkedExample {
    pub fn run(&self) -> f64 {
        let bits = BitString::from_ascii(self.bits).unwrap();
        speckle_rng::validation::nist_test(self.test, &bits, &self.params).unwrap()[self.variant]
    }
}
