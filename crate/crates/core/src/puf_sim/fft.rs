//! Unitary 2D FFT over row-major complex buffers.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::Dims;

/// Forward and inverse plans for one grid size, normalised by `1/sqrt(N)`
/// so both directions are unitary.
#[derive(Clone)]
pub(crate) struct Fft2 {
    dims: Dims,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub(crate) fn new(dims: Dims) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            dims,
            row_fwd: planner.plan_fft_forward(dims.width),
            row_inv: planner.plan_fft_inverse(dims.width),
            col_fwd: planner.plan_fft_forward(dims.height),
            col_inv: planner.plan_fft_inverse(dims.height),
        }
    }

    pub(crate) fn forward(&self, data: &mut [Complex64]) {
        self.run(data, &self.row_fwd, &self.col_fwd);
    }

    pub(crate) fn inverse(&self, data: &mut [Complex64]) {
        self.run(data, &self.row_inv, &self.col_inv);
    }

    fn run(&self, data: &mut [Complex64], rows: &Arc<dyn Fft<f64>>, cols: &Arc<dyn Fft<f64>>) {
        let Dims { width, height } = self.dims;
        debug_assert_eq!(data.len(), width * height);
        rows.process(data);
        let mut t = transpose(data, width, height);
        cols.process(&mut t);
        let back = transpose(&t, height, width);
        let scale = 1.0 / ((width * height) as f64).sqrt();
        for (d, b) in data.iter_mut().zip(back) {
            *d = b * scale;
        }
    }
}

fn transpose(src: &[Complex64], width: usize, height: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); src.len()];
    for y in 0..height {
        for x in 0..width {
            out[x * height + y] = src[y * width + x];
        }
    }
    out
}

/// Signed frequency of DFT bin `k` on an axis of length `n`.
pub(crate) fn signed_freq(k: usize, n: usize) -> isize {
    if k < n.div_ceil(2) {
        k as isize
    } else {
        k as isize - n as isize
    }
}

/// DFT bin on an axis of length `n` holding signed frequency `f`, if representable.
pub(crate) fn bin_of(f: isize, n: usize) -> Option<usize> {
    let n_i = n as isize;
    let lo = -(n_i / 2);
    let hi = (n_i - 1) / 2;
    // Even lengths keep the Nyquist bin at -n/2.
    if f < lo || f > hi {
        return None;
    }
    Some(f.rem_euclid(n_i) as usize)
}
