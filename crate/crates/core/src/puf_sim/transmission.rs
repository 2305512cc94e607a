//! Dense transmission-matrix form of a [`PufModel`].
//!
//! Columns are computed with direct O(N²) DFT sums rather than the FFT path,
//! so the two can be checked against each other on small grids.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;

use crate::error::{Error, Result};

use super::{Dims, Field, PhasePattern, PufModel};

/// Largest `N_in · N_out` accepted.
const MAX_ENTRIES: usize = 1 << 22;

/// Complex matrix mapping the SLM field (input grid, row-major) to the camera
/// field (output grid, row-major).
#[derive(Debug, Clone)]
pub struct TransmissionMatrix {
    in_dims: Dims,
    out_dims: Dims,
    /// Column-major: column `j` is the response to input pixel `j`.
    columns: Vec<Vec<Complex64>>,
}

impl TransmissionMatrix {
    pub(super) fn from_model(model: &PufModel) -> Result<Self> {
        let (i, o) = (model.in_dims(), model.out_dims());
        if i.area() * o.area() > MAX_ENTRIES {
            return Err(Error::invalid(format!(
                "transmission matrix of {}x{} entries is too large",
                o.area(),
                i.area()
            )));
        }
        let d = model.params().propagation_distance;
        let columns = (0..i.area())
            .map(|j| {
                let mut e = vec![Complex64::new(0.0, 0.0); i.area()];
                e[j] = Complex64::new(1.0, 0.0);
                let mut u = band_limited_resample(&e, i, o);
                propagate_direct(&mut u, o, d);
                for (k, screen) in model.screens().iter().enumerate() {
                    if k > 0 {
                        propagate_direct(&mut u, o, d);
                    }
                    for (v, &phi) in u.iter_mut().zip(screen) {
                        *v *= Complex64::from_polar(1.0, phi);
                    }
                }
                u
            })
            .collect();
        Ok(Self {
            in_dims: i,
            out_dims: o,
            columns,
        })
    }

    pub fn in_dims(&self) -> Dims {
        self.in_dims
    }

    pub fn out_dims(&self) -> Dims {
        self.out_dims
    }

    pub fn entry(&self, row: usize, col: usize) -> Complex64 {
        self.columns[col][row]
    }

    /// `T · exp(iφ)`.
    pub fn apply(&self, pattern: &PhasePattern) -> Result<Field> {
        if pattern.dims() != self.in_dims {
            return Err(Error::invalid("pattern does not match matrix input dims"));
        }
        let mut out = vec![Complex64::new(0.0, 0.0); self.out_dims.area()];
        for (col, &phi) in self.columns.iter().zip(pattern.phases()) {
            let x = Complex64::from_polar(1.0, phi);
            for (o, t) in out.iter_mut().zip(col) {
                *o += t * x;
            }
        }
        Field::new(self.out_dims, out)
    }
}

fn signed(k: usize, n: usize) -> isize {
    let k = k as isize;
    let n = n as isize;
    if 2 * k < n {
        k
    } else {
        k - n
    }
}

fn representable(f: isize, n: usize) -> bool {
    let n = n as isize;
    f >= -(n / 2) && f <= (n - 1) / 2
}

/// Unitary band-limited interpolation from `src` to `dst` by direct sums.
fn band_limited_resample(u: &[Complex64], src: Dims, dst: Dims) -> Vec<Complex64> {
    let spectrum = dft2(u, src, -1.0);
    let mut out = vec![Complex64::new(0.0, 0.0); dst.area()];
    let norm = 1.0 / (dst.area() as f64).sqrt();
    for ky in 0..src.height {
        let fy = signed(ky, src.height);
        if !representable(fy, dst.height) {
            continue;
        }
        for kx in 0..src.width {
            let fx = signed(kx, src.width);
            if !representable(fx, dst.width) {
                continue;
            }
            let c = spectrum[ky * src.width + kx];
            for y in 0..dst.height {
                for x in 0..dst.width {
                    let arg = TAU
                        * (fx as f64 * x as f64 / dst.width as f64
                            + fy as f64 * y as f64 / dst.height as f64);
                    out[y * dst.width + x] += c * Complex64::from_polar(norm, arg);
                }
            }
        }
    }
    out
}

fn propagate_direct(u: &mut [Complex64], dims: Dims, distance: f64) {
    let mut spectrum = dft2(u, dims, -1.0);
    for ky in 0..dims.height {
        let fy = signed(ky, dims.height) as f64 / dims.height as f64;
        for kx in 0..dims.width {
            let fx = signed(kx, dims.width) as f64 / dims.width as f64;
            spectrum[ky * dims.width + kx] *= Complex64::from_polar(1.0, -PI * distance * (fx * fx + fy * fy));
        }
    }
    let back = dft2(&spectrum, dims, 1.0);
    u.copy_from_slice(&back);
}

/// Unitary 2D DFT by direct summation; `sign` is the exponent sign.
fn dft2(u: &[Complex64], dims: Dims, sign: f64) -> Vec<Complex64> {
    let norm = 1.0 / (dims.area() as f64).sqrt();
    let mut out = vec![Complex64::new(0.0, 0.0); dims.area()];
    for ky in 0..dims.height {
        for kx in 0..dims.width {
            let mut acc = Complex64::new(0.0, 0.0);
            for y in 0..dims.height {
                for x in 0..dims.width {
                    let arg = sign
                        * TAU
                        * ((kx * x) as f64 / dims.width as f64 + (ky * y) as f64 / dims.height as f64);
                    acc += u[y * dims.width + x] * Complex64::from_polar(1.0, arg);
                }
            }
            out[ky * dims.width + kx] = acc * norm;
        }
    }
    out
}
