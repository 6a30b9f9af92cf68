//! Planned 2D discrete Fourier transforms on row-major buffers.
//!
//! Normalization follows the numpy convention: `forward` is unnormalized and
//! `inverse` carries the full `1/(nx*ny)` factor.

use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

#[derive(Clone)]
pub struct Fft2 {
    nx: usize,
    ny: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Fft2")
            .field("nx", &self.nx)
            .field("ny", &self.ny)
            .finish()
    }
}

impl Fft2 {
    pub fn new(nx: usize, ny: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            nx,
            ny,
            row_fwd: planner.plan_fft_forward(ny),
            row_inv: planner.plan_fft_inverse(ny),
            col_fwd: planner.plan_fft_forward(nx),
            col_inv: planner.plan_fft_inverse(nx),
        }
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.apply(data, &*self.row_fwd, &*self.col_fwd);
    }

    pub fn inverse(&self, data: &mut [Complex64]) {
        self.apply(data, &*self.row_inv, &*self.col_inv);
        let norm = 1.0 / (self.nx * self.ny) as f64;
        for v in data.iter_mut() {
            *v *= norm;
        }
    }

    fn apply(&self, data: &mut [Complex64], row: &dyn Fft<f64>, col: &dyn Fft<f64>) {
        assert_eq!(data.len(), self.nx * self.ny);
        let (nx, ny) = (self.nx, self.ny);
        let scratch_len = row
            .get_inplace_scratch_len()
            .max(col.get_inplace_scratch_len());
        let mut scratch = vec![Complex64::default(); scratch_len];
        if ny > 1 {
            for r in data.chunks_exact_mut(ny) {
                row.process_with_scratch(r, &mut scratch);
            }
        }
        if nx > 1 {
            let mut column = vec![Complex64::default(); nx];
            for j in 0..ny {
                for i in 0..nx {
                    column[i] = data[i * ny + j];
                }
                col.process_with_scratch(&mut column, &mut scratch);
                for i in 0..nx {
                    data[i * ny + j] = column[i];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_dc() {
        let (nx, ny) = (5, 6);
        let f = Fft2::new(nx, ny);
        let orig: Vec<Complex64> = (0..nx * ny)
            .map(|k| Complex64::new((k as f64).sin(), 0.0))
            .collect();
        let mut data = orig.clone();
        f.forward(&mut data);
        let sum: f64 = orig.iter().map(|c| c.re).sum();
        assert!((data[0].re - sum).abs() < 1e-12);
        f.inverse(&mut data);
        for (a, b) in data.iter().zip(&orig) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn matches_direct_dft() {
        let (nx, ny) = (3, 4);
        let f = Fft2::new(nx, ny);
        let x: Vec<Complex64> = (0..12)
            .map(|k| Complex64::new(k as f64 * 0.3 - 1.0, 0.1 * k as f64))
            .collect();
        let mut fast = x.clone();
        f.forward(&mut fast);
        for p in 0..nx {
            for q in 0..ny {
                let mut acc = Complex64::default();
                for i in 0..nx {
                    for j in 0..ny {
                        let ang = -2.0
                            * std::f64::consts::PI
                            * ((p * i) as f64 / nx as f64 + (q * j) as f64 / ny as f64);
                        acc += x[i * ny + j] * Complex64::new(ang.cos(), ang.sin());
                    }
                }
                assert!((acc - fast[p * ny + q]).norm() < 1e-10);
            }
        }
    }
}
