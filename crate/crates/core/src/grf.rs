//! Stationary Gaussian random fields on a 2D torus via circulant embedding.
//!
//! The covariance of a stationary field on a periodic grid is block circulant,
//! so it is diagonalized by the 2D DFT. [`CirculantBase`] stores the first row
//! of that matrix and the elementwise square root of its eigenvalues, which is
//! all that is needed to sample (`C^{1/2} z`) and to whiten (`C^{-1/2} v`) in
//! `O(N log N)` without ever forming the dense `N x N` covariance.
//!
//! DFT normalization: the forward transform is unnormalized and the inverse
//! carries `1/N`. With that pairing `dft2(sqrt(lambda) * idft2(z))` is exactly
//! `C^{1/2} z`, so no extra constant is needed.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft2::Fft2;
use crate::field::{FieldVector, GridSpec};
use crate::io::{read_f64s, read_header, write_f64s, write_header};

/// Default relative threshold below which a negative eigenvalue aborts construction.
pub const DEFAULT_CLAMP_TOLERANCE: f64 = 1e-3;
/// Eigenvalue square roots at or below this make the spectrum non-invertible.
pub const SINGULAR_TOLERANCE: f64 = 1e-12;
const IMAG_TOLERANCE: f64 = 1e-8;
const GRFB_MAGIC: &[u8; 4] = b"GRFB";
const FORMAT_VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorrelationKind {
    Gaussian,
}

/// Marginal standard deviation plus an isotropic correlation function.
///
/// The Gaussian kernel uses the effective-range convention
/// `rho(d) = exp(-3 (d / r)^2)`, so `rho(r) = e^{-3} ~ 0.05`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationSpec {
    pub sigma: f64,
    pub effective_range: f64,
    pub kind: CorrelationKind,
}

impl CorrelationSpec {
    pub fn gaussian(sigma: f64, effective_range: f64) -> Result<Self> {
        let spec = Self {
            sigma,
            effective_range,
            kind: CorrelationKind::Gaussian,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        if !(self.effective_range > 0.0 && self.effective_range.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "effective range must be positive, got {}",
                self.effective_range
            )));
        }
        Ok(())
    }

    /// Correlation at distance `d` (grid cells).
    pub fn correlation(&self, d: f64) -> f64 {
        match self.kind {
            CorrelationKind::Gaussian => {
                let t = d / self.effective_range;
                (-3.0 * t * t).exp()
            }
        }
    }

    pub fn covariance(&self, d: f64) -> f64 {
        self.sigma * self.sigma * self.correlation(d)
    }
}

/// Torus distances from cell `(0, 0)` to every cell, row-major.
pub fn torus_distance_base(grid: GridSpec) -> Vec<f64> {
    let mut out = Vec::with_capacity(grid.len());
    for i in 0..grid.nx {
        let di = i.min(grid.nx - i) as f64;
        for j in 0..grid.ny {
            let dj = j.min(grid.ny - j) as f64;
            out.push((di * di + dj * dj).sqrt());
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
pub struct BaseOptions {
    /// Negative eigenvalues in `[-eta * lambda_max, 0)` are clamped to zero;
    /// anything lower is rejected.
    pub clamp_tolerance: f64,
}

impl Default for BaseOptions {
    fn default() -> Self {
        Self {
            clamp_tolerance: DEFAULT_CLAMP_TOLERANCE,
        }
    }
}

/// First row of a block-circulant covariance and its eigenvalue square roots.
///
/// Immutable after construction; all methods take `&self` and are safe to call
/// concurrently.
#[derive(Debug, Clone)]
pub struct CirculantBase {
    grid: GridSpec,
    base: Vec<f64>,
    eigen_sqrt: Vec<f64>,
    clamped: usize,
    min_eigenvalue: f64,
    fft: Fft2,
}

/// Builds the circulant base `sigma^2 rho(D)` for a grid and correlation spec.
pub fn build_base(grid: GridSpec, corr: &CorrelationSpec) -> Result<CirculantBase> {
    build_base_with(grid, corr, BaseOptions::default())
}

pub fn build_base_with(
    grid: GridSpec,
    corr: &CorrelationSpec,
    opts: BaseOptions,
) -> Result<CirculantBase> {
    corr.validate()?;
    let base = torus_distance_base(grid)
        .into_iter()
        .map(|d| corr.covariance(d))
        .collect();
    CirculantBase::from_base(grid, base, opts)
}

impl CirculantBase {
    /// Wraps an arbitrary torus-symmetric base row and computes its spectrum.
    pub fn from_base(grid: GridSpec, base: Vec<f64>, opts: BaseOptions) -> Result<Self> {
        if base.len() != grid.len() {
            return Err(Error::LengthMismatch {
                expected: grid.len(),
                got: base.len(),
            });
        }
        let fft = Fft2::new(grid.nx, grid.ny);
        let mut buf: Vec<Complex64> = base.iter().map(|&b| Complex64::new(b, 0.0)).collect();
        fft.forward(&mut buf);
        let lambda: Vec<f64> = buf.iter().map(|c| c.re).collect();
        let max = lambda.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = lambda.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(max > 0.0) {
            return Err(Error::NonEmbeddable {
                min,
                max,
                eta: opts.clamp_tolerance,
            });
        }
        if min < -opts.clamp_tolerance * max {
            return Err(Error::NonEmbeddable {
                min,
                max,
                eta: opts.clamp_tolerance,
            });
        }
        let mut clamped = 0;
        let eigen_sqrt = lambda
            .iter()
            .map(|&l| {
                if l < 0.0 {
                    clamped += 1;
                    0.0
                } else {
                    l.sqrt()
                }
            })
            .collect();
        Ok(Self {
            grid,
            base,
            eigen_sqrt,
            clamped,
            min_eigenvalue: min,
            fft,
        })
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn base(&self) -> &[f64] {
        &self.base
    }

    pub fn eigen_sqrt(&self) -> &[f64] {
        &self.eigen_sqrt
    }

    /// Number of negative eigenvalues that were clamped to zero.
    pub fn clamped_count(&self) -> usize {
        self.clamped
    }

    /// Smallest eigenvalue before clamping.
    pub fn min_eigenvalue(&self) -> f64 {
        self.min_eigenvalue
    }

    /// True when every eigenvalue square root exceeds [`SINGULAR_TOLERANCE`].
    pub fn is_invertible(&self) -> bool {
        self.eigen_sqrt.iter().all(|&e| e > SINGULAR_TOLERANCE)
    }

    /// Dense covariance reconstructed by circularly shifting the base row.
    pub fn dense_covariance(&self) -> Vec<Vec<f64>> {
        let g = self.grid;
        let n = g.len();
        let mut out = vec![vec![0.0; n]; n];
        for (a, row) in out.iter_mut().enumerate() {
            let (ia, ja) = g.coords(a);
            for (b, v) in row.iter_mut().enumerate() {
                let (ib, jb) = g.coords(b);
                let di = (ia + g.nx - ib) % g.nx;
                let dj = (ja + g.ny - jb) % g.ny;
                *v = self.base[g.index(di, dj)];
            }
        }
        out
    }

    /// `ln det C` from the DFT eigenvalues.
    pub fn log_det(&self) -> Result<f64> {
        self.check_invertible()?;
        Ok(self.eigen_sqrt.iter().map(|e| 2.0 * e.ln()).sum())
    }

    fn check_invertible(&self) -> Result<()> {
        match self
            .eigen_sqrt
            .iter()
            .enumerate()
            .find(|(_, &e)| e <= SINGULAR_TOLERANCE)
        {
            Some((index, &value)) => Err(Error::SingularSpectrum {
                index,
                value,
                zeta: SINGULAR_TOLERANCE,
            }),
            None => Ok(()),
        }
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.grid.len() {
            return Err(Error::LengthMismatch {
                expected: self.grid.len(),
                got: len,
            });
        }
        Ok(())
    }

    /// Computes `Re(dft2(w * idft2(x)))` for a spectral multiplier `w`.
    fn spectral_apply(&self, x: &[f64], weight: impl Fn(f64) -> f64) -> Result<Vec<f64>> {
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fft.inverse(&mut buf);
        for (c, &e) in buf.iter_mut().zip(&self.eigen_sqrt) {
            *c *= weight(e);
        }
        self.fft.forward(&mut buf);
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let residual = buf.iter().map(|c| c.im * c.im).sum::<f64>().sqrt();
        let tolerance = IMAG_TOLERANCE * norm;
        if residual > tolerance {
            return Err(Error::ImaginaryResidual {
                residual,
                tolerance,
            });
        }
        Ok(buf.into_iter().map(|c| c.re).collect())
    }

    /// `C^{1/2} z`.
    pub fn apply_sqrt(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_len(z.len())?;
        self.spectral_apply(z, |e| e)
    }

    /// `C^{-1/2} v`; fails on singular or clamped spectra.
    pub fn apply_inv_sqrt(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_len(v.len())?;
        self.check_invertible()?;
        self.spectral_apply(v, |e| 1.0 / e)
    }

    /// `C^{-1} v`, i.e. the whitening map applied twice.
    pub fn apply_precision(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_len(v.len())?;
        self.check_invertible()?;
        self.spectral_apply(v, |e| 1.0 / (e * e))
    }

    /// Returns `mu + C^{1/2} z` for a caller-supplied standard-normal vector.
    pub fn sample_field(&self, mu: &FieldVector, noise: &[f64]) -> Result<FieldVector> {
        self.check_len(mu.len())?;
        self.check_len(noise.len())?;
        let mut out = self.apply_sqrt(noise)?;
        for (o, m) in out.iter_mut().zip(mu.values()) {
            *o += m;
        }
        FieldVector::new(self.grid, out)
    }

    /// Draws the standard-normal vector from `rng` and samples around `mu`.
    pub fn sample_with<R: Rng + ?Sized>(
        &self,
        mu: &FieldVector,
        rng: &mut R,
    ) -> Result<FieldVector> {
        let z: Vec<f64> = (0..self.grid.len())
            .map(|_| rng.sample(StandardNormal))
            .collect();
        self.sample_field(mu, &z)
    }

    /// Unnormalized log density `-1/2 (x-mu)^T C^{-1} (x-mu)`.
    ///
    /// The additive constant `-N/2 ln(2 pi) - 1/2 ln det C` is *not* included;
    /// see [`CirculantBase::log_normalizer`].
    pub fn log_density_quadform(&self, mu: &FieldVector, x: &FieldVector) -> Result<f64> {
        self.check_len(mu.len())?;
        self.check_len(x.len())?;
        let v: Vec<f64> = x
            .values()
            .iter()
            .zip(mu.values())
            .map(|(a, b)| a - b)
            .collect();
        self.quadform(&v)
    }

    /// `-1/2 v^T C^{-1} v` for a centered vector.
    pub fn quadform(&self, v: &[f64]) -> Result<f64> {
        let u = self.apply_inv_sqrt(v)?;
        Ok(-0.5 * u.iter().map(|x| x * x).sum::<f64>())
    }

    /// The constant completing [`CirculantBase::log_density_quadform`] to a normalized log density.
    pub fn log_normalizer(&self) -> Result<f64> {
        let n = self.grid.len() as f64;
        Ok(-0.5 * n * (2.0 * std::f64::consts::PI).ln() - 0.5 * self.log_det()?)
    }

    /// Writes the `GRFB` container: magic, version, `nx`, `ny` (u32 LE), then
    /// `base` and `eigen_sqrt` as row-major f64 LE.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        write_header(w, GRFB_MAGIC, FORMAT_VERSION)?;
        w.write_all(&(self.grid.nx as u32).to_le_bytes())?;
        w.write_all(&(self.grid.ny as u32).to_le_bytes())?;
        write_f64s(w, &self.base)?;
        write_f64s(w, &self.eigen_sqrt)?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        read_header(r, GRFB_MAGIC, FORMAT_VERSION)?;
        let nx = crate::io::read_u32(r)? as usize;
        let ny = crate::io::read_u32(r)? as usize;
        let grid = GridSpec::new(nx, ny)?;
        let base = read_f64s(r, grid.len())?;
        let eigen_sqrt = read_f64s(r, grid.len())?;
        if eigen_sqrt.iter().any(|e| !(*e >= 0.0)) {
            return Err(Error::Format("negative eigenvalue square root".into()));
        }
        Ok(Self {
            grid,
            base,
            eigen_sqrt,
            clamped: 0,
            min_eigenvalue: f64::NAN,
            fft: Fft2::new(nx, ny),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid(nx: usize, ny: usize) -> GridSpec {
        GridSpec::new(nx, ny).unwrap()
    }

    #[test]
    fn torus_distance_examples() {
        let d = torus_distance_base(grid(1, 5));
        assert_eq!(d[3], 2.0);
        let d = torus_distance_base(grid(4, 4));
        assert!((d[grid(4, 4).index(2, 2)] - 8f64.sqrt()).abs() < 1e-12);
        assert_eq!(torus_distance_base(grid(3, 3))[0], 0.0);
    }

    #[test]
    fn white_noise_base_has_flat_spectrum() {
        let corr = CorrelationSpec::gaussian(1.0, 1e-6).unwrap();
        let b = build_base(grid(5, 7), &corr).unwrap();
        for &e in b.eigen_sqrt() {
            assert!((e - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn white_noise_sample_is_scaled_noise() {
        let corr = CorrelationSpec::gaussian(2.5, 1e-6).unwrap();
        let g = grid(4, 6);
        let b = build_base(g, &corr).unwrap();
        let z: Vec<f64> = (0..g.len()).map(|k| (k as f64 * 0.7).cos()).collect();
        let x = b.sample_field(&FieldVector::zeros(g), &z).unwrap();
        for (a, zz) in x.values().iter().zip(&z) {
            assert!((a - 2.5 * zz).abs() < 1e-12);
        }
    }

    #[test]
    fn quadform_examples() {
        let g = grid(3, 3);
        let corr = CorrelationSpec::gaussian(2.0, 1e-6).unwrap();
        let b = build_base(g, &corr).unwrap();
        let mu = FieldVector::constant(g, 0.3);
        assert_eq!(b.log_density_quadform(&mu, &mu).unwrap(), 0.0);
        let mut x = mu.clone();
        x.values_mut()[0] += 1.0;
        assert!((b.log_density_quadform(&mu, &x).unwrap() + 0.125).abs() < 1e-12);
    }

    #[test]
    fn base_symmetry_and_origin() {
        let g = grid(7, 6);
        let corr = CorrelationSpec::gaussian(1.3, 2.0).unwrap();
        let b = build_base(g, &corr).unwrap();
        assert!((b.base()[0] - 1.69).abs() < 1e-15);
        for i in 0..g.nx {
            for j in 0..g.ny {
                let m = g.index((g.nx - i) % g.nx, (g.ny - j) % g.ny);
                assert_eq!(b.base()[g.index(i, j)], b.base()[m]);
            }
        }
        assert!(b.eigen_sqrt().iter().all(|&e| e >= 0.0));
    }

    #[test]
    fn strongly_indefinite_base_is_rejected() {
        let g = grid(4, 4);
        let mut base = vec![0.0; 16];
        base[0] = 1.0;
        base[1] = 0.9;
        base[3] = 0.9;
        let err = CirculantBase::from_base(g, base, BaseOptions::default()).unwrap_err();
        assert!(matches!(err, Error::NonEmbeddable { .. }));
    }

    #[test]
    fn small_negative_eigenvalues_are_clamped_and_counted() {
        // 8x8 with range 3 has a minimum eigenvalue around -2e-4 * max.
        let g = grid(8, 8);
        let corr = CorrelationSpec::gaussian(1.0, 3.0).unwrap();
        let b = build_base(g, &corr).unwrap();
        assert!(b.clamped_count() > 0);
        assert!(b.min_eigenvalue() < 0.0);
        assert!(!b.is_invertible());
        let strict = BaseOptions {
            clamp_tolerance: 1e-8,
        };
        assert!(build_base_with(g, &corr, strict).is_err());
        let mu = FieldVector::zeros(g);
        assert!(matches!(
            b.log_density_quadform(&mu, &mu),
            Err(Error::SingularSpectrum { .. })
        ));
    }

    #[test]
    fn length_mismatch_is_reported() {
        let g = grid(3, 3);
        let b = build_base(g, &CorrelationSpec::gaussian(1.0, 1.0).unwrap()).unwrap();
        let err = b
            .sample_field(&FieldVector::zeros(g), &[0.0; 4])
            .unwrap_err();
        assert!(matches!(
            err,
            Error::LengthMismatch {
                expected: 9,
                got: 4
            }
        ));
    }

    #[test]
    fn grfb_round_trip() {
        let g = grid(5, 4);
        let b = build_base(g, &CorrelationSpec::gaussian(1.0, 2.0).unwrap()).unwrap();
        let mut bytes = Vec::new();
        b.write_to(&mut bytes).unwrap();
        assert_eq!(&bytes[..4], b"GRFB");
        assert_eq!(bytes.len(), 4 + 1 + 8 + 2 * 8 * g.len());
        let back = CirculantBase::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(back.base(), b.base());
        assert_eq!(back.eigen_sqrt(), b.eigen_sqrt());
    }

    #[test]
    fn seeded_sampling_is_reproducible() {
        let g = grid(6, 6);
        let b = build_base(g, &CorrelationSpec::gaussian(1.0, 2.0).unwrap()).unwrap();
        let mu = FieldVector::zeros(g);
        let a = b
            .sample_with(&mu, &mut ChaCha8Rng::seed_from_u64(3))
            .unwrap();
        let c = b
            .sample_with(&mu, &mut ChaCha8Rng::seed_from_u64(3))
            .unwrap();
        assert_eq!(a, c);
    }
}
