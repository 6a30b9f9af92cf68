use std::f64::consts::PI;

use super::AvoObservation;
use crate::error::{Error, Result};

/// Per-cell noise covariance `Omega_0` of `(R0, G)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub var_r0: f64,
    pub var_g: f64,
    pub corr: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            var_r0: 0.003,
            var_g: 0.03,
            corr: -0.6,
        }
    }
}

impl NoiseSpec {
    pub fn new(var_r0: f64, var_g: f64, corr: f64) -> Result<Self> {
        let spec = Self {
            var_r0,
            var_g,
            corr,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.var_r0 > 0.0
            && self.var_g > 0.0
            && self.corr > -1.0
            && self.corr < 1.0
            && self.var_r0.is_finite()
            && self.var_g.is_finite();
        if ok && self.det() > 0.0 {
            Ok(())
        } else {
            Err(Error::NotPositiveDefinite)
        }
    }

    pub fn cov(&self) -> f64 {
        self.corr * (self.var_r0 * self.var_g).sqrt()
    }

    pub fn det(&self) -> f64 {
        self.var_r0 * self.var_g - self.cov() * self.cov()
    }

    /// Entries `(p11, p12, p22)` of `Omega_0^{-1}`.
    pub fn precision(&self) -> (f64, f64, f64) {
        let d = self.det();
        (self.var_g / d, -self.cov() / d, self.var_r0 / d)
    }

    /// Lower Cholesky factor `(l11, l21, l22)` of `Omega_0`.
    pub fn cholesky(&self) -> (f64, f64, f64) {
        let l11 = self.var_r0.sqrt();
        let l21 = self.cov() / l11;
        let l22 = (self.var_g - l21 * l21).sqrt();
        (l11, l21, l22)
    }

    pub(crate) fn log_norm(&self) -> f64 {
        -(2.0 * PI).ln() - 0.5 * self.det().ln()
    }
}

/// Bivariate Gaussian log density of one residual pair, normalization included.
#[inline]
pub fn log_likelihood_cell(res_r0: f64, res_g: f64, noise: &NoiseSpec) -> f64 {
    let (p11, p12, p22) = noise.precision();
    let q = p11 * res_r0 * res_r0 + 2.0 * p12 * res_r0 * res_g + p22 * res_g * res_g;
    noise.log_norm() - 0.5 * q
}

/// Sum over cells of the bivariate Gaussian log density of `y - pred`.
///
/// The full covariance is block diagonal with `Omega_0` repeated per cell, so
/// it is never formed.
pub fn log_likelihood(y: &AvoObservation, pred: &AvoObservation, noise: &NoiseSpec) -> Result<f64> {
    noise.validate()?;
    if y.grid() != pred.grid() {
        return Err(Error::InvalidParameter("observation grids differ".into()));
    }
    let (p11, p12, p22) = noise.precision();
    let mut q = 0.0;
    let pairs =
        y.r0.values()
            .iter()
            .zip(y.g.values())
            .zip(pred.r0.values().iter().zip(pred.g.values()));
    for ((yr, yg), (pr, pg)) in pairs {
        let (a, b) = (yr - pr, yg - pg);
        q += p11 * a * a + 2.0 * p12 * a * b + p22 * b * b;
    }
    Ok(y.grid().len() as f64 * noise.log_norm() - 0.5 * q)
}

/// Inflates `Omega_0` by the empirical second moments of surrogate residuals
/// (`prediction - truth`) on held-out data.
pub fn adjusted_noise(noise: &NoiseSpec, resid_r0: &[f64], resid_g: &[f64]) -> Result<NoiseSpec> {
    if resid_r0.len() != resid_g.len() {
        return Err(Error::LengthMismatch {
            expected: resid_r0.len(),
            got: resid_g.len(),
        });
    }
    let n = resid_r0.len();
    if n < 2 {
        return Err(Error::InvalidParameter(
            "need at least two residuals".into(),
        ));
    }
    let nf = n as f64;
    let var_r0 = noise.var_r0 + resid_r0.iter().map(|r| r * r).sum::<f64>() / nf;
    let var_g = noise.var_g + resid_g.iter().map(|r| r * r).sum::<f64>() / nf;
    let cov = noise.cov()
        + resid_r0
            .iter()
            .zip(resid_g)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / nf;
    if !(var_r0 > 0.0 && var_g > 0.0 && var_r0 * var_g - cov * cov > 0.0) {
        return Err(Error::NotPositiveDefinite);
    }
    NoiseSpec::new(var_r0, var_g, cov / (var_r0 * var_g).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{FieldVector, GridSpec};

    fn obs(r0: Vec<f64>, g: Vec<f64>) -> AvoObservation {
        let grid = GridSpec::new(1, r0.len()).unwrap();
        AvoObservation::new(
            FieldVector::new(grid, r0).unwrap(),
            FieldVector::new(grid, g).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn zero_residual_gives_normalizer() {
        let y = obs(vec![0.1], vec![-0.2]);
        let noise = NoiseSpec::default();
        let det: f64 = 0.003 * 0.03 * (1.0 - 0.36);
        assert!((noise.det() - 5.76e-5).abs() < 1e-18);
        let expect = -(2.0 * PI).ln() - 0.5 * det.ln();
        let got = log_likelihood(&y, &y, &noise).unwrap();
        assert!((got - expect).abs() < 1e-12);
    }

    #[test]
    fn unit_residual_quadratic_term() {
        let noise = NoiseSpec::new(1.0, 1.0, 0.0).unwrap();
        let y = obs(vec![1.0], vec![0.0]);
        let pred = obs(vec![0.0], vec![0.0]);
        let at_zero = log_likelihood(&pred, &pred, &noise).unwrap();
        let got = log_likelihood(&y, &pred, &noise).unwrap();
        assert!((got - at_zero + 0.5).abs() < 1e-15);
    }

    #[test]
    fn rejects_invalid_noise() {
        assert!(NoiseSpec::new(1.0, 1.0, 1.0).is_err());
        assert!(NoiseSpec::new(-1.0, 1.0, 0.0).is_err());
        let bad = NoiseSpec {
            var_r0: 1.0,
            var_g: 1.0,
            corr: 1.5,
        };
        let y = obs(vec![0.0], vec![0.0]);
        assert!(matches!(
            log_likelihood(&y, &y, &bad),
            Err(Error::NotPositiveDefinite)
        ));
    }

    #[test]
    fn adjusted_noise_examples() {
        let noise = NoiseSpec::default();
        let same = adjusted_noise(&noise, &[0.0; 5], &[0.0; 5]).unwrap();
        assert!((same.var_r0 - noise.var_r0).abs() < 1e-18);
        assert!((same.var_g - noise.var_g).abs() < 1e-18);
        assert!((same.corr - noise.corr).abs() < 1e-14);

        let base = NoiseSpec::new(1.0, 2.0, 0.0).unwrap();
        let adj = adjusted_noise(&base, &[1.0, -1.0], &[1.0, 1.0]).unwrap();
        assert!((adj.var_r0 - 2.0).abs() < 1e-15);
        assert!((adj.var_g - 3.0).abs() < 1e-15);
        assert!(adj.cov().abs() < 1e-15);

        let c = 0.3;
        let adj = adjusted_noise(&base, &[c, c], &[c, c]).unwrap();
        assert!((adj.var_r0 - (1.0 + c * c)).abs() < 1e-15);
        assert!((adj.cov() - c * c).abs() < 1e-15);
    }

    #[test]
    fn adjusted_noise_never_shrinks_variances() {
        let noise = NoiseSpec::default();
        let r0: Vec<f64> = (0..50).map(|k| ((k * 7) as f64).sin() * 0.01).collect();
        let g: Vec<f64> = (0..50).map(|k| ((k * 3) as f64).cos() * 0.02).collect();
        let adj = adjusted_noise(&noise, &r0, &g).unwrap();
        assert!(adj.var_r0 > noise.var_r0 && adj.var_g > noise.var_g);
        assert!(adjusted_noise(&noise, &[0.1], &[0.1]).is_err());
    }

    #[test]
    fn decomposes_over_cells() {
        let noise = NoiseSpec::default();
        let y = obs(vec![0.1, -0.05, 0.02], vec![0.2, 0.0, -0.1]);
        let p = obs(vec![0.0, 0.01, 0.03], vec![0.1, -0.1, 0.0]);
        let full = log_likelihood(&y, &p, &noise).unwrap();
        let parts: f64 = (0..3)
            .map(|k| {
                log_likelihood_cell(
                    y.r0.values()[k] - p.r0.values()[k],
                    y.g.values()[k] - p.g.values()[k],
                    &noise,
                )
            })
            .sum();
        assert!((full - parts).abs() < 1e-9);
    }
}
