//! Chain and surrogate quality metrics: correlation, MSE, autocorrelation,
//! effective sample size, posterior maps and ternary extracts.

use std::io::Write;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::field::FieldVector;
use crate::mcmc::ChainSamples;
use crate::model::{logistic, saturations};

fn check_lengths(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn is_constant(v: &[f64]) -> bool {
    v.iter().all(|&x| x == v[0])
}

/// Pearson correlation of two equally long sequences.
pub fn sample_correlation(f: &[f64], fhat: &[f64]) -> Result<f64> {
    check_lengths(f, fhat)?;
    if f.len() < 2 {
        return Err(Error::InvalidParameter(
            "correlation needs at least two values".into(),
        ));
    }
    if is_constant(f) || is_constant(fhat) {
        return Err(Error::Degenerate(
            "zero variance in correlation input".into(),
        ));
    }
    let (mf, mh) = (mean(f), mean(fhat));
    let (mut sfh, mut sff, mut shh) = (0.0, 0.0, 0.0);
    for (a, b) in f.iter().zip(fhat) {
        let (da, db) = (a - mf, b - mh);
        sfh += da * db;
        sff += da * da;
        shh += db * db;
    }
    Ok((sfh / (sff * shh).sqrt()).clamp(-1.0, 1.0))
}

/// Mean squared difference.
pub fn mse(f: &[f64], fhat: &[f64]) -> Result<f64> {
    check_lengths(f, fhat)?;
    if f.is_empty() {
        return Ok(0.0);
    }
    Ok(f.iter()
        .zip(fhat)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / f.len() as f64)
}

/// Biased autocorrelation up to `max_lag`, every lag normalized by the
/// lag-0 sum of squares. Computed with a zero-padded FFT.
pub fn acf(series: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let m = series.len();
    if max_lag >= m {
        return Err(Error::InvalidParameter(format!(
            "max lag {max_lag} not below length {m}"
        )));
    }
    if is_constant(series) {
        return Err(Error::Degenerate(
            "constant series has no autocorrelation".into(),
        ));
    }
    let mu = mean(series);
    let len = (2 * m).next_power_of_two();
    let mut buf: Vec<Complex64> = series
        .iter()
        .map(|&x| Complex64::new(x - mu, 0.0))
        .collect();
    buf.resize(len, Complex64::new(0.0, 0.0));
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(len).process(&mut buf);
    for c in &mut buf {
        *c = Complex64::new(c.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(len).process(&mut buf);
    let c0 = buf[0].re;
    let mut out: Vec<f64> = buf[..=max_lag].iter().map(|c| c.re / c0).collect();
    out[0] = 1.0;
    Ok(out)
}

/// `M / (1 + 2 sum_{k<K} acf[k])` with `K` the first lag of negative
/// autocorrelation, clipped to `(0, M]`.
pub fn ess(series: &[f64]) -> Result<f64> {
    let m = series.len();
    if m < 10 {
        return Err(Error::InvalidParameter(format!(
            "ESS needs at least 10 values, got {m}"
        )));
    }
    let rho = acf(series, m - 1)?;
    let tail: f64 = rho[1..].iter().take_while(|&&r| r >= 0.0).sum();
    let ess = m as f64 / (1.0 + 2.0 * tail);
    Ok(ess.clamp(f64::MIN_POSITIVE, m as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesStats {
    pub acf: Vec<f64>,
    pub ess: f64,
    pub mean: f64,
    pub variance: f64,
}

pub fn series_stats(series: &[f64], max_lag: usize) -> Result<SeriesStats> {
    let mu = mean(series);
    Ok(SeriesStats {
        acf: acf(series, max_lag)?,
        ess: ess(series)?,
        mean: mu,
        variance: series.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / series.len() as f64,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanEss {
    /// Mean ESS over coordinates with a defined estimate; 0 if none.
    pub value: f64,
    /// Coordinates left out because their series is constant.
    pub excluded: Vec<usize>,
}

/// Mean ESS over all `3N` coordinate series of a chain.
pub fn mean_ess(chain: &ChainSamples) -> MeanEss {
    let per: Vec<Option<f64>> = (0..chain.dim())
        .into_par_iter()
        .map(|c| ess(&chain.series(c)).ok())
        .collect();
    let kept: Vec<f64> = per.iter().flatten().copied().collect();
    MeanEss {
        value: if kept.is_empty() {
            0.0
        } else {
            kept.iter().sum::<f64>() / kept.len() as f64
        },
        excluded: per
            .iter()
            .enumerate()
            .filter(|(_, e)| e.is_none())
            .map(|(i, _)| i)
            .collect(),
    }
}

/// Linear interpolation between order statistics ("type 7"): with `h =
/// (n-1) p`, returns `x[floor h] + (h - floor h) (x[floor h + 1] - x[floor h])`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    GasSaturation,
    OilSaturation,
    BrineSaturation,
    ClayFraction,
}

impl Quantity {
    pub const ALL: [Quantity; 4] = [
        Self::GasSaturation,
        Self::OilSaturation,
        Self::BrineSaturation,
        Self::ClayFraction,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::GasSaturation => "s_g",
            Self::OilSaturation => "s_o",
            Self::BrineSaturation => "s_b",
            Self::ClayFraction => "v_clay",
        }
    }

    fn eval(self, [xg, xo, xc]: [f64; 3]) -> f64 {
        let (g, o, b) = saturations(xg, xo);
        match self {
            Self::GasSaturation => g,
            Self::OilSaturation => o,
            Self::BrineSaturation => b,
            Self::ClayFraction => logistic(xc),
        }
    }
}

fn cell_logits(sample: &[f64], n: usize, k: usize) -> [f64; 3] {
    [sample[k], sample[n + k], sample[2 * n + k]]
}

/// Per-cell posterior mean and `q90 - q10` of a reservoir quantity.
pub fn posterior_maps(
    chain: &ChainSamples,
    quantity: Quantity,
) -> Result<(FieldVector, FieldVector)> {
    if chain.is_empty() {
        return Err(Error::InvalidParameter("empty chain".into()));
    }
    let n = chain.grid.len();
    let (means, spreads): (Vec<f64>, Vec<f64>) = (0..n)
        .into_par_iter()
        .map(|k| {
            let mut v: Vec<f64> = (0..chain.len())
                .map(|i| quantity.eval(cell_logits(chain.sample(i), n, k)))
                .collect();
            let m = mean(&v);
            v.sort_by(f64::total_cmp);
            (m, quantile_sorted(&v, 0.9) - quantile_sorted(&v, 0.1))
        })
        .unzip();
    Ok((
        FieldVector::new(chain.grid, means)?,
        FieldVector::new(chain.grid, spreads)?,
    ))
}

/// `(S_g, S_o, S_b)` of every stored sample at one cell.
pub fn ternary_extract(chain: &ChainSamples, cell: usize) -> Result<Vec<[f64; 3]>> {
    let n = chain.grid.len();
    if cell >= n {
        return Err(Error::InvalidParameter(format!(
            "cell {cell} outside grid of {n} cells"
        )));
    }
    Ok((0..chain.len())
        .map(|i| {
            let [xg, xo, _] = cell_logits(chain.sample(i), n, cell);
            let (g, o, b) = saturations(xg, xo);
            [g, o, b]
        })
        .collect())
}

pub fn write_ternary_csv<W: Write>(w: W, triples: &[[f64; 3]]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["sample_index", "S_g", "S_o", "S_b"])?;
    for (i, t) in triples.iter().enumerate() {
        out.write_record([
            i.to_string(),
            t[0].to_string(),
            t[1].to_string(),
            t[2].to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::GridSpec;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn white(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    #[test]
    fn correlation_identities() {
        let f = white(50, 1);
        let neg: Vec<f64> = f.iter().map(|x| -x).collect();
        assert!((sample_correlation(&f, &f).unwrap() - 1.0).abs() < 1e-15);
        assert!((sample_correlation(&f, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert!(
            (sample_correlation(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-15
        );
        assert!(sample_correlation(&[1.0, 1.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn mse_values() {
        let f = white(20, 2);
        assert_eq!(mse(&f, &f).unwrap(), 0.0);
        assert_eq!(mse(&[0.0, 0.0], &[1.0, -1.0]).unwrap(), 1.0);
        let g = white(20, 3);
        assert_eq!(mse(&f, &g).unwrap(), mse(&g, &f).unwrap());
    }

    #[test]
    fn acf_matches_direct_sum() {
        let x = white(300, 4);
        let rho = acf(&x, 20).unwrap();
        let mu = mean(&x);
        let c0: f64 = x.iter().map(|v| (v - mu) * (v - mu)).sum();
        for (k, r) in rho.iter().enumerate() {
            let ck: f64 = (0..x.len() - k)
                .map(|t| (x[t] - mu) * (x[t + k] - mu))
                .sum();
            assert!((r - ck / c0).abs() < 1e-12, "lag {k}");
        }
        assert_eq!(rho[0], 1.0);
    }

    #[test]
    fn acf_of_alternating_series() {
        let x: Vec<f64> = (0..1000)
            .map(|t| if t % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        let rho = acf(&x, 1).unwrap();
        assert!((rho[1] + 1.0).abs() < 2e-3);
    }

    #[test]
    fn white_noise_acf_and_ess() {
        let m = 100_000;
        let x = white(m, 5);
        let rho = acf(&x, 50).unwrap();
        let bound = 3.0 / (m as f64).sqrt();
        assert!(rho[1..].iter().all(|r| r.abs() < bound));
        let e = ess(&x).unwrap() / m as f64;
        assert!((0.9..=1.1).contains(&e), "{e}");
    }

    #[test]
    fn ar1_ess() {
        let m = 100_000;
        let phi: f64 = 0.9;
        let z = white(m, 6);
        let mut x = vec![0.0; m];
        x[0] = z[0] / (1.0 - phi * phi).sqrt();
        for t in 1..m {
            x[t] = phi * x[t - 1] + z[t];
        }
        let ratio = ess(&x).unwrap() / m as f64;
        let expected = (1.0 - phi) / (1.0 + phi);
        assert!(
            (ratio / expected - 1.0).abs() < 0.25,
            "{ratio} vs {expected}"
        );
    }

    #[test]
    fn degenerate_inputs() {
        assert!(acf(&[2.0; 20], 3).is_err());
        assert!(ess(&[2.0; 20]).is_err());
        assert!(ess(&white(9, 0)).is_err());
        assert!(acf(&white(5, 0), 5).is_err());
    }

    #[test]
    fn type7_quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 0.5), 3.0);
        assert!((quantile_sorted(&v, 0.9) - 4.6).abs() < 1e-15);
        assert_eq!(quantile_sorted(&[7.0], 0.3), 7.0);
    }

    fn chain_from(grid: GridSpec, samples: &[Vec<f64>]) -> ChainSamples {
        ChainSamples::new(grid, 1, 0, samples.concat()).unwrap()
    }

    #[test]
    fn maps_of_small_chains() {
        let grid = GridSpec::new(2, 2).unwrap();
        let one = chain_from(grid, &[white(12, 7)]);
        for q in Quantity::ALL {
            let (m, u) = posterior_maps(&one, q).unwrap();
            assert!(u.values().iter().all(|&v| v == 0.0));
            assert!(m.values().iter().all(|&v| v > 0.0 && v < 1.0));
        }
        // Two samples a < b per cell: q90 - q10 = (0.9 - 0.1)(b - a).
        let a = vec![-1.0; 12];
        let b = vec![1.0; 12];
        let two = chain_from(grid, &[a, b]);
        let (_, u) = posterior_maps(&two, Quantity::ClayFraction).unwrap();
        let expected = 0.8 * (logistic(1.0) - logistic(-1.0));
        assert!(u.values().iter().all(|v| (v - expected).abs() < 1e-15));
    }

    #[test]
    fn ternary_triples() {
        let grid = GridSpec::new(3, 1).unwrap();
        let chain = chain_from(grid, &[white(9, 8), white(9, 9), white(9, 10)]);
        let t = ternary_extract(&chain, 2).unwrap();
        assert_eq!(t.len(), 3);
        assert!(t
            .iter()
            .all(|p| (p.iter().sum::<f64>() - 1.0).abs() < 1e-12));
        assert!(ternary_extract(&chain, 3).is_err());
        let mut buf = Vec::new();
        write_ternary_csv(&mut buf, &t).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("sample_index,S_g,S_o,S_b\n"));
    }

    #[test]
    fn mean_ess_flags_constant_coordinates() {
        let grid = GridSpec::new(1, 1).unwrap();
        let samples: Vec<Vec<f64>> = white(200, 11)
            .chunks(2)
            .map(|c| vec![c[0], 0.5, c[1]])
            .collect();
        let chain = chain_from(grid, &samples);
        let r = mean_ess(&chain);
        assert_eq!(r.excluded, vec![1]);
        assert!(r.value > 50.0);
    }

    proptest! {
        #[test]
        fn ess_is_affine_invariant(seed in 0u64..500, a in 0.1f64..10.0, b in -5.0f64..5.0) {
            let x = white(200, seed);
            let y: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let (ex, ey) = (ess(&x).unwrap(), ess(&y).unwrap());
            prop_assert!((ex - ey).abs() < 1e-6 * ex);
            prop_assert!(ex > 0.0 && ex <= 200.0);
        }

        #[test]
        fn mean_ess_ignores_coordinate_order(seed in 0u64..200) {
            let grid = GridSpec::new(1, 2).unwrap();
            let raw = white(6 * 40, seed);
            let samples: Vec<Vec<f64>> = raw.chunks(6).map(|c| c.to_vec()).collect();
            let reversed: Vec<Vec<f64>> = samples.iter().map(|s| s.iter().rev().copied().collect()).collect();
            let a = mean_ess(&chain_from(grid, &samples)).value;
            let b = mean_ess(&chain_from(grid, &reversed)).value;
            prop_assert!((a - b).abs() < 1e-9 * a);
        }
    }
}
