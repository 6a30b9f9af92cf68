//! Nadaraya-Watson kernel regression with product Gaussian kernels and
//! bandwidths chosen by leave-one-out least-squares cross-validation.

use std::io::{Read, Write};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::{read_header, read_u32, read_u64, write_f64s, write_header};
use crate::model::{ForwardModel, SurrogateData};

const NPKR_MAGIC: &[u8; 4] = b"NPKR";
const NPKR_VERSION: u8 = 1;

/// Training points, responses and one kernel standard deviation per covariate.
#[derive(Debug, Clone, PartialEq)]
pub struct NpkrModel {
    x: Vec<f64>,
    y: Vec<f64>,
    p: usize,
    bandwidths: Vec<f64>,
}

impl NpkrModel {
    pub fn new(p: usize, x: Vec<f64>, y: Vec<f64>, bandwidths: Vec<f64>) -> Result<Self> {
        if p == 0 || y.is_empty() {
            return Err(Error::InvalidParameter(
                "need at least one point and one covariate".into(),
            ));
        }
        if x.len() != y.len() * p {
            return Err(Error::LengthMismatch {
                expected: y.len() * p,
                got: x.len(),
            });
        }
        if bandwidths.len() != p {
            return Err(Error::LengthMismatch {
                expected: p,
                got: bandwidths.len(),
            });
        }
        if bandwidths.iter().any(|&b| !(b > 0.0 && b.is_finite())) {
            return Err(Error::InvalidParameter(format!(
                "bandwidths must be positive, got {bandwidths:?}"
            )));
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite training value".into()));
        }
        Ok(Self {
            x,
            y,
            p,
            bandwidths,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn bandwidths(&self) -> &[f64] {
        &self.bandwidths
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    fn log_kernels(&self, x: &[f64], out: &mut [f64]) -> f64 {
        let inv: Vec<f64> = self.bandwidths.iter().map(|b| 1.0 / b).collect();
        let mut max = f64::NEG_INFINITY;
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.x[i * self.p..(i + 1) * self.p];
            let mut s = 0.0;
            for ((xi, xj), w) in row.iter().zip(x).zip(&inv) {
                let u = (xj - xi) * w;
                s += u * u;
            }
            *o = -0.5 * s;
            max = max.max(*o);
        }
        max
    }

    /// Normalized kernel weights of the training points at `x`, computed with
    /// the largest log-kernel subtracted so distant queries do not underflow.
    pub fn weights(&self, x: &[f64]) -> Vec<f64> {
        let mut w = vec![0.0; self.n()];
        let max = self.log_kernels(x, &mut w);
        let mut total = 0.0;
        for v in &mut w {
            *v = (*v - max).exp();
            total += *v;
        }
        w.iter_mut().for_each(|v| *v /= total);
        w
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut w = vec![0.0; self.n()];
        let max = self.log_kernels(x, &mut w);
        let (mut num, mut den) = (0.0, 0.0);
        for (lk, y) in w.iter().zip(&self.y) {
            let k = (lk - max).exp();
            num += k * y;
            den += k;
        }
        num / den
    }

    /// Writes the `NPKR` container: magic, version, `n` (u64), `p` (u32),
    /// then `X` row-major, `y` and the bandwidths as f64 LE.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        write_header(w, NPKR_MAGIC, NPKR_VERSION)?;
        w.write_all(&(self.n() as u64).to_le_bytes())?;
        w.write_all(&(self.p as u32).to_le_bytes())?;
        write_f64s(w, &self.x)?;
        write_f64s(w, &self.y)?;
        write_f64s(w, &self.bandwidths)?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        read_header(r, NPKR_MAGIC, NPKR_VERSION)?;
        let n = read_u64(r)? as usize;
        let p = read_u32(r)? as usize;
        let x = crate::io::read_f64s(r, n * p)?;
        let y = crate::io::read_f64s(r, n)?;
        let b = crate::io::read_f64s(r, p)?;
        Self::new(p, x, y, b)
    }
}

/// Exact leave-one-out sum of squared errors at the given evaluation indices.
fn loo_score(x: &[f64], y: &[f64], p: usize, log_bw: &[f64], eval: &[usize]) -> f64 {
    let n = y.len();
    let inv: Vec<f64> = log_bw.iter().map(|l| (-l).exp()).collect();
    let errors: Vec<f64> = eval
        .par_iter()
        .map(|&i| {
            let xi = &x[i * p..(i + 1) * p];
            let mut lk = vec![f64::NEG_INFINITY; n];
            let mut max = f64::NEG_INFINITY;
            for (l, v) in lk.iter_mut().enumerate() {
                if l == i {
                    continue;
                }
                let row = &x[l * p..(l + 1) * p];
                let mut s = 0.0;
                for ((a, b), w) in row.iter().zip(xi).zip(&inv) {
                    let u = (a - b) * w;
                    s += u * u;
                }
                *v = -0.5 * s;
                max = max.max(*v);
            }
            let (mut num, mut den) = (0.0, 0.0);
            for (v, yl) in lk.iter().zip(y) {
                let k = (v - max).exp();
                num += k * yl;
                den += k;
            }
            let e = y[i] - num / den;
            e * e
        })
        .collect();
    errors.iter().sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LscvConfig {
    pub starts: usize,
    /// Total objective evaluations across all starts.
    pub budget: usize,
    pub seed: u64,
    /// Above this many points the objective sums over a random subset of
    /// `subset_size` held-out points.
    pub subset_threshold: usize,
    pub subset_size: usize,
    /// Multiplier on the rule-of-thumb fallback bandwidth.
    pub fallback_scale: f64,
}

impl Default for LscvConfig {
    fn default() -> Self {
        Self {
            starts: 5,
            budget: 200,
            seed: 0,
            subset_threshold: 5000,
            subset_size: 2000,
            fallback_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LscvResult {
    pub bandwidths: Vec<f64>,
    /// Leave-one-out sum of squared errors at `bandwidths`.
    pub score: f64,
    /// Covariates whose bandwidth is the rule-of-thumb fallback.
    pub fallback: Vec<bool>,
    /// Objective value at each start, in order.
    pub start_scores: Vec<f64>,
    pub evaluations: usize,
    /// Held-out indices the objective sums over (all points unless subsampled).
    pub eval_indices: Vec<usize>,
}

impl LscvResult {
    pub fn used_fallback(&self) -> bool {
        self.fallback.iter().any(|&f| f)
    }
}

fn std_dev(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = v.clone().count() as f64;
    let mean = v.clone().sum::<f64>() / n;
    (v.map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// `1.06 * s * n^(-1/5) * scale`, with `s` the covariate's standard deviation
/// or 1 when it is zero.
pub fn rule_of_thumb(sd: f64, n: usize, scale: f64) -> f64 {
    let s = if sd > 0.0 { sd } else { 1.0 };
    1.06 * s * (n as f64).powf(-0.2) * scale
}

/// Multi-start coordinate descent on log-bandwidths minimizing the
/// leave-one-out squared error. The first start is the rule of thumb; the
/// others perturb it log-uniformly by up to a factor `e^1.5`. Constant
/// covariates, or a constant response, keep the rule-of-thumb bandwidth.
pub fn fit_bandwidths_lscv(p: usize, x: &[f64], y: &[f64], cfg: &LscvConfig) -> Result<LscvResult> {
    let n = y.len();
    if n < 3 {
        return Err(Error::InvalidParameter(
            "bandwidth selection needs at least three points".into(),
        ));
    }
    if x.len() != n * p || p == 0 {
        return Err(Error::LengthMismatch {
            expected: n * p,
            got: x.len(),
        });
    }
    if cfg.starts == 0 || cfg.budget == 0 {
        return Err(Error::InvalidParameter(
            "starts and budget must be positive".into(),
        ));
    }
    let sds: Vec<f64> = (0..p)
        .map(|j| std_dev((0..n).map(|i| x[i * p + j])))
        .collect();
    let thumb: Vec<f64> = sds
        .iter()
        .map(|&s| rule_of_thumb(s, n, cfg.fallback_scale))
        .collect();
    let y_constant = y.iter().all(|&v| v == y[0]);
    let mut fallback: Vec<bool> = sds.iter().map(|&s| y_constant || !(s > 0.0)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let eval_indices: Vec<usize> = if n > cfg.subset_threshold && cfg.subset_size < n {
        let mut idx = sample(&mut rng, n, cfg.subset_size).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..n).collect()
    };
    let objective = |lb: &[f64]| loo_score(x, y, p, lb, &eval_indices);
    let base: Vec<f64> = thumb.iter().map(|b| b.ln()).collect();
    let free: Vec<usize> = (0..p).filter(|&j| !fallback[j]).collect();

    let mut evaluations = 0usize;
    let mut best = (objective(&base), base.clone());
    evaluations += 1;
    let mut start_scores = Vec::with_capacity(cfg.starts);
    if free.is_empty() {
        start_scores.push(best.0);
    } else {
        let per_start = (cfg.budget / cfg.starts).max(1);
        for s in 0..cfg.starts {
            let mut cur = base.clone();
            if s > 0 {
                for &j in &free {
                    cur[j] += rng.random_range(-1.5..1.5);
                }
            }
            let mut f = if s == 0 {
                best.0
            } else {
                evaluations += 1;
                objective(&cur)
            };
            start_scores.push(f);
            let mut used = 1;
            let mut step = 1.0;
            'descent: while used < per_start && step > 1e-3 {
                let mut improved = false;
                for &j in &free {
                    for dir in [1.0, -1.0] {
                        if used >= per_start {
                            break 'descent;
                        }
                        let mut trial = cur.clone();
                        trial[j] += dir * step;
                        let ft = objective(&trial);
                        used += 1;
                        evaluations += 1;
                        if ft < f {
                            f = ft;
                            cur = trial;
                            improved = true;
                            break;
                        }
                    }
                }
                if !improved {
                    step *= 0.5;
                }
            }
            if f < best.0 {
                best = (f, cur);
            }
        }
    }
    if y_constant {
        fallback.iter_mut().for_each(|f| *f = true);
    }
    Ok(LscvResult {
        bandwidths: best.1.iter().map(|l| l.exp()).collect(),
        score: best.0,
        fallback,
        start_scores,
        evaluations,
        eval_indices,
    })
}

/// Re-evaluates the leave-one-out objective of `result` on the same data.
pub fn lscv_score(
    p: usize,
    x: &[f64],
    y: &[f64],
    bandwidths: &[f64],
    eval_indices: &[usize],
) -> f64 {
    let lb: Vec<f64> = bandwidths.iter().map(|b| b.ln()).collect();
    loo_score(x, y, p, &lb, eval_indices)
}

/// Kernel-regression models for `R0` and `G` on shared covariates.
#[derive(Debug, Clone)]
pub struct NpkrSurrogate {
    pub r0: NpkrModel,
    pub g: NpkrModel,
}

impl NpkrSurrogate {
    /// Selects bandwidths separately for each response.
    pub fn fit(data: &SurrogateData, cfg: &LscvConfig) -> Result<(Self, [LscvResult; 2])> {
        let x: Vec<f64> = data.x.iter().flatten().copied().collect();
        let fr = fit_bandwidths_lscv(4, &x, &data.r0, cfg)?;
        let fg = fit_bandwidths_lscv(4, &x, &data.g, cfg)?;
        let r0 = NpkrModel::new(4, x.clone(), data.r0.clone(), fr.bandwidths.clone())?;
        let g = NpkrModel::new(4, x, data.g.clone(), fg.bandwidths.clone())?;
        Ok((Self { r0, g }, [fr, fg]))
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        self.r0.write_to(w)?;
        self.g.write_to(w)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        Ok(Self {
            r0: NpkrModel::read_from(r)?,
            g: NpkrModel::read_from(r)?,
        })
    }
}

impl ForwardModel for NpkrSurrogate {
    fn evaluate(&self, x: [f64; 3], depth_norm: f64) -> (f64, f64) {
        let row = [x[0], x[1], x[2], depth_norm];
        (self.r0.predict(&row), self.g.predict(&row))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_model(seed: u64, n: usize, p: usize) -> NpkrModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = (0..n * p).map(|_| rng.random_range(-3.0..3.0)).collect();
        let y = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b = (0..p).map(|_| rng.random_range(0.2..2.0)).collect();
        NpkrModel::new(p, x, y, b).unwrap()
    }

    #[test]
    fn single_point_gets_all_weight() {
        let m = NpkrModel::new(2, vec![0.3, -1.0], vec![4.5], vec![0.1, 0.1]).unwrap();
        assert_eq!(m.weights(&[100.0, 100.0]), vec![1.0]);
        assert_eq!(m.predict(&[-7.0, 2.0]), 4.5);
    }

    #[test]
    fn symmetric_points_share_weight() {
        let m = NpkrModel::new(1, vec![-1.0, 1.0], vec![2.0, 6.0], vec![0.7]).unwrap();
        let w = m.weights(&[0.0]);
        assert!((w[0] - 0.5).abs() < 1e-15 && (w[1] - 0.5).abs() < 1e-15);
        assert!((m.predict(&[0.0]) - 4.0).abs() < 1e-15);
    }

    #[test]
    fn tiny_bandwidth_interpolates() {
        let m = NpkrModel::new(1, vec![0.0, 1.0, 2.0], vec![5.0, -1.0, 3.0], vec![1e-3]).unwrap();
        assert!((m.predict(&[1.0]) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn weights_match_direct_formula() {
        let m = random_model(1, 40, 3);
        let q = [0.2, -0.4, 1.1];
        let w = m.weights(&q);
        let direct: Vec<f64> = (0..m.n())
            .map(|i| {
                (0..3)
                    .map(|j| {
                        let u = (q[j] - m.x[i * 3 + j]) / m.bandwidths[j];
                        (-0.5 * u * u).exp()
                    })
                    .product::<f64>()
            })
            .collect();
        let total: f64 = direct.iter().sum();
        for (a, b) in w.iter().zip(&direct) {
            assert!((a - b / total).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_invalid_models() {
        assert!(NpkrModel::new(1, vec![0.0], vec![1.0], vec![0.0]).is_err());
        assert!(NpkrModel::new(1, vec![0.0, 1.0], vec![1.0], vec![1.0]).is_err());
    }

    #[test]
    fn constant_response_uses_fallback() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let r = fit_bandwidths_lscv(1, &x, &[2.0; 10], &LscvConfig::default()).unwrap();
        assert_eq!(r.score, 0.0);
        assert!(r.used_fallback());
        let sd = std_dev(x.iter().copied());
        assert!((r.bandwidths[0] - rule_of_thumb(sd, 10, 1.0)).abs() < 1e-12);
    }

    #[test]
    fn degenerate_covariate_is_flagged() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 30;
        let mut x = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let a: f64 = rng.random();
            x.extend([a, 0.5]);
            y.push(a.sin());
        }
        let r = fit_bandwidths_lscv(
            2,
            &x,
            &y,
            &LscvConfig {
                budget: 40,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(r.fallback, vec![false, true]);
        assert!((r.bandwidths[1] - rule_of_thumb(0.0, n, 1.0)).abs() < 1e-12);
    }

    #[test]
    fn linear_response_prefers_selected_bandwidth() {
        let n = 41;
        let x: Vec<f64> = (0..n).map(|i| i as f64 / 40.0).collect();
        let r = fit_bandwidths_lscv(1, &x, &x, &LscvConfig::default()).unwrap();
        let all: Vec<usize> = (0..n).collect();
        let wide = lscv_score(1, &x, &x, &[10.0 * r.bandwidths[0]], &all);
        assert!(r.score < wide, "{} vs {}", r.score, wide);
        assert!(r.start_scores.iter().all(|&s| r.score <= s));
        assert!(
            (lscv_score(1, &x, &x, &r.bandwidths, &r.eval_indices) - r.score).abs()
                <= 1e-10 * r.score.max(1e-300)
        );
        assert!(r.evaluations <= LscvConfig::default().budget + LscvConfig::default().starts);
    }

    #[test]
    fn container_round_trip() {
        let m = random_model(3, 12, 4);
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"NPKR");
        assert_eq!(buf.len(), 5 + 8 + 4 + 8 * (12 * 4 + 12 + 4));
        assert_eq!(NpkrModel::read_from(&mut buf.as_slice()).unwrap(), m);
    }

    proptest! {
        #[test]
        fn weights_are_a_distribution(seed in 0u64..1000, q in proptest::array::uniform3(-50.0f64..50.0)) {
            let m = random_model(seed, 25, 3);
            let w = m.weights(&q);
            prop_assert!(w.iter().all(|&v| v >= 0.0));
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let p = m.predict(&q);
            let (lo, hi) = m.y.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
            prop_assert!(p >= lo - 1e-12 && p <= hi + 1e-12);
        }

        #[test]
        fn prediction_ignores_point_order(seed in 0u64..1000, shift in 1usize..24) {
            let m = random_model(seed, 25, 2);
            let mut x = Vec::new();
            let mut y = Vec::new();
            for k in 0..25 {
                let i = (k + shift) % 25;
                x.extend_from_slice(&m.x[i * 2..i * 2 + 2]);
                y.push(m.y[i]);
            }
            let r = NpkrModel::new(2, x, y, m.bandwidths.clone()).unwrap();
            let q = [0.3, -0.8];
            prop_assert!((r.predict(&q) - m.predict(&q)).abs() < 1e-12);
        }
    }
}
