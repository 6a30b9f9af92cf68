//! Greedy forward pass.
//!
//! Adding the reflected pair `g (x_j - c)+`, `g (c - x_j)+` to a model that
//! already contains the parent `g` spans the same space as adding `g x_j` and
//! `g (x_j - c)+`. For a fixed parent and variable the linear column is
//! orthogonalized once; the hinge column's inner products with the basis, the
//! residual and itself are affine in `c` over the rows above the knot, so all
//! knots are scored from running sums in one sweep over the rows sorted by
//! `x_j`.

use rayon::prelude::*;

use super::linalg::{dot, IncrementalQr, DEPENDENCE_TOL};
use super::{gcv, Direction, HingeFactor, MarsFitConfig, MarsModel, MarsTerm, TrainingSet};
use crate::error::Result;

/// Runs the forward pass and returns the model.
pub fn fit_forward(data: &TrainingSet, cfg: &MarsFitConfig) -> Result<MarsModel> {
    fit_forward_traced(data, cfg).map(|(m, _)| m)
}

/// As [`fit_forward`], also returning the training RSS after the intercept
/// and after every accepted step.
pub fn fit_forward_traced(
    data: &TrainingSet,
    cfg: &MarsFitConfig,
) -> Result<(MarsModel, Vec<f64>)> {
    cfg.validate()?;
    let mut st = ForwardState::new(data, cfg.max_terms);
    let mut trace = vec![st.rss];
    let yy = dot(data.y(), data.y());
    while st.terms.len() + 2 <= cfg.max_terms {
        if st.rss <= 1e-24 * yy {
            break;
        }
        let Some(best) = st.best_candidate(data, cfg) else {
            break;
        };
        if !(best.gain > cfg.threshold * st.rss) {
            break;
        }
        if !st.add_pair(data, best.parent, best.var, best.knot) {
            break;
        }
        trace.push(st.rss);
    }
    let beta = st.qr.solve(&st.z);
    let terms: Vec<MarsTerm> = st
        .terms
        .into_iter()
        .zip(beta)
        .map(|(factors, coefficient)| MarsTerm {
            coefficient,
            factors,
        })
        .collect();
    let n = data.n();
    let g = gcv(st.rss, n, terms.len(), cfg.penalty).unwrap_or(f64::INFINITY);
    Ok((
        MarsModel {
            terms,
            gcv: g,
            rss: st.rss,
            n_train: n,
            n_vars: data.p(),
            penalty: cfg.penalty,
        },
        trace,
    ))
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    gain: f64,
    task: usize,
    parent: usize,
    var: usize,
    knot: f64,
}

/// Per-variable view of the rows sorted by decreasing covariate value.
struct SortedVar {
    order: Vec<usize>,
    xs: Vec<f64>,
    /// Basis columns in sorted row order.
    cols: Vec<Vec<f64>>,
    /// Orthonormal columns in sorted row order, row-major with stride `max_terms`.
    q: Vec<f64>,
}

struct ForwardState {
    n: usize,
    stride: usize,
    terms: Vec<Vec<HingeFactor>>,
    cols: Vec<Vec<f64>>,
    qr: IncrementalQr,
    z: Vec<f64>,
    resid: Vec<f64>,
    rss: f64,
    sorted: Vec<SortedVar>,
}

impl ForwardState {
    fn new(data: &TrainingSet, max_terms: usize) -> Self {
        let n = data.n();
        let stride = max_terms.max(1);
        let sorted = (0..data.p())
            .map(|j| {
                let col = data.column(j);
                let mut order: Vec<usize> = (0..n).collect();
                order.sort_by(|&a, &b| col[b].total_cmp(&col[a]).then(a.cmp(&b)));
                let xs = order.iter().map(|&i| col[i]).collect();
                SortedVar {
                    order,
                    xs,
                    cols: Vec::new(),
                    q: vec![0.0; n * stride],
                }
            })
            .collect();
        let mut st = Self {
            n,
            stride,
            terms: Vec::new(),
            cols: Vec::new(),
            qr: IncrementalQr::default(),
            z: Vec::new(),
            resid: data.y().to_vec(),
            rss: 0.0,
            sorted,
        };
        let added = st.push_column(Vec::new(), vec![1.0; n], data.y());
        debug_assert!(added);
        st
    }

    fn push_column(&mut self, factors: Vec<HingeFactor>, col: Vec<f64>, y: &[f64]) -> bool {
        if self.cols.len() >= self.stride || !self.qr.push(&col) {
            return false;
        }
        let k = self.cols.len();
        let q = self.qr.q.last().expect("just pushed");
        let zk = dot(q, y);
        for (r, qi) in self.resid.iter_mut().zip(q) {
            *r -= zk * qi;
        }
        self.rss = dot(&self.resid, &self.resid);
        self.z.push(zk);
        for sv in &mut self.sorted {
            sv.cols.push(sv.order.iter().map(|&i| col[i]).collect());
            for (pos, &i) in sv.order.iter().enumerate() {
                sv.q[pos * self.stride + k] = q[i];
            }
        }
        self.terms.push(factors);
        self.cols.push(col);
        true
    }

    fn add_pair(&mut self, data: &TrainingSet, parent: usize, var: usize, knot: f64) -> bool {
        let mut added = false;
        for dir in [Direction::PlusSide, Direction::MinusSide] {
            let h = HingeFactor::new(var, knot, dir);
            let col: Vec<f64> = (0..self.n)
                .map(|i| {
                    let g = self.cols[parent][i];
                    if g == 0.0 {
                        0.0
                    } else {
                        g * h.eval(data.row(i))
                    }
                })
                .collect();
            let mut factors = self.terms[parent].clone();
            factors.push(h);
            added |= self.push_column(factors, col, data.y());
        }
        added
    }

    fn best_candidate(&self, data: &TrainingSet, cfg: &MarsFitConfig) -> Option<Candidate> {
        let mut tasks = Vec::new();
        for (t, factors) in self.terms.iter().enumerate() {
            if factors.len() >= cfg.max_degree {
                continue;
            }
            for j in 0..data.p() {
                if !factors.iter().any(|f| f.var == j) {
                    tasks.push((t, j));
                }
            }
        }
        let resid_sorted: Vec<Vec<f64>> = self
            .sorted
            .iter()
            .map(|sv| sv.order.iter().map(|&i| self.resid[i]).collect())
            .collect();
        tasks
            .par_iter()
            .enumerate()
            .filter_map(|(task, &(t, j))| {
                self.score(t, j, &resid_sorted[j], cfg)
                    .map(|(gain, knot)| Candidate {
                        gain,
                        task,
                        parent: t,
                        var: j,
                        knot,
                    })
            })
            .reduce_with(|a, b| {
                if b.gain > a.gain || (b.gain == a.gain && b.task < a.task) {
                    b
                } else {
                    a
                }
            })
    }

    /// Best RSS reduction and knot for one parent and variable.
    fn score(
        &self,
        parent: usize,
        var: usize,
        resid: &[f64],
        cfg: &MarsFitConfig,
    ) -> Option<(f64, f64)> {
        let sv = &self.sorted[var];
        let g = &sv.cols[parent];
        let xs = &sv.xs;
        let n = self.n;
        let m = self.cols.len();
        let stride = self.stride;
        let nz_total = g.iter().filter(|&&v| v != 0.0).count();
        if nz_total == 0 {
            return None;
        }

        // Linear column g * x_j, orthogonalized against the current basis.
        let l: Vec<f64> = g.iter().zip(xs).map(|(a, b)| a * b).collect();
        let l_norm2 = dot(&l, &l);
        let mut lp = l;
        for _ in 0..2 {
            let mut c = vec![0.0; m];
            for i in 0..n {
                let li = lp[i];
                if li != 0.0 {
                    let row = &sv.q[i * stride..i * stride + m];
                    for (ck, qk) in c.iter_mut().zip(row) {
                        *ck += qk * li;
                    }
                }
            }
            for i in 0..n {
                let row = &sv.q[i * stride..i * stride + m];
                lp[i] -= dot(row, &c);
            }
        }
        let lp_norm2 = dot(&lp, &lp);
        let (ql, lin_gain, r2) = if l_norm2 > 0.0 && lp_norm2 > DEPENDENCE_TOL * l_norm2 {
            let s = lp_norm2.sqrt();
            let ql: Vec<f64> = lp.iter().map(|v| v / s).collect();
            let a = dot(resid, &ql);
            let r2: Vec<f64> = resid.iter().zip(&ql).map(|(r, q)| r - a * q).collect();
            (Some(ql), a * a, r2)
        } else {
            (None, 0.0, resid.to_vec())
        };

        let mut stride_k = cfg.min_span.max(1);
        if let Some(k) = cfg.max_knots {
            stride_k = stride_k.max(nz_total.div_ceil(k));
        }

        let mut s1 = vec![0.0; m];
        let mut s0 = vec![0.0; m];
        let (mut l1, mut l0, mut r1, mut r0) = (0.0, 0.0, 0.0, 0.0);
        let (mut bb2, mut bb1, mut bb0) = (0.0, 0.0, 0.0);
        let mut nz_seen = 0usize;
        let mut group_start_nz = 0usize;
        let mut group_has_nz = false;
        let mut groups = 0usize;
        let mut best_gain = 0.0;
        let mut best_knot = None;
        let mut lowest_nz = None;
        for i in 0..n {
            let gi = g[i];
            if gi != 0.0 {
                let xi = xs[i];
                let gx = gi * xi;
                let row = &sv.q[i * stride..i * stride + m];
                for k in 0..m {
                    s1[k] += row[k] * gx;
                    s0[k] += row[k] * gi;
                }
                if let Some(ql) = &ql {
                    l1 += ql[i] * gx;
                    l0 += ql[i] * gi;
                }
                r1 += r2[i] * gx;
                r0 += r2[i] * gi;
                bb2 += gx * gx;
                bb1 += gx * gi;
                bb0 += gi * gi;
                nz_seen += 1;
                group_has_nz = true;
                lowest_nz = Some(xi);
            }
            let group_end = i + 1 == n || xs[i + 1] != xs[i];
            if !group_end {
                continue;
            }
            if group_has_nz {
                let above = group_start_nz;
                let below = nz_total - nz_seen;
                let eligible = above >= cfg.end_span
                    && below >= cfg.end_span
                    && groups.is_multiple_of(stride_k);
                groups += 1;
                if eligible {
                    let c = xs[i];
                    let bnorm2 = bb2 - 2.0 * c * bb1 + c * c * bb0;
                    if bnorm2 > 0.0 {
                        let mut proj = 0.0;
                        for k in 0..m {
                            let v = s1[k] - c * s0[k];
                            proj += v * v;
                        }
                        let lb = l1 - c * l0;
                        proj += lb * lb;
                        let perp = bnorm2 - proj;
                        if perp > DEPENDENCE_TOL * bnorm2 {
                            let rb = r1 - c * r0;
                            let gain = rb * rb / perp;
                            if gain > best_gain {
                                best_gain = gain;
                                best_knot = Some(c);
                            }
                        }
                    }
                }
            }
            group_has_nz = false;
            group_start_nz = nz_seen;
        }
        match best_knot {
            Some(c) => Some((lin_gain + best_gain, c)),
            // Only the linear part helps: a knot at the lowest value spans it.
            None if lin_gain > 0.0 => lowest_nz.map(|c| (lin_gain, c)),
            None => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn hinge_data() -> TrainingSet {
        let x: Vec<f64> = (0..=40).map(|i| i as f64 / 40.0).collect();
        let y = x.iter().map(|v| (v - 0.5f64).max(0.0)).collect();
        TrainingSet::new(1, x, y).unwrap()
    }

    #[test]
    fn recovers_single_hinge() {
        let data = hinge_data();
        let (m, trace) = fit_forward_traced(&data, &MarsFitConfig::default()).unwrap();
        assert!(trace[1] < 1e-16, "{trace:?}");
        assert!(m.terms[1..].iter().any(|t| t.factors[0].knot == 0.5));
        for i in 0..data.n() {
            assert!((m.predict(data.row(i)) - data.y()[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_response_is_intercept_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..60).map(|_| rng.random()).collect();
        let data = TrainingSet::new(2, x, vec![3.25; 30]).unwrap();
        let m = fit_forward(&data, &MarsFitConfig::default()).unwrap();
        assert_eq!(m.n_terms(), 1);
        assert!((m.terms[0].coefficient - 3.25).abs() < 1e-14);
    }

    #[test]
    fn linear_response_needs_one_pair() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 50;
        let x: Vec<f64> = (0..2 * n).map(|_| rng.random()).collect();
        let y = (0..n).map(|i| 1.0 - 3.0 * x[2 * i]).collect();
        let data = TrainingSet::new(2, x, y).unwrap();
        let (m, trace) = fit_forward_traced(&data, &MarsFitConfig::default()).unwrap();
        assert!(trace[1] < 1e-10, "{trace:?}");
        assert!(m.rss < 1e-10 && m.n_terms() <= 3, "{} terms", m.n_terms());
    }

    fn noisy_data(seed: u64, n: usize) -> TrainingSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let r: [f64; 3] = [rng.random(), rng.random(), rng.random()];
            y.push((3.0 * r[0]).sin() + r[1] * r[2] + 0.05 * rng.random::<f64>());
            x.extend(r);
        }
        TrainingSet::new(3, x, y).unwrap()
    }

    #[test]
    fn rss_is_monotone_and_residual_orthogonal() {
        let data = noisy_data(3, 300);
        let cfg = MarsFitConfig {
            max_terms: 21,
            ..Default::default()
        };
        let (m, trace) = fit_forward_traced(&data, &cfg).unwrap();
        assert!(trace.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
        assert!(m.terms.iter().all(|t| t.degree() <= 2));
        for t in &m.terms {
            let mut vars: Vec<_> = t.factors.iter().map(|f| f.var).collect();
            vars.dedup();
            assert_eq!(vars.len(), t.degree());
        }
        let pred = m.predict_rows(&data);
        let resid: Vec<f64> = data.y().iter().zip(&pred).map(|(a, b)| a - b).collect();
        assert!((dot(&resid, &resid) - m.rss).abs() < 1e-9);
        for t in &m.terms {
            let b = data.basis_column(t);
            let scale = dot(&b, &b).sqrt() * dot(data.y(), data.y()).sqrt();
            assert!(dot(&b, &resid).abs() < 1e-8 * scale);
        }
    }

    #[test]
    fn knot_thinning_and_spans_are_respected() {
        let data = noisy_data(4, 200);
        let cfg = MarsFitConfig {
            max_terms: 9,
            max_knots: Some(10),
            end_span: 5,
            ..Default::default()
        };
        let m = fit_forward(&data, &cfg).unwrap();
        assert!(m.n_terms() > 1 && m.n_terms() <= 9);
        let mean = data.y().iter().sum::<f64>() / 200.0;
        let tss: f64 = data.y().iter().map(|v| (v - mean).powi(2)).sum();
        assert!(m.rss < 0.5 * tss);
    }

    #[test]
    fn deterministic_across_runs() {
        let data = noisy_data(5, 400);
        let a = fit_forward(&data, &MarsFitConfig::default()).unwrap();
        let b = fit_forward(&data, &MarsFitConfig::default()).unwrap();
        assert_eq!(a, b);
    }
}
