//! Backward elimination with GCV model selection.

use super::linalg::{small_lstsq, IncrementalQr};
use super::{gcv, MarsModel, MarsTerm, TrainingSet};
use crate::error::Result;

/// One size along the backward path.
#[derive(Debug, Clone, PartialEq)]
pub struct PruneStep {
    pub n_terms: usize,
    pub rss: f64,
    /// `+inf` when the effective parameter count reaches the sample size.
    pub gcv: f64,
}

pub fn prune_backward(model: &MarsModel, data: &TrainingSet) -> Result<MarsModel> {
    prune_backward_traced(model, data).map(|(m, _)| m)
}

/// Removes one non-intercept term at a time, always the one whose removal
/// (after refitting) increases RSS least, and returns the size with the lowest
/// GCV (ties go to fewer terms) together with the whole path, largest first.
///
/// Terms whose basis columns are linearly dependent on earlier ones over
/// `data` are dropped before elimination starts.
pub fn prune_backward_traced(
    model: &MarsModel,
    data: &TrainingSet,
) -> Result<(MarsModel, Vec<PruneStep>)> {
    let n = data.n();
    let penalty = model.penalty;
    if model.terms.len() <= 1 {
        let step = PruneStep {
            n_terms: model.terms.len(),
            rss: model.rss,
            gcv: model.gcv,
        };
        return Ok((model.clone(), vec![step]));
    }

    let mut qr = IncrementalQr::default();
    let mut kept: Vec<&MarsTerm> = Vec::new();
    for t in &model.terms {
        if qr.push(&data.basis_column(t)) {
            kept.push(t);
        }
    }
    let m = kept.len();
    let y = data.y();
    let z: Vec<f64> = qr.q.iter().map(|q| super::linalg::dot(q, y)).collect();
    let mut resid = y.to_vec();
    for (q, zk) in qr.q.iter().zip(&z) {
        for (r, qi) in resid.iter_mut().zip(q) {
            *r -= zk * qi;
        }
    }
    let rss_full = super::linalg::dot(&resid, &resid);
    let rcols: Vec<Vec<f64>> = (0..m).map(|k| qr.r_column(k, m)).collect();
    let subset_fit = |active: &[usize]| {
        let cols: Vec<Vec<f64>> = active.iter().map(|&k| rcols[k].clone()).collect();
        let (beta, extra) = small_lstsq(&cols, &z);
        (beta, rss_full + extra)
    };
    let gcv_of = |rss: f64, size: usize| gcv(rss, n, size, penalty).unwrap_or(f64::INFINITY);

    let mut active: Vec<usize> = (0..m).collect();
    let (_, rss0) = subset_fit(&active);
    let mut path = vec![PruneStep {
        n_terms: m,
        rss: rss0,
        gcv: gcv_of(rss0, m),
    }];
    let mut subsets = vec![active.clone()];
    while active.len() > 1 {
        let mut best: Option<(usize, f64)> = None;
        for pos in 1..active.len() {
            let trial: Vec<usize> = active
                .iter()
                .enumerate()
                .filter(|&(p, _)| p != pos)
                .map(|(_, &k)| k)
                .collect();
            let (_, rss) = subset_fit(&trial);
            if best.is_none_or(|(_, b)| rss < b) {
                best = Some((pos, rss));
            }
        }
        let (pos, rss) = best.expect("at least one removable term");
        active.remove(pos);
        path.push(PruneStep {
            n_terms: active.len(),
            rss,
            gcv: gcv_of(rss, active.len()),
        });
        subsets.push(active.clone());
    }

    // Ascending size so that ties resolve toward fewer terms.
    let mut choice = path.len() - 1;
    for idx in (0..path.len()).rev() {
        if path[idx].gcv < path[choice].gcv {
            choice = idx;
        }
    }
    let chosen = &subsets[choice];
    let (beta, rss) = subset_fit(chosen);
    let terms = chosen
        .iter()
        .zip(beta)
        .map(|(&k, coefficient)| MarsTerm {
            coefficient,
            factors: kept[k].factors.clone(),
        })
        .collect::<Vec<_>>();
    let pruned = MarsModel {
        gcv: gcv_of(rss, terms.len()),
        terms,
        rss,
        n_train: n,
        n_vars: data.p(),
        penalty,
    };
    Ok((pruned, path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mars::{fit_forward, MarsFitConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn pure_noise_prunes_to_near_intercept() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 200;
        let x: Vec<f64> = (0..3 * n).map(|_| rng.random()).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let data = TrainingSet::new(3, x, y).unwrap();
        let forward = fit_forward(
            &data,
            &MarsFitConfig {
                max_terms: 21,
                ..Default::default()
            },
        )
        .unwrap();
        let (pruned, path) = prune_backward_traced(&forward, &data).unwrap();
        assert!(pruned.n_terms() <= 3, "{} terms", pruned.n_terms());
        assert!(pruned.gcv <= forward.gcv * (1.0 + 1e-12));
        assert!(path
            .windows(2)
            .all(|w| w[1].rss >= w[0].rss * (1.0 - 1e-12)));
        assert_eq!(path.last().unwrap().n_terms, 1);
    }

    #[test]
    fn intercept_only_is_unchanged() {
        let m = MarsModel::intercept_only(2.0, 1);
        let data = TrainingSet::new(1, vec![0.0, 1.0], vec![2.0, 2.0]).unwrap();
        assert_eq!(prune_backward(&m, &data).unwrap(), m);
    }

    #[test]
    fn exact_hinge_survives_pruning() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 300;
        let mut x: Vec<f64> = (0..2 * n).map(|_| rng.random()).collect();
        x[0] = 0.5;
        let y: Vec<f64> = (0..n).map(|i| 2.0 * (x[2 * i] - 0.5f64).max(0.0)).collect();
        let data = TrainingSet::new(2, x, y).unwrap();
        let forward = fit_forward(
            &data,
            &MarsFitConfig {
                max_terms: 11,
                ..Default::default()
            },
        )
        .unwrap();
        let pruned = prune_backward(&forward, &data).unwrap();
        assert!(pruned
            .terms
            .iter()
            .any(|t| t.factors.len() == 1 && t.factors[0].knot == 0.5));
        let mut mse = 0.0;
        for _ in 0..500 {
            let p = [rng.random::<f64>(), rng.random::<f64>()];
            let e = pruned.predict(&p) - 2.0 * (p[0] - 0.5f64).max(0.0);
            mse += e * e / 500.0;
        }
        assert!(mse < 1e-10, "{mse}");
    }
}
