//! Metropolis-Hastings sampling of the latent logit fields.

mod chain;
mod proposal;
mod tune;

pub use chain::{
    chain_seed, run_chain, ChainConfig, ChainOutput, ChainSamples, PhaseCounts, StartMode, TraceRow,
};
pub use proposal::{
    accept, acceptance_log_ratio, propose, step, Candidate, LogQ, ProposalKind, ProposalTag,
};
pub use tune::{
    compare_proposals, tune_step_size, write_comparison_csv, ComparisonRow, TuneConfig, TuneResult,
};

use crate::error::{Error, Result};
use crate::model::{
    prior_log_density, AvoObservation, ForwardJacobian, ForwardModel, LatentState, NoiseSpec, Prior,
};

struct Likelihood<'a> {
    data: &'a AvoObservation,
    noise: NoiseSpec,
    forward: &'a dyn ForwardModel,
}

/// Everything a chain needs to evaluate the posterior: prior, normalized
/// depth, and optionally data with a forward model and a gradient provider.
/// Without data the likelihood is flat and the posterior is the prior.
pub struct Posterior<'a> {
    prior: &'a Prior,
    depth_norm: &'a [f64],
    likelihood: Option<Likelihood<'a>>,
    gradient: Option<&'a dyn ForwardJacobian>,
}

impl<'a> Posterior<'a> {
    pub fn new(
        prior: &'a Prior,
        depth_norm: &'a [f64],
        data: &'a AvoObservation,
        noise: NoiseSpec,
        forward: &'a dyn ForwardModel,
    ) -> Result<Self> {
        noise.validate()?;
        if data.grid() != prior.grid() {
            return Err(Error::InvalidParameter(
                "data and prior on different grids".into(),
            ));
        }
        let mut post = Self::prior_only(prior, depth_norm)?;
        post.likelihood = Some(Likelihood {
            data,
            noise,
            forward,
        });
        Ok(post)
    }

    pub fn prior_only(prior: &'a Prior, depth_norm: &'a [f64]) -> Result<Self> {
        if depth_norm.len() != prior.grid().len() {
            return Err(Error::LengthMismatch {
                expected: prior.grid().len(),
                got: depth_norm.len(),
            });
        }
        Ok(Self {
            prior,
            depth_norm,
            likelihood: None,
            gradient: None,
        })
    }

    /// Supplies `dh/dx` for the likelihood part of the MALA drift.
    pub fn with_gradient(mut self, provider: &'a dyn ForwardJacobian) -> Self {
        self.gradient = Some(provider);
        self
    }

    pub fn prior(&self) -> &Prior {
        self.prior
    }

    pub fn depth_norm(&self) -> &[f64] {
        self.depth_norm
    }

    pub fn has_likelihood(&self) -> bool {
        self.likelihood.is_some()
    }

    pub fn has_gradient(&self) -> bool {
        self.gradient.is_some() || self.likelihood.is_none()
    }

    /// Gaussian log-likelihood of the data, 0 when flat. Non-finite
    /// predictions give `-inf`.
    pub fn log_likelihood(&self, x: &LatentState) -> f64 {
        let Some(lik) = &self.likelihood else {
            return 0.0;
        };
        let n = x.grid().len();
        let mut r0 = vec![0.0; n];
        let mut g = vec![0.0; n];
        lik.forward
            .evaluate_batch(x, self.depth_norm, &mut r0, &mut g);
        let (p11, p12, p22) = lik.noise.precision();
        let mut q = 0.0;
        for k in 0..n {
            let a = lik.data.r0.values()[k] - r0[k];
            let b = lik.data.g.values()[k] - g[k];
            q += p11 * a * a + 2.0 * p12 * a * b + p22 * b * b;
        }
        let ll = n as f64 * lik.noise.log_norm() - 0.5 * q;
        if ll.is_nan() {
            f64::NEG_INFINITY
        } else {
            ll
        }
    }

    /// Unnormalized prior log density.
    pub fn log_prior(&self, x: &LatentState) -> Result<f64> {
        prior_log_density(x, self.prior)
    }

    /// Gradient of the log posterior: the prior part through the spectral
    /// precision, the likelihood part by the chain rule through the provider.
    pub fn gradient(&self, x: &LatentState) -> Result<Vec<f64>> {
        let mut grad = self.prior.log_density_gradient(x)?;
        let Some(lik) = &self.likelihood else {
            return Ok(grad);
        };
        let provider = self.gradient.ok_or(Error::MissingGradient)?;
        let n = x.grid().len();
        let (p11, p12, p22) = lik.noise.precision();
        for k in 0..n {
            let cell = x.cell(k);
            let (h0, h1) = lik.forward.evaluate(cell, self.depth_norm[k]);
            let a = lik.data.r0.values()[k] - h0;
            let b = lik.data.g.values()[k] - h1;
            let (w0, w1) = (p11 * a + p12 * b, p12 * a + p22 * b);
            let jac = provider.jacobian(cell, self.depth_norm[k]);
            for f in 0..3 {
                grad[f * n + k] += w0 * jac[0][f] + w1 * jac[1][f];
            }
        }
        Ok(grad)
    }
}

/// A chain position with its cached log densities.
///
/// `log_prior` is `None` for kernels reversible with respect to the prior,
/// which never need it; `gradient` is kept only for MALA.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub x: LatentState,
    pub log_lik: f64,
    pub log_prior: Option<f64>,
    pub gradient: Option<Vec<f64>>,
}

impl ChainState {
    pub fn new(post: &Posterior, x: LatentState, tag: ProposalTag) -> Result<Self> {
        if x.grid() != post.prior.grid() {
            return Err(Error::InvalidParameter(
                "state and prior on different grids".into(),
            ));
        }
        let log_lik = post.log_likelihood(&x);
        if !log_lik.is_finite() {
            return Err(Error::NonFinite(format!(
                "log-likelihood {log_lik} at the starting state"
            )));
        }
        let log_prior = match tag {
            ProposalTag::Pcn => None,
            _ => Some(post.log_prior(&x)?),
        };
        let gradient = match tag {
            ProposalTag::Mala => {
                let g = post.gradient(&x)?;
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(
                        "log-posterior gradient at the starting state".into(),
                    ));
                }
                Some(g)
            }
            _ => None,
        };
        Ok(Self {
            x,
            log_lik,
            log_prior,
            gradient,
        })
    }

    /// Largest absolute difference between the caches and a fresh evaluation.
    pub fn audit(&self, post: &Posterior) -> Result<f64> {
        let mut worst = (post.log_likelihood(&self.x) - self.log_lik).abs();
        if let Some(lp) = self.log_prior {
            worst = worst.max((post.log_prior(&self.x)? - lp).abs());
        }
        if let Some(g) = &self.gradient {
            for (a, b) in post.gradient(&self.x)?.iter().zip(g) {
                worst = worst.max((a - b).abs());
            }
        }
        Ok(worst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{FieldVector, GridSpec};
    use crate::grf::CorrelationSpec;
    use crate::model::{log_likelihood_cell, ForwardModel, PriorSpec, SyntheticForward};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn prior(grid: GridSpec, sigma: f64, range: f64, mean: f64) -> Prior {
        let corr = CorrelationSpec::gaussian(sigma, range).unwrap();
        let m = FieldVector::constant(grid, mean);
        Prior::new(&PriorSpec {
            means: [m.clone(), m.clone(), m],
            corr: [corr; 3],
        })
        .unwrap()
    }

    struct Linear;

    impl ForwardModel for Linear {
        fn evaluate(&self, x: [f64; 3], d: f64) -> (f64, f64) {
            (0.1 * x[0] - 0.05 * x[1] + 0.02 * d, 0.2 * x[2] + 0.1 * x[0])
        }
    }

    fn state_near(p: &Prior, seed: u64) -> LatentState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        crate::model::sample_prior(p, &mut rng).unwrap()
    }

    #[test]
    fn pcn_unit_step_is_a_fresh_prior_draw() {
        let grid = GridSpec::new(4, 4).unwrap();
        let p = prior(grid, 1.0, 2.0, 0.3);
        let depth = vec![0.5; 16];
        let post = Posterior::prior_only(&p, &depth).unwrap();
        let kind = ProposalKind::new(ProposalTag::Pcn, 1.0).unwrap();
        let a = ChainState::new(&post, state_near(&p, 1), ProposalTag::Pcn).unwrap();
        let b = ChainState::new(&post, state_near(&p, 2), ProposalTag::Pcn).unwrap();
        let ca = propose(&kind, &a, &post, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let cb = propose(&kind, &b, &post, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(ca.x, cb.x);
        assert_eq!(ca.log_q, LogQ::PriorReversible);
        let xi = p
            .correlated_noise(&mut ChaCha8Rng::seed_from_u64(9))
            .unwrap();
        for (c, z) in ca.x.values().iter().zip(xi.values()) {
            assert!((c - (0.3 + z)).abs() < 1e-15);
        }
    }

    #[test]
    fn pcn_small_step_stays_put() {
        let grid = GridSpec::new(4, 4).unwrap();
        let p = prior(grid, 1.0, 2.0, -1.0);
        let depth = vec![0.5; 16];
        let post = Posterior::prior_only(&p, &depth).unwrap();
        let cur = ChainState::new(&post, state_near(&p, 3), ProposalTag::Pcn).unwrap();
        let kind = ProposalKind::new(ProposalTag::Pcn, 1e-8).unwrap();
        let cand = propose(&kind, &cur, &post, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let dist = |a: &[f64], b: &[f64]| {
            a.iter()
                .zip(b)
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        let offset = dist(cur.x.values(), p.mean_state().values());
        assert!(dist(cand.x.values(), cur.x.values()) < 1e-6 * offset + 1e-12);
    }

    #[test]
    fn mala_drift_on_standard_normal() {
        let grid = GridSpec::new(1, 1).unwrap();
        let p = prior(grid, 1.0, 1.0, 0.0);
        let depth = [0.0];
        let post = Posterior::prior_only(&p, &depth).unwrap();
        let x = LatentState::new(grid, vec![0.7, -1.3, 2.0]).unwrap();
        let cur = ChainState::new(&post, x.clone(), ProposalTag::Mala).unwrap();
        let s = 0.4;
        let kind = ProposalKind::new(ProposalTag::Mala, s).unwrap();
        let cand = propose(&kind, &cur, &post, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (c, xi) in cand.x.values().iter().zip(x.values()) {
            let z: f64 = rng.sample(StandardNormal);
            assert!((c - (xi * (1.0 - s * s / 2.0) + s * z)).abs() < 1e-14);
        }
    }

    #[test]
    fn mala_requires_gradients() {
        let grid = GridSpec::new(2, 2).unwrap();
        let p = prior(grid, 1.0, 1.0, 0.0);
        let depth = vec![0.2; 4];
        let obs = AvoObservation::predict(&Linear, p.mean_state(), &depth).unwrap();
        let post = Posterior::new(&p, &depth, &obs, NoiseSpec::default(), &Linear).unwrap();
        assert!(matches!(
            ChainState::new(&post, p.mean_state().clone(), ProposalTag::Mala),
            Err(Error::MissingGradient)
        ));
    }

    struct Broken;

    impl ForwardModel for Broken {
        fn evaluate(&self, _x: [f64; 3], _d: f64) -> (f64, f64) {
            (f64::NAN, 0.0)
        }
    }

    #[test]
    fn non_finite_start_is_an_error() {
        let grid = GridSpec::new(2, 2).unwrap();
        let p = prior(grid, 1.0, 1.0, 0.0);
        let depth = vec![0.2; 4];
        let obs = AvoObservation::predict(&Linear, p.mean_state(), &depth).unwrap();
        let post = Posterior::new(&p, &depth, &obs, NoiseSpec::default(), &Broken).unwrap();
        for tag in ProposalTag::ALL {
            assert!(matches!(
                ChainState::new(&post, p.mean_state().clone(), tag),
                Err(Error::NonFinite(_))
            ));
        }
    }

    #[test]
    fn ratio_identities() {
        let grid = GridSpec::new(3, 3).unwrap();
        let p = prior(grid, 1.0, 1.5, 0.0);
        let depth = vec![0.4; 9];
        let obs = AvoObservation::predict(&Linear, &state_near(&p, 6), &depth).unwrap();
        let post = Posterior::new(&p, &depth, &obs, NoiseSpec::default(), &Linear).unwrap();
        let st = ChainState::new(&post, state_near(&p, 7), ProposalTag::RwPrior).unwrap();
        for q in [
            LogQ::Symmetric,
            LogQ::PriorReversible,
            LogQ::Asymmetric {
                forward: 0.3,
                backward: 0.3,
            },
        ] {
            assert_eq!(acceptance_log_ratio(&st, &st, q), 0.0);
        }
        let flat = Posterior::prior_only(&p, &depth).unwrap();
        let a = ChainState::new(&flat, state_near(&p, 8), ProposalTag::Pcn).unwrap();
        let b = ChainState::new(&flat, state_near(&p, 9), ProposalTag::Pcn).unwrap();
        assert_eq!(acceptance_log_ratio(&a, &b, LogQ::PriorReversible), 0.0);
    }

    #[test]
    fn rw_prior_ratio_matches_dense_density() {
        let grid = GridSpec::new(1, 1).unwrap();
        let sigma: f64 = 0.8;
        let p = prior(grid, sigma, 1.0, 0.25);
        let depth = [0.6];
        let noise = NoiseSpec::new(0.01, 0.04, 0.3).unwrap();
        let obs = AvoObservation::predict(
            &Linear,
            &LatentState::new(grid, vec![0.1, 0.2, 0.3]).unwrap(),
            &depth,
        )
        .unwrap();
        let post = Posterior::new(&p, &depth, &obs, noise, &Linear).unwrap();
        let dense = |x: &[f64]| {
            let prior: f64 = x.iter().map(|v| -0.5 * ((v - 0.25) / sigma).powi(2)).sum();
            let (h0, h1) = Linear.evaluate([x[0], x[1], x[2]], 0.6);
            prior + log_likelihood_cell(obs.r0.values()[0] - h0, obs.g.values()[0] - h1, &noise)
        };
        let x = LatentState::new(grid, vec![0.5, -0.4, 1.1]).unwrap();
        let y = LatentState::new(grid, vec![-0.2, 0.9, 0.0]).unwrap();
        let a = ChainState::new(&post, x.clone(), ProposalTag::RwPrior).unwrap();
        let b = ChainState::new(&post, y.clone(), ProposalTag::RwPrior).unwrap();
        let r = acceptance_log_ratio(&a, &b, LogQ::Symmetric);
        assert!((r - (dense(y.values()) - dense(x.values()))).abs() < 1e-10);
    }

    #[test]
    fn accept_rule() {
        assert!(accept(1e300, 0.999_999));
        assert!(accept(f64::INFINITY, 0.5));
        assert!(!accept(-50.0, 0.99));
        assert!(accept(0.0, 0.0));
    }

    #[test]
    fn rejected_step_leaves_state_untouched() {
        let grid = GridSpec::new(3, 3).unwrap();
        let p = prior(grid, 1.0, 1.5, 0.0);
        let depth = vec![0.4; 9];
        let obs = AvoObservation::predict(&Linear, p.mean_state(), &depth).unwrap();
        // Tiny noise makes almost every large move hopeless.
        let noise = NoiseSpec::new(1e-10, 1e-10, 0.0).unwrap();
        let post = Posterior::new(&p, &depth, &obs, noise, &Linear).unwrap();
        let kind = ProposalKind::new(ProposalTag::RwIdentity, 5.0).unwrap();
        let mut st =
            ChainState::new(&post, p.mean_state().clone(), ProposalTag::RwIdentity).unwrap();
        let before = st.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            assert!(!step(&kind, &mut st, &post, &mut rng).unwrap());
        }
        assert_eq!(st, before);
    }

    fn synthetic_posterior_parts(grid: GridSpec) -> (Prior, Vec<f64>, AvoObservation) {
        let p = prior(grid, 1.0, 2.0, -0.5);
        let depth: Vec<f64> = (0..grid.len())
            .map(|k| k as f64 / grid.len() as f64)
            .collect();
        let truth = state_near(&p, 11);
        let obs = AvoObservation::predict(&SyntheticForward::default(), &truth, &depth).unwrap();
        (p, depth, obs)
    }

    #[test]
    fn caches_stay_coherent() {
        let grid = GridSpec::new(4, 5).unwrap();
        let (p, depth, obs) = synthetic_posterior_parts(grid);
        let f = SyntheticForward::default();
        let post = Posterior::new(&p, &depth, &obs, NoiseSpec::default(), &f)
            .unwrap()
            .with_gradient(&f);
        for tag in ProposalTag::ALL {
            let kind =
                ProposalKind::new(tag, if tag == ProposalTag::Pcn { 0.3 } else { 0.05 }).unwrap();
            let mut st = ChainState::new(&post, p.mean_state().clone(), tag).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let mut accepted = 0;
            for i in 0..200 {
                accepted += usize::from(step(&kind, &mut st, &post, &mut rng).unwrap());
                if i % 25 == 0 {
                    assert!(st.audit(&post).unwrap() < 1e-9, "{tag}");
                }
            }
            assert!(accepted > 0, "{tag}");
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let grid = GridSpec::new(3, 4).unwrap();
        let (p, depth, obs) = synthetic_posterior_parts(grid);
        let f = SyntheticForward::default();
        let post = Posterior::new(&p, &depth, &obs, NoiseSpec::default(), &f)
            .unwrap()
            .with_gradient(&f);
        let x = state_near(&p, 12);
        let g = post.gradient(&x).unwrap();
        let target = |x: &LatentState| post.log_likelihood(x) + post.log_prior(x).unwrap();
        let h = 1e-5;
        for i in 0..x.values().len() {
            let mut up = x.clone();
            let mut dn = x.clone();
            up.values_mut()[i] += h;
            dn.values_mut()[i] -= h;
            let fd = (target(&up) - target(&dn)) / (2.0 * h);
            assert!(
                (fd - g[i]).abs() < 1e-6 * g[i].abs().max(1.0),
                "{i}: {fd} vs {}",
                g[i]
            );
        }
    }

    #[test]
    fn chain_counts_and_determinism() {
        let grid = GridSpec::new(3, 3).unwrap();
        let (p, depth, obs) = synthetic_posterior_parts(grid);
        let f = SyntheticForward::default();
        let post = Posterior::new(&p, &depth, &obs, NoiseSpec::default(), &f).unwrap();
        let mut cfg = ChainConfig::new(
            100,
            10,
            42,
            ProposalKind::new(ProposalTag::Pcn, 0.2).unwrap(),
        );
        cfg.burn_in = Some(0);
        let a = run_chain(&cfg, &post).unwrap();
        assert_eq!(a.samples.len(), 10);
        assert_eq!(a.trace.len(), 10);
        assert_eq!(a.trace[0].iteration, 9);
        let b = run_chain(&cfg, &post).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.sampling_counts, b.sampling_counts);

        cfg.burn_in = None;
        cfg.thin = 7;
        let c = run_chain(&cfg, &post).unwrap();
        assert_eq!(c.samples.len(), 50 / 7);
        assert_eq!(c.burn_in_counts.proposed, 50);
        assert!((0.0..=1.0).contains(&c.acceptance_rate()));
    }

    #[test]
    fn chain_config_validation() {
        let kind = ProposalKind::new(ProposalTag::RwIdentity, 0.1).unwrap();
        let mut cfg = ChainConfig::new(10, 0, 0, kind);
        assert!(cfg.validate().is_err());
        cfg.thin = 1;
        cfg.burn_in = Some(10);
        assert!(cfg.validate().is_err());
        assert!(ProposalKind::new(ProposalTag::Pcn, 1.5).is_err());
        assert!(ProposalKind::new(ProposalTag::RwPrior, 0.0).is_err());
        assert_eq!("mala".parse::<ProposalTag>().unwrap(), ProposalTag::Mala);
        assert!("q5".parse::<ProposalTag>().is_err());
    }

    #[test]
    fn chain_container_round_trip() {
        let grid = GridSpec::new(2, 3).unwrap();
        let values: Vec<f64> = (0..4 * 18).map(|i| i as f64 * 0.5 - 3.0).collect();
        let samples = ChainSamples::new(grid, 10, 500, values).unwrap();
        let mut buf = Vec::new();
        samples.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"CHNS");
        assert_eq!(buf.len(), 5 + 12 + 24 + 8 * 72);
        assert_eq!(
            ChainSamples::read_from(&mut buf.as_slice()).unwrap(),
            samples
        );
        assert_eq!(samples.series(1), vec![-2.5, 6.5, 15.5, 24.5]);
    }

    #[test]
    fn flat_pcn_tuning_warns() {
        let grid = GridSpec::new(3, 3).unwrap();
        let p = prior(grid, 1.0, 1.5, 0.0);
        let depth = vec![0.4; 9];
        let post = Posterior::prior_only(&p, &depth).unwrap();
        let cfg = TuneConfig {
            batches: 5,
            eval_iterations: 200,
            ..TuneConfig::default()
        };
        let r = tune_step_size(ProposalTag::Pcn, 0.234, &post, &cfg).unwrap();
        assert!(r.warning);
        assert_eq!(r.rate, 1.0);
        assert_eq!(r.kind.s, 1.0);
    }
}
