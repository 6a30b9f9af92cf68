//! Log-posterior gradients from each provider against central differences.

use avoinv::mars::{fit_gradient_models, fit_surrogate, MarsFitConfig};
use avoinv::mcmc::Posterior;
use avoinv::model::{
    make_synthetic_problem, sample_prior, sample_surrogate_data, DepthConfig, PriorConfig,
};
use avoinv::{
    ForwardJacobian, ForwardModel, GridSpec, LatentState, NoiseSpec, Prior, SyntheticForward,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn central_difference(post: &Posterior, x: &LatentState, h: f64) -> Vec<f64> {
    let f = |y: &LatentState| post.log_likelihood(y) + post.log_prior(y).unwrap();
    (0..x.values().len())
        .map(|i| {
            let mut a = x.clone();
            a.values_mut()[i] += h;
            let mut b = x.clone();
            b.values_mut()[i] -= h;
            (f(&a) - f(&b)) / (2.0 * h)
        })
        .collect()
}

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let d = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    d / b.iter().map(|y| y * y).sum::<f64>().sqrt()
}

#[test]
fn providers_match_finite_differences() {
    let fwd = SyntheticForward::default();
    let pc = PriorConfig::default();
    let noise = NoiseSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let grid = GridSpec::new(10, 10).unwrap();
    let problem = make_synthetic_problem(
        grid,
        &DepthConfig::default(),
        &pc,
        Some(&noise),
        &fwd,
        &mut rng,
    )
    .unwrap();
    let prior = Prior::new(&problem.prior).unwrap();
    let depth = problem.depth.normalized();
    let train = sample_surrogate_data(&pc, &fwd, 5000, &mut rng);
    let cfg = MarsFitConfig::default();
    let mars = fit_surrogate(&train, &cfg).unwrap();
    let bundle = fit_gradient_models(&fwd, &train.x, 1e-6, &cfg).unwrap();

    let cases: [(&str, &dyn ForwardModel, &dyn ForwardJacobian, f64); 3] = [
        ("exact forward, analytic", &fwd, &fwd, 1e-6),
        ("MARS forward, analytic MARS gradient", &mars, &mars, 1e-6),
        // Derivative models fitted to differences of the exact forward land
        // near 2e-4 here; more data or terms buy little.
        ("exact forward, MARS derivative models", &fwd, &bundle, 1e-3),
    ];
    for (name, forward, provider, tol) in cases {
        let post = Posterior::new(&prior, depth.values(), &problem.data, noise, forward)
            .unwrap()
            .with_gradient(provider);
        for seed in 0..3 {
            let x = sample_prior(&prior, &mut ChaCha8Rng::seed_from_u64(100 + seed)).unwrap();
            let err = relative_error(
                &post.gradient(&x).unwrap(),
                &central_difference(&post, &x, 1e-5),
            );
            eprintln!("{name}, state {seed}: relative error {err:.3e}");
            assert!(err < tol, "{name}: {err}");
        }
    }
}
