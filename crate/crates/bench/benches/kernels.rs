use std::hint::black_box;

use avoinv::mars::{fit_surrogate, MarsFitConfig};
use avoinv::mcmc::{step, ChainState, Posterior, ProposalKind, ProposalTag};
use avoinv::model::{make_synthetic_problem, sample_surrogate_data, DepthConfig, PriorConfig};
use avoinv::{
    build_base, CorrelationSpec, FieldVector, ForwardModel, GridSpec, LatentState, NoiseSpec,
    Prior, SyntheticForward,
};
use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn grf_sampling(c: &mut Criterion) {
    let mut group = c.benchmark_group("grf_sample");
    for n in [16, 64, 256] {
        let grid = GridSpec::new(n, n).unwrap();
        let base = build_base(grid, &CorrelationSpec::gaussian(1.0, 3.0).unwrap()).unwrap();
        let mu = FieldVector::zeros(grid);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        group.bench_function(format!("{n}x{n}"), |b| {
            b.iter(|| base.sample_with(&mu, &mut rng).unwrap())
        });
    }
    group.finish();
}

fn surrogate_vs_forward(c: &mut Criterion) {
    let fwd = SyntheticForward::default();
    let prior = PriorConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let train = sample_surrogate_data(&prior, &fwd, 20_000, &mut rng);
    let mars = fit_surrogate(&train, &MarsFitConfig::default()).unwrap();

    let n = 44_144;
    let data = sample_surrogate_data(&prior, &fwd, n, &mut rng);
    let cols: Vec<Vec<f64>> = (0..4)
        .map(|j| data.x.iter().map(|r| r[j]).collect())
        .collect();
    let values = [&cols[0][..], &cols[1][..], &cols[2][..]].concat();
    let latent = LatentState::new(GridSpec::new(1, n).unwrap(), values).unwrap();
    let (mut r0, mut g) = (vec![0.0; n], vec![0.0; n]);

    let mut group = c.benchmark_group("predict_44144");
    group.bench_function("mars_batch", |b| {
        b.iter(|| {
            mars.predict_columns([&cols[0], &cols[1], &cols[2], &cols[3]], &mut r0, &mut g);
            black_box(&r0);
        })
    });
    group.bench_function("mars_pointwise", |b| {
        b.iter(|| {
            for (k, &d) in cols[3].iter().enumerate() {
                black_box(mars.evaluate(latent.cell(k), d));
            }
        })
    });
    group.bench_function("synthetic_forward", |b| {
        b.iter(|| {
            fwd.evaluate_batch(&latent, &cols[3], &mut r0, &mut g);
            black_box(&r0);
        })
    });
    group.finish();
}

fn chain_step(c: &mut Criterion) {
    let fwd = SyntheticForward::default();
    let noise = NoiseSpec::default();
    let grid = GridSpec::new(10, 10).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let problem = make_synthetic_problem(
        grid,
        &DepthConfig::default(),
        &PriorConfig::default(),
        Some(&noise),
        &fwd,
        &mut rng,
    )
    .unwrap();
    let prior = Prior::new(&problem.prior).unwrap();
    let depth = problem.depth.normalized();
    let post = Posterior::new(&prior, depth.values(), &problem.data, noise, &fwd)
        .unwrap()
        .with_gradient(&fwd);

    let mut group = c.benchmark_group("chain_step_10x10");
    for (tag, s) in [
        (ProposalTag::RwIdentity, 0.004),
        (ProposalTag::RwPrior, 0.13),
        (ProposalTag::Pcn, 0.6),
        (ProposalTag::Mala, 0.006),
    ] {
        let kind = ProposalKind::new(tag, s).unwrap();
        let start = ChainState::new(&post, prior.mean_state().clone(), tag).unwrap();
        group.bench_function(tag.name(), |b| {
            b.iter_batched_ref(
                || start.clone(),
                |state| step(&kind, state, &post, &mut rng).unwrap(),
                BatchSize::SmallInput,
            )
        });
    }
    group.finish();
}

criterion_group!(benches, grf_sampling, surrogate_vs_forward, chain_step);
criterion_main!(benches);
