//! The subcommands. Each writes into an [`OutDir`] and returns its path.

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use avoinv::diagnostics::{
    self, mean_ess, posterior_maps, sample_correlation, ternary_extract, write_ternary_csv,
    Quantity,
};
use avoinv::io::{read_fields, write_field_csv, write_fields, write_pgm};
use avoinv::mars::{
    fit_gradient_models, fit_surrogate, read_models, write_models, MarsGradientBundle,
    MarsSurrogate,
};
use avoinv::mcmc::{
    chain_seed, compare_proposals, run_chain, tune_step_size, write_comparison_csv, ChainConfig,
    ChainSamples, Posterior, ProposalKind, ProposalTag, StartMode, TuneConfig,
};
use avoinv::model::{
    adjusted_noise, make_synthetic_problem, sample_surrogate_data, to_reservoir, SurrogateData,
    FIELD_NAMES,
};
use avoinv::npkr::NpkrSurrogate;
use avoinv::{
    AvoObservation, FieldVector, ForwardJacobian, ForwardModel, GridSpec, LatentState, NoiseSpec,
    Prior, PriorSpec,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{DiagnosticsSection, ExperimentConfig};
use crate::output::OutDir;
use crate::{Classify, CliError};

pub const MARS_MODEL: &str = "model.mars";
pub const MARS_GRADIENT: &str = "gradient.mars";
pub const NPKR_MODEL: &str = "model.npkr";
pub const ADJUSTED_NOISE: &str = "adjusted_noise.toml";

pub struct Context {
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
    pub quiet: bool,
}

impl Context {
    fn note(&self, msg: &str) {
        if !self.quiet {
            eprintln!("{msg}");
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn fields_bytes(fields: &[&FieldVector]) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    write_fields(&mut buf, fields).io_err("encoding fields")?;
    Ok(buf)
}

fn read_fields_file(path: &Path, expected: usize) -> Result<Vec<FieldVector>, CliError> {
    let fields = read_fields(&mut open(path)?).io_err(&path.display().to_string())?;
    if fields.len() != expected {
        return Err(CliError::Io(format!(
            "{}: expected {expected} fields, found {}",
            path.display(),
            fields.len()
        )));
    }
    Ok(fields)
}

fn csv_bytes(
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).io_err("csv")?;
    for r in rows {
        w.write_record(&r).io_err("csv")?;
    }
    w.into_inner().map_err(|e| CliError::Io(e.to_string()))
}

fn key_values(rows: Vec<(&str, String)>) -> Result<Vec<u8>, CliError> {
    csv_bytes(
        &["key", "value"],
        rows.into_iter().map(|(k, v)| vec![k.to_string(), v]),
    )
}

/// Seeds: the problem uses the master seed, training and test covariates
/// the next two.
pub fn make_synthetic(ctx: &Context) -> Result<PathBuf, CliError> {
    let cfg = &ctx.cfg;
    let grid = cfg.grid();
    let forward = cfg.forward();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = cfg
        .noise_spec()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let problem = make_synthetic_problem(
        grid,
        &cfg.depth_config(),
        &cfg.prior_config(),
        Some(&noise),
        &forward,
        &mut rng,
    )
    .map_err(|e| CliError::Config(format!("synthetic problem: {e}")))?;
    let mut out = OutDir::create(&ctx.out)?;
    let depth_norm = problem.depth.normalized();
    out.write(
        "depth.fldv",
        &fields_bytes(&[&problem.depth.depth, &depth_norm])?,
    )?;
    let truth: Vec<FieldVector> = (0..3).map(|k| problem.truth.field_vector(k)).collect();
    out.write(
        "truth.fldv",
        &fields_bytes(&[&truth[0], &truth[1], &truth[2]])?,
    )?;
    out.write(
        "data.fldv",
        &fields_bytes(&[&problem.data.r0, &problem.data.g])?,
    )?;
    let m = &problem.prior.means;
    out.write("prior_means.fldv", &fields_bytes(&[&m[0], &m[1], &m[2]])?)?;
    for (name, field) in [
        ("depth", &problem.depth.depth),
        ("data_r0", &problem.data.r0),
        ("data_g", &problem.data.g),
    ] {
        let mut buf = Vec::new();
        write_field_csv(&mut buf, field).io_err(name)?;
        out.write(&format!("{name}.csv"), &buf)?;
    }

    let prior_cfg = cfg.prior_config();
    for (name, n, seed) in [
        ("train.csv", cfg.surrogate.n_train, 1),
        ("test.csv", cfg.surrogate.n_test, 2),
    ] {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(seed));
        let data = sample_surrogate_data(&prior_cfg, &forward, n, &mut rng);
        let mut buf = Vec::new();
        data.write_csv(&mut buf).io_err(name)?;
        out.write(name, &buf)?;
    }
    ctx.note(&format!(
        "synthetic problem on a {}x{} grid written",
        grid.nx, grid.ny
    ));
    out.finish(cfg)
}

pub struct Problem {
    pub depth_norm: FieldVector,
    pub truth: LatentState,
    pub data: AvoObservation,
    pub prior: Prior,
}

pub fn load_problem(dir: &Path, cfg: &ExperimentConfig) -> Result<Problem, CliError> {
    let depth = read_fields_file(&dir.join("depth.fldv"), 2)?;
    let truth = read_fields_file(&dir.join("truth.fldv"), 3)?;
    let data = read_fields_file(&dir.join("data.fldv"), 2)?;
    let means = read_fields_file(&dir.join("prior_means.fldv"), 3)?;
    let grid = depth[0].grid();
    if grid != cfg.grid() {
        return Err(CliError::Config(format!(
            "problem grid {}x{} differs from configured grid {}x{}",
            grid.nx, grid.ny, cfg.grid.nx, cfg.grid.ny
        )));
    }
    let spec = PriorSpec {
        means: [means[0].clone(), means[1].clone(), means[2].clone()],
        corr: cfg.prior_config().corr,
    };
    let prior = Prior::with_options(&spec, cfg.base_options())
        .map_err(|e| CliError::Config(format!("prior: {e}")))?;
    let io = |e: avoinv::Error| CliError::Io(format!("{}: {e}", dir.display()));
    Ok(Problem {
        depth_norm: depth[1].clone(),
        truth: LatentState::from_fields(&truth[0], &truth[1], &truth[2]).map_err(io)?,
        data: AvoObservation::new(data[0].clone(), data[1].clone()).map_err(io)?,
        prior,
    })
}

/// A fitted surrogate read back from a `fit-surrogate` directory. Built once
/// per command, so the size difference between variants does not matter.
#[allow(clippy::large_enum_variant)]
pub enum Surrogate {
    Mars {
        model: MarsSurrogate,
        gradient: Option<MarsGradientBundle>,
    },
    Npkr(NpkrSurrogate),
}

impl Surrogate {
    pub fn forward(&self) -> &dyn ForwardModel {
        match self {
            Self::Mars { model, .. } => model,
            Self::Npkr(m) => m,
        }
    }
}

pub fn load_surrogate(dir: &Path) -> Result<Surrogate, CliError> {
    let mars = dir.join(MARS_MODEL);
    if mars.exists() {
        let models = read_models(open(&mars)?).io_err(&mars.display().to_string())?;
        let [r0, g]: [_; 2] = models
            .try_into()
            .map_err(|_| CliError::Io(format!("{}: expected two models", mars.display())))?;
        let model = MarsSurrogate::new(r0, g).io_err(&mars.display().to_string())?;
        let grad_path = dir.join(MARS_GRADIENT);
        let gradient = if grad_path.exists() {
            let models = read_models(open(&grad_path)?).io_err(&grad_path.display().to_string())?;
            Some(MarsGradientBundle::from_models(models).io_err(&grad_path.display().to_string())?)
        } else {
            None
        };
        return Ok(Surrogate::Mars { model, gradient });
    }
    let npkr = dir.join(NPKR_MODEL);
    if npkr.exists() {
        let m = NpkrSurrogate::read_from(&mut open(&npkr)?).io_err(&npkr.display().to_string())?;
        return Ok(Surrogate::Npkr(m));
    }
    Err(CliError::Io(format!(
        "no surrogate model in {}",
        dir.display()
    )))
}

/// Evaluates a forward model at every covariate row through its batch path.
pub fn predict_rows(forward: &dyn ForwardModel, data: &SurrogateData) -> (Vec<f64>, Vec<f64>) {
    let n = data.len();
    let grid = GridSpec::new(1, n.max(1)).expect("non-empty grid");
    let mut values = vec![0.0; 3 * n];
    let mut depth = vec![0.0; n];
    for (i, x) in data.x.iter().enumerate() {
        values[i] = x[0];
        values[n + i] = x[1];
        values[2 * n + i] = x[2];
        depth[i] = x[3];
    }
    let latent = LatentState::new(grid, values).expect("latent length");
    let (mut r0, mut g) = (vec![0.0; n], vec![0.0; n]);
    forward.evaluate_batch(&latent, &depth, &mut r0, &mut g);
    (r0, g)
}

fn fidelity_rows(
    data: &SurrogateData,
    r0: &[f64],
    g: &[f64],
) -> Result<Vec<Vec<String>>, CliError> {
    let mut rows = Vec::new();
    for (name, truth, pred) in [("r0", &data.r0, r0), ("g", &data.g, g)] {
        let corr =
            sample_correlation(truth, pred).map_err(|e| CliError::Fit(format!("{name}: {e}")))?;
        let mse = diagnostics::mse(truth, pred).map_err(|e| CliError::Fit(e.to_string()))?;
        let mean = truth.iter().sum::<f64>() / truth.len() as f64;
        let var = truth.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / truth.len() as f64;
        rows.push(vec![
            name.to_string(),
            truth.len().to_string(),
            corr.to_string(),
            mse.to_string(),
            (mse / var).to_string(),
        ]);
    }
    Ok(rows)
}

const METRICS_HEADER: [&str; 5] = ["response", "n", "correlation", "mse", "mse_over_variance"];

#[derive(Serialize, Deserialize)]
struct NoiseFile {
    var_r0: f64,
    var_g: f64,
    corr: f64,
}

fn read_surrogate_data(path: &Path) -> Result<SurrogateData, CliError> {
    SurrogateData::read_csv(open(path)?).io_err(&path.display().to_string())
}

pub fn fit_surrogate_cmd(
    ctx: &Context,
    train: &Path,
    test: &Path,
    kind: Option<&str>,
) -> Result<PathBuf, CliError> {
    let cfg = &ctx.cfg;
    let kind = kind.unwrap_or(&cfg.surrogate.kind);
    let train = read_surrogate_data(train)?;
    let test = read_surrogate_data(test)?;
    let mut out = OutDir::create(&ctx.out)?;
    let mut timing = Vec::new();

    let t0 = Instant::now();
    let surrogate = match kind {
        "mars" => {
            let model = fit_surrogate(&train, &cfg.mars_config()).fit_err()?;
            let mut buf = Vec::new();
            write_models(&mut buf, &[model.r0(), model.g()]).io_err(MARS_MODEL)?;
            out.write(MARS_MODEL, &buf)?;
            timing.push(("fit", t0.elapsed().as_secs_f64()));
            let gradient = if cfg.surrogate.gradient_models {
                let t1 = Instant::now();
                let n = cfg.surrogate.gradient_n.min(train.len());
                let bundle = fit_gradient_models(
                    &cfg.forward(),
                    &train.x[..n],
                    cfg.surrogate.gradient_eps,
                    &cfg.mars_config(),
                )
                .fit_err()?;
                let mut buf = Vec::new();
                write_models(&mut buf, &bundle.all().collect::<Vec<_>>()).io_err(MARS_GRADIENT)?;
                out.write(MARS_GRADIENT, &buf)?;
                timing.push(("fit_gradient", t1.elapsed().as_secs_f64()));
                Some(bundle)
            } else {
                None
            };
            Surrogate::Mars { model, gradient }
        }
        "npkr" => {
            let subset = if cfg.surrogate.npkr_subset < train.len() {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                let mut idx =
                    rand::seq::index::sample(&mut rng, train.len(), cfg.surrogate.npkr_subset)
                        .into_vec();
                idx.sort_unstable();
                train.select(&idx)
            } else {
                train.clone()
            };
            let (model, reports) = NpkrSurrogate::fit(&subset, &cfg.lscv_config()).fit_err()?;
            timing.push(("fit", t0.elapsed().as_secs_f64()));
            let mut buf = Vec::new();
            model.write_to(&mut buf).io_err(NPKR_MODEL)?;
            out.write(NPKR_MODEL, &buf)?;
            let rows = ["r0", "g"].iter().zip(&reports).map(|(name, r)| {
                let mut row = vec![
                    name.to_string(),
                    subset.len().to_string(),
                    r.score.to_string(),
                ];
                row.extend(r.bandwidths.iter().map(|b| b.to_string()));
                row.push(r.used_fallback().to_string());
                row
            });
            let header = [
                "response", "n", "loo_sse", "h_x_g", "h_x_o", "h_x_clay", "h_depth", "fallback",
            ];
            out.write("lscv.csv", &csv_bytes(&header, rows)?)?;
            Surrogate::Npkr(model)
        }
        other => {
            return Err(CliError::Config(format!(
                "unknown surrogate kind {other:?}"
            )))
        }
    };

    let t2 = Instant::now();
    let (r0, g) = predict_rows(surrogate.forward(), &test);
    timing.push(("predict_test", t2.elapsed().as_secs_f64()));
    out.write(
        "metrics.csv",
        &csv_bytes(&METRICS_HEADER, fidelity_rows(&test, &r0, &g)?)?,
    )?;

    let resid_r0: Vec<f64> = r0.iter().zip(&test.r0).map(|(p, t)| p - t).collect();
    let resid_g: Vec<f64> = g.iter().zip(&test.g).map(|(p, t)| p - t).collect();
    let noise = cfg
        .noise_spec()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let adj = adjusted_noise(&noise, &resid_r0, &resid_g).fit_err()?;
    let text = toml::to_string(&NoiseFile {
        var_r0: adj.var_r0,
        var_g: adj.var_g,
        corr: adj.corr,
    })
    .expect("noise serializes");
    out.write(ADJUSTED_NOISE, text.as_bytes())?;

    let rows = timing
        .iter()
        .map(|(k, v)| vec![k.to_string(), v.to_string()]);
    out.write_volatile("timing.csv", &csv_bytes(&["stage", "seconds"], rows)?)?;
    ctx.note(&format!(
        "{kind} surrogate fitted on {} points",
        train.len()
    ));
    out.finish(cfg)
}

pub fn eval_surrogate_cmd(
    ctx: &Context,
    model_dir: &Path,
    test: &Path,
) -> Result<PathBuf, CliError> {
    let cfg = &ctx.cfg;
    let surrogate = load_surrogate(model_dir)?;
    let test = read_surrogate_data(test)?;
    let mut out = OutDir::create(&ctx.out)?;
    let (r0, g) = predict_rows(surrogate.forward(), &test);
    let surrogate_time = min_time(|| predict_rows(surrogate.forward(), &test));
    let exact = cfg.forward();
    let forward_time = min_time(|| predict_rows(&exact, &test));
    out.write(
        "metrics.csv",
        &csv_bytes(&METRICS_HEADER, fidelity_rows(&test, &r0, &g)?)?,
    )?;
    let rows = vec![
        vec!["surrogate_predict".into(), surrogate_time.to_string()],
        vec!["forward_evaluate".into(), forward_time.to_string()],
        vec![
            "speedup".into(),
            (forward_time / surrogate_time).to_string(),
        ],
    ];
    out.write_volatile("timing.csv", &csv_bytes(&["stage", "seconds"], rows)?)?;
    out.finish(cfg)
}

/// Fastest of five timed runs after two untimed ones.
fn min_time<T>(mut f: impl FnMut() -> T) -> f64 {
    for _ in 0..2 {
        std::hint::black_box(f());
    }
    (0..5)
        .map(|_| {
            let t = Instant::now();
            std::hint::black_box(f());
            t.elapsed().as_secs_f64()
        })
        .fold(f64::INFINITY, f64::min)
}

/// Forward model, gradient provider and noise for a chain.
struct ChainModel {
    forward: Box<dyn ForwardModel>,
    gradient: Option<Box<dyn ForwardJacobian>>,
    noise: NoiseSpec,
}

fn chain_model(
    cfg: &ExperimentConfig,
    surrogate_dir: Option<&Path>,
    needs_gradient: bool,
) -> Result<ChainModel, CliError> {
    let need_dir = |what: &str| {
        surrogate_dir.ok_or_else(|| CliError::Config(format!("{what} requires --surrogate <dir>")))
    };
    let surrogate = match (
        cfg.chain.forward.as_str(),
        needs_gradient && cfg.chain.gradient == "mars_grad",
    ) {
        ("surrogate", _) | (_, true) => {
            Some(load_surrogate(need_dir("this chain configuration")?)?)
        }
        _ => None,
    };
    let forward: Box<dyn ForwardModel> = match (cfg.chain.forward.as_str(), &surrogate) {
        ("exact", _) => Box::new(cfg.forward()),
        (_, Some(Surrogate::Mars { model, .. })) => Box::new(model.clone()),
        (_, Some(Surrogate::Npkr(m))) => Box::new(m.clone()),
        (_, None) => unreachable!("surrogate loaded above"),
    };
    let gradient: Option<Box<dyn ForwardJacobian>> = if !needs_gradient {
        None
    } else {
        match (
            cfg.chain.gradient.as_str(),
            cfg.chain.forward.as_str(),
            &surrogate,
        ) {
            (
                "mars_grad",
                _,
                Some(Surrogate::Mars {
                    gradient: Some(b), ..
                }),
            ) => Some(Box::new(b.clone())),
            ("mars_grad", _, _) => {
                return Err(CliError::Config(
                    "chain.gradient = mars_grad needs MARS derivative models".into(),
                ))
            }
            ("analytic", "exact", _) => Some(Box::new(cfg.forward())),
            ("analytic", _, Some(Surrogate::Mars { model, .. })) => Some(Box::new(model.clone())),
            _ => {
                return Err(CliError::Config(
                    "analytic gradients need a MARS surrogate or the exact forward".into(),
                ))
            }
        }
    };
    let mut noise = cfg
        .noise_spec()
        .map_err(|e| CliError::Config(e.to_string()))?;
    if cfg.noise.adjust {
        let path = need_dir("noise.adjust")?.join(ADJUSTED_NOISE);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let n: NoiseFile = toml::from_str(&text).io_err(&path.display().to_string())?;
        noise = NoiseSpec::new(n.var_r0, n.var_g, n.corr).io_err(&path.display().to_string())?;
    }
    Ok(ChainModel {
        forward,
        gradient,
        noise,
    })
}

fn start_mode(cfg: &ExperimentConfig) -> StartMode {
    match cfg.chain.start.as_str() {
        "prior_draw" => StartMode::PriorDraw,
        _ => StartMode::PriorMean,
    }
}

fn tune_config(cfg: &ExperimentConfig, seed: u64) -> TuneConfig {
    let t = &cfg.tune;
    TuneConfig {
        batch_size: t.batch_size,
        batches: t.batches,
        eval_iterations: t.eval_iterations,
        tolerance: t.tolerance,
        gain: t.gain,
        initial_s: Some(cfg.chain.s),
        seed,
        start: start_mode(cfg),
        ..TuneConfig::default()
    }
}

fn tag_of(name: &str) -> Result<ProposalTag, CliError> {
    name.parse()
        .map_err(|e: avoinv::Error| CliError::Config(e.to_string()))
}

/// Maps, uncertainty maps, ternary extracts and ESS tables for stored samples.
/// Shared by `run-chain` and `diagnose` so both emit identical bytes.
pub fn emit_posterior(
    out: &mut OutDir,
    samples: &ChainSamples,
    diag: &DiagnosticsSection,
) -> Result<Vec<(&'static str, String)>, CliError> {
    let mut summary = vec![("samples", samples.len().to_string())];
    if samples.is_empty() {
        return Ok(summary);
    }
    for q in Quantity::ALL {
        let (mean, spread) = posterior_maps(samples, q).sampling_err("diagnostics")?;
        for (kind, field) in [("mean", &mean), ("uncertainty", &spread)] {
            let mut csv = Vec::new();
            write_field_csv(&mut csv, field).io_err("map")?;
            out.write(&format!("{kind}_{}.csv", q.name()), &csv)?;
            let mut pgm = Vec::new();
            write_pgm(&mut pgm, field).io_err("map")?;
            out.write(&format!("{kind}_{}.pgm", q.name()), &pgm)?;
        }
    }
    for &cell in &diag.ternary_cells {
        let triples = ternary_extract(samples, cell)
            .map_err(|e| CliError::Config(format!("diagnostics.ternary_cells: {e}")))?;
        let mut buf = Vec::new();
        write_ternary_csv(&mut buf, &triples).io_err("ternary")?;
        out.write(&format!("ternary_cell{cell}.csv"), &buf)?;
    }

    let n = samples.grid.len();
    let ess_rows = (0..samples.dim()).map(|c| {
        let e = diagnostics::ess(&samples.series(c)).map_or(String::new(), |v| v.to_string());
        vec![
            c.to_string(),
            FIELD_NAMES[c / n].to_string(),
            (c % n).to_string(),
            e,
        ]
    });
    out.write(
        "ess.csv",
        &csv_bytes(&["coordinate", "field", "cell", "ess"], ess_rows)?,
    )?;

    let cell = diag.ternary_cells.first().copied().unwrap_or(0).min(n - 1);
    let max_lag = diag.max_lag.min(samples.len().saturating_sub(1));
    let acfs: Vec<Option<Vec<f64>>> = (0..3)
        .map(|f| diagnostics::acf(&samples.series(f * n + cell), max_lag).ok())
        .collect();
    let acf_rows = (0..=max_lag).map(|lag| {
        let mut row = vec![lag.to_string()];
        row.extend(
            acfs.iter()
                .map(|a| a.as_ref().map_or(String::new(), |v| v[lag].to_string())),
        );
        row
    });
    out.write(
        "acf.csv",
        &csv_bytes(&["lag", "x_g", "x_o", "x_clay"], acf_rows)?,
    )?;

    let m = mean_ess(samples);
    summary.push(("mean_ess", m.value.to_string()));
    summary.push(("ess_excluded", m.excluded.len().to_string()));
    Ok(summary)
}

pub fn run_chain_cmd(
    ctx: &Context,
    problem_dir: &Path,
    surrogate_dir: Option<&Path>,
) -> Result<PathBuf, CliError> {
    let cfg = &ctx.cfg;
    let problem = load_problem(problem_dir, cfg)?;
    let tag = tag_of(&cfg.chain.proposal)?;
    let model = chain_model(cfg, surrogate_dir, tag == ProposalTag::Mala)?;
    let mut post = Posterior::new(
        &problem.prior,
        problem.depth_norm.values(),
        &problem.data,
        model.noise,
        model.forward.as_ref(),
    )
    .map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(g) = &model.gradient {
        post = post.with_gradient(g.as_ref());
    }
    let seed = chain_seed(cfg.seed, cfg.chain.index);
    let target = cfg.chain.target.unwrap_or(tag.default_target());

    let t0 = Instant::now();
    let (kind, tuned) = if cfg.chain.tune {
        ctx.note(&format!("tuning {tag} toward acceptance {target}"));
        let r = tune_step_size(tag, target, &post, &tune_config(cfg, seed)).sampling_err("mcmc")?;
        if r.warning {
            ctx.note(&format!(
                "warning: tuned acceptance {:.4} misses target {target}",
                r.rate
            ));
        }
        (r.kind, Some(r))
    } else {
        (
            ProposalKind::new(tag, cfg.chain.s).map_err(|e| CliError::Config(e.to_string()))?,
            None,
        )
    };
    let tune_time = t0.elapsed().as_secs_f64();

    let chain_cfg = ChainConfig {
        iterations: cfg.chain.iterations,
        thin: cfg.chain.thin,
        burn_in: cfg.chain.burn_in,
        seed,
        proposal: kind,
        start: start_mode(cfg),
    };
    ctx.note(&format!(
        "running {} iterations of {tag} with s = {:.5}",
        chain_cfg.iterations, kind.s
    ));
    let result = run_chain(&chain_cfg, &post).sampling_err("mcmc")?;

    let mut out = OutDir::create(&ctx.out)?;
    let mut buf = Vec::new();
    result.samples.write_to(&mut buf).io_err("chain")?;
    out.write("chain.chns", &buf)?;
    let mut trace = Vec::new();
    result.write_trace_csv(&mut trace).io_err("trace")?;
    out.write("trace.csv", &trace)?;

    let mut summary = vec![
        ("proposal", tag.name().to_string()),
        ("s", kind.s.to_string()),
        ("tuned", cfg.chain.tune.to_string()),
        ("target", target.to_string()),
        (
            "tune_rate",
            tuned.as_ref().map_or(String::new(), |t| t.rate.to_string()),
        ),
        (
            "tune_warning",
            tuned.as_ref().is_some_and(|t| t.warning).to_string(),
        ),
        ("noise_var_r0", model.noise.var_r0.to_string()),
        ("noise_var_g", model.noise.var_g.to_string()),
        ("noise_corr", model.noise.corr.to_string()),
        ("iterations", chain_cfg.iterations.to_string()),
        ("thin", chain_cfg.thin.to_string()),
        ("burn_in", chain_cfg.burn_in().to_string()),
        (
            "burn_in_acceptance",
            result.burn_in_counts.rate().to_string(),
        ),
        ("acceptance", result.acceptance_rate().to_string()),
    ];
    summary.extend(emit_posterior(&mut out, &result.samples, &cfg.diagnostics)?);
    if !result.samples.is_empty() {
        let truth = to_reservoir(&problem.truth);
        for (q, field) in
            Quantity::ALL
                .iter()
                .zip([&truth.s_g, &truth.s_o, &truth.s_b, &truth.v_clay])
        {
            let (mean, _) = posterior_maps(&result.samples, *q).sampling_err("diagnostics")?;
            let err =
                diagnostics::mse(mean.values(), field.values()).sampling_err("diagnostics")?;
            summary.push((q.truth_key(), err.to_string()));
        }
    }
    out.write("summary.csv", &key_values(summary)?)?;
    let timing = vec![
        ("tune_seconds", tune_time.to_string()),
        ("sampling_seconds", result.wall_time.to_string()),
    ];
    out.write_volatile("timing.csv", &key_values(timing)?)?;
    out.finish(cfg)
}

trait TruthKey {
    fn truth_key(&self) -> &'static str;
}

impl TruthKey for Quantity {
    fn truth_key(&self) -> &'static str {
        match self {
            Quantity::GasSaturation => "truth_mse_s_g",
            Quantity::OilSaturation => "truth_mse_s_o",
            Quantity::BrineSaturation => "truth_mse_s_b",
            Quantity::ClayFraction => "truth_mse_v_clay",
        }
    }
}

pub fn compare_proposals_cmd(
    ctx: &Context,
    problem_dir: &Path,
    surrogate_dir: Option<&Path>,
) -> Result<PathBuf, CliError> {
    let cfg = &ctx.cfg;
    let problem = load_problem(problem_dir, cfg)?;
    let tags = cfg
        .compare
        .proposals
        .iter()
        .map(|p| tag_of(p))
        .collect::<Result<Vec<_>, _>>()?;
    let model = chain_model(cfg, surrogate_dir, tags.contains(&ProposalTag::Mala))?;
    let mut post = Posterior::new(
        &problem.prior,
        problem.depth_norm.values(),
        &problem.data,
        model.noise,
        model.forward.as_ref(),
    )
    .map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(g) = &model.gradient {
        post = post.with_gradient(g.as_ref());
    }
    let kernels: Vec<(ProposalTag, f64)> = tags.iter().map(|&t| (t, t.default_target())).collect();
    let chain = ChainConfig {
        iterations: cfg.compare.iterations,
        thin: cfg.compare.thin,
        burn_in: Some(cfg.compare.burn_in),
        seed: cfg.seed,
        proposal: ProposalKind::new(ProposalTag::Pcn, 0.5).expect("placeholder kernel"),
        start: start_mode(cfg),
    };
    let tune = TuneConfig {
        initial_s: None,
        ..tune_config(cfg, cfg.seed)
    };
    ctx.note(&format!("comparing {} kernels", kernels.len()));
    let rows = compare_proposals(&post, &kernels, &chain, &tune).sampling_err("mcmc")?;

    let mut out = OutDir::create(&ctx.out)?;
    let mut table = Vec::new();
    write_comparison_csv(&mut table, &rows).io_err("comparison")?;
    out.write_volatile("comparison.csv", &table)?;
    let stable = rows.iter().zip(&kernels).map(|(r, (_, target))| {
        vec![
            r.proposal.name().to_string(),
            target.to_string(),
            r.s.to_string(),
            r.acceptance_rate.to_string(),
            r.ess.to_string(),
            r.tune_rate.to_string(),
            r.tune_warning.to_string(),
        ]
    });
    let header = [
        "proposal",
        "target",
        "s",
        "acceptance_rate",
        "ess",
        "tune_rate",
        "tune_warning",
    ];
    out.write("tuning.csv", &csv_bytes(&header, stable)?)?;
    if !ctx.quiet {
        std::io::stderr().write_all(&table)?;
    }
    out.finish(cfg)
}

pub fn diagnose_cmd(ctx: &Context, chain_path: &Path) -> Result<PathBuf, CliError> {
    let samples = ChainSamples::read_from(&mut open(chain_path)?)
        .io_err(&chain_path.display().to_string())?;
    let mut out = OutDir::create(&ctx.out)?;
    let summary = emit_posterior(&mut out, &samples, &ctx.cfg.diagnostics)?;
    out.write("summary.csv", &key_values(summary)?)?;
    out.finish(&ctx.cfg)
}
