use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    chain_seed, run_chain, step, ChainConfig, ChainState, Posterior, ProposalKind, ProposalTag,
    StartMode,
};
use crate::diagnostics::mean_ess;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TuneConfig {
    /// Iterations per adaptation batch.
    pub batch_size: usize,
    /// Robbins-Monro batches after bracketing.
    pub batches: usize,
    /// At most this many doubling/halving batches to bracket the target.
    pub max_bracket: usize,
    /// Gain `a` in the step `log s += a/t * (rate - target)`.
    pub gain: f64,
    /// Iterations of the final evaluation batch at the tuned step size.
    pub eval_iterations: usize,
    /// Allowed distance between evaluated and target rate.
    pub tolerance: f64,
    /// Starting step size; `None` uses 1/2 for pCN and 0.1 otherwise.
    pub initial_s: Option<f64>,
    pub seed: u64,
    pub start: StartMode,
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self {
            batch_size: 200,
            batches: 50,
            max_bracket: 20,
            gain: 1.5,
            eval_iterations: 4000,
            tolerance: 0.025,
            initial_s: None,
            seed: 0,
            start: StartMode::PriorMean,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TuneResult {
    pub kind: ProposalKind,
    pub target: f64,
    /// Acceptance rate of the fresh evaluation batch at `kind.s`.
    pub rate: f64,
    /// Set when `rate` misses the target by more than the tolerance.
    pub warning: bool,
    /// `(s, observed rate)` per warm-up batch, bracketing included.
    pub history: Vec<(f64, f64)>,
    /// Chain position after tuning, usable as a warm start.
    pub final_state: ChainState,
}

fn run_batch(
    kind: &ProposalKind,
    state: &mut ChainState,
    post: &Posterior,
    rng: &mut ChaCha8Rng,
    n: usize,
) -> Result<f64> {
    let mut accepted = 0usize;
    for _ in 0..n {
        accepted += usize::from(step(kind, state, post, rng)?);
    }
    Ok(accepted as f64 / n as f64)
}

/// Adapts the step size of `tag` toward `target` acceptance.
///
/// Batches double or halve `s` until the observed rate crosses the target,
/// then Robbins-Monro steps on `log s` with gain `a/t` follow; the result is
/// the average of `log s` over the second half of those steps. pCN step
/// sizes are capped at 1. Unreachable targets set `warning` instead of failing.
pub fn tune_step_size(
    tag: ProposalTag,
    target: f64,
    post: &Posterior,
    cfg: &TuneConfig,
) -> Result<TuneResult> {
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "target rate must be in (0, 1), got {target}"
        )));
    }
    if cfg.batch_size == 0 || cfg.batches == 0 || cfg.eval_iterations == 0 {
        return Err(Error::InvalidParameter(
            "tuning batches must be non-empty".into(),
        ));
    }
    let max_log_s = if tag == ProposalTag::Pcn {
        0.0
    } else {
        f64::INFINITY
    };
    let clip = |l: f64| l.min(max_log_s);
    let s0 = cfg
        .initial_s
        .unwrap_or(if tag == ProposalTag::Pcn { 0.5 } else { 0.1 });
    let mut log_s = clip(ProposalKind::new(tag, s0)?.s.ln());

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let x0 = match &cfg.start {
        StartMode::PriorMean => post.prior().mean_state().clone(),
        StartMode::PriorDraw => crate::model::sample_prior(post.prior(), &mut rng)?,
        StartMode::Given(x) => x.clone(),
    };
    let mut state = ChainState::new(post, x0, tag)?;
    let mut history = Vec::new();
    let kind_at = |l: f64| ProposalKind { tag, s: l.exp() };

    let mut last_side = None;
    for _ in 0..cfg.max_bracket {
        let rate = run_batch(&kind_at(log_s), &mut state, post, &mut rng, cfg.batch_size)?;
        history.push((log_s.exp(), rate));
        let above = rate > target;
        if last_side.is_some_and(|s| s != above) {
            break;
        }
        last_side = Some(above);
        let next = clip(if above {
            log_s + std::f64::consts::LN_2
        } else {
            log_s - std::f64::consts::LN_2
        });
        if next == log_s {
            break;
        }
        log_s = next;
    }

    let mut tail = Vec::with_capacity(cfg.batches);
    for t in 1..=cfg.batches {
        let rate = run_batch(&kind_at(log_s), &mut state, post, &mut rng, cfg.batch_size)?;
        history.push((log_s.exp(), rate));
        log_s = clip(log_s + cfg.gain / t as f64 * (rate - target));
        if t > cfg.batches / 2 {
            tail.push(log_s);
        }
    }
    let log_s = clip(tail.iter().sum::<f64>() / tail.len() as f64);

    let kind = kind_at(log_s);
    let rate = run_batch(&kind, &mut state, post, &mut rng, cfg.eval_iterations)?;
    Ok(TuneResult {
        kind,
        target,
        rate,
        warning: (rate - target).abs() > cfg.tolerance,
        history,
        final_state: state,
    })
}

/// One row of a proposal efficiency comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub proposal: ProposalTag,
    pub s: f64,
    pub acceptance_rate: f64,
    /// Sampling-loop wall time in seconds.
    pub time: f64,
    /// Mean effective sample size over all coordinates.
    pub ess: f64,
    pub ess_per_second: f64,
    /// Acceptance rate on the tuner's final evaluation batch.
    pub tune_rate: f64,
    pub tune_warning: bool,
}

impl ComparisonRow {
    pub const HEADER: [&'static str; 6] = [
        "proposal",
        "s",
        "acceptance_rate",
        "time_s",
        "ess",
        "ess_per_s",
    ];
}

pub fn write_comparison_csv<W: Write>(w: W, rows: &[ComparisonRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(ComparisonRow::HEADER)?;
    for r in rows {
        out.write_record([
            r.proposal.name().to_string(),
            format!("{:.6e}", r.s),
            format!("{:.4}", r.acceptance_rate),
            format!("{:.4}", r.time),
            format!("{:.2}", r.ess),
            format!("{:.4}", r.ess_per_second),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Tunes each kernel to its target, then runs equal-length chains warm
/// started from the tuned positions. Kernel `i` uses seed
/// `chain_seed(seed, i)` for both tuning and sampling.
pub fn compare_proposals(
    post: &Posterior,
    kernels: &[(ProposalTag, f64)],
    chain: &ChainConfig,
    tune: &TuneConfig,
) -> Result<Vec<ComparisonRow>> {
    let mut rows = Vec::with_capacity(kernels.len());
    for (i, &(tag, target)) in kernels.iter().enumerate() {
        let seed = chain_seed(chain.seed, i as u64);
        let tuned = tune_step_size(
            tag,
            target,
            post,
            &TuneConfig {
                seed,
                ..tune.clone()
            },
        )?;
        let cfg = ChainConfig {
            seed,
            proposal: tuned.kind,
            start: StartMode::Given(tuned.final_state.x.clone()),
            ..chain.clone()
        };
        let out = run_chain(&cfg, post)?;
        let ess = mean_ess(&out.samples).value;
        rows.push(ComparisonRow {
            proposal: tag,
            s: tuned.kind.s,
            acceptance_rate: out.acceptance_rate(),
            time: out.wall_time,
            ess,
            ess_per_second: ess / out.wall_time,
            tune_rate: tuned.rate,
            tune_warning: tuned.warning,
        });
    }
    Ok(rows)
}
