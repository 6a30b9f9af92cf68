use std::io::{Read, Write};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{step, ChainState, Posterior, ProposalKind};
use crate::error::{Error, Result};
use crate::field::GridSpec;
use crate::io::{read_f64s, read_header, read_u32, read_u64, write_f64s, write_header};
use crate::model::{sample_prior, LatentState};

const CHNS_MAGIC: &[u8; 4] = b"CHNS";
const CHNS_VERSION: u8 = 1;

/// Seed of chain `index` in a run with `master` seed.
pub fn chain_seed(master: u64, index: u64) -> u64 {
    master.wrapping_add(index)
}

#[derive(Debug, Clone, PartialEq)]
pub enum StartMode {
    PriorMean,
    /// A prior draw from the chain's own random stream.
    PriorDraw,
    Given(LatentState),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainConfig {
    pub iterations: usize,
    pub thin: usize,
    /// Discarded leading iterations; `None` discards the first half.
    pub burn_in: Option<usize>,
    pub seed: u64,
    pub proposal: ProposalKind,
    pub start: StartMode,
}

impl ChainConfig {
    pub fn new(iterations: usize, thin: usize, seed: u64, proposal: ProposalKind) -> Self {
        Self {
            iterations,
            thin,
            burn_in: None,
            seed,
            proposal,
            start: StartMode::PriorMean,
        }
    }

    pub fn burn_in(&self) -> usize {
        self.burn_in.unwrap_or(self.iterations / 2)
    }

    pub fn validate(&self) -> Result<()> {
        self.proposal.validate()?;
        if self.thin == 0 {
            return Err(Error::InvalidParameter("thin must be at least 1".into()));
        }
        if self.iterations == 0 || self.burn_in() >= self.iterations {
            return Err(Error::InvalidParameter(format!(
                "burn-in {} must be below iterations {}",
                self.burn_in(),
                self.iterations
            )));
        }
        Ok(())
    }

    /// Samples kept: `(iterations - burn_in) / thin`.
    pub fn stored_count(&self) -> usize {
        (self.iterations - self.burn_in()) / self.thin
    }
}

/// Kept latent states, stored back to back as `3N` values each.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainSamples {
    pub grid: GridSpec,
    pub thin: usize,
    pub burn_in: usize,
    values: Vec<f64>,
}

impl ChainSamples {
    pub fn new(grid: GridSpec, thin: usize, burn_in: usize, values: Vec<f64>) -> Result<Self> {
        let dim = 3 * grid.len();
        if !values.len().is_multiple_of(dim) {
            return Err(Error::LengthMismatch {
                expected: values.len() / dim * dim,
                got: values.len(),
            });
        }
        Ok(Self {
            grid,
            thin,
            burn_in,
            values,
        })
    }

    pub fn dim(&self) -> usize {
        3 * self.grid.len()
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.values[i * d..(i + 1) * d]
    }

    pub fn state(&self, i: usize) -> LatentState {
        LatentState::new(self.grid, self.sample(i).to_vec()).expect("sample length")
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// The trajectory of one scalar coordinate across samples.
    pub fn series(&self, coord: usize) -> Vec<f64> {
        self.values
            .iter()
            .skip(coord)
            .step_by(self.dim())
            .copied()
            .collect()
    }

    /// Writes the `CHNS` container: magic, version, `nx`, `ny`, field count
    /// (u32 LE each), sample count, thin, burn-in (u64 LE each), then the
    /// samples as f64 LE.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        write_header(w, CHNS_MAGIC, CHNS_VERSION)?;
        for v in [self.grid.nx as u32, self.grid.ny as u32, 3] {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in [self.len() as u64, self.thin as u64, self.burn_in as u64] {
            w.write_all(&v.to_le_bytes())?;
        }
        write_f64s(w, &self.values)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        read_header(r, CHNS_MAGIC, CHNS_VERSION)?;
        let nx = read_u32(r)? as usize;
        let ny = read_u32(r)? as usize;
        let fields = read_u32(r)?;
        if fields != 3 {
            return Err(Error::Format(format!("expected 3 fields, found {fields}")));
        }
        let grid = GridSpec::new(nx, ny)?;
        let count = read_u64(r)? as usize;
        let thin = read_u64(r)? as usize;
        let burn_in = read_u64(r)? as usize;
        let values = read_f64s(r, count * 3 * grid.len())?;
        Self::new(grid, thin, burn_in, values)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PhaseCounts {
    pub accepted: usize,
    pub proposed: usize,
}

impl PhaseCounts {
    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

/// Iteration, acceptance flag and log-likelihood at one kept sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub accepted: bool,
    pub log_lik: f64,
}

#[derive(Debug, Clone)]
pub struct ChainOutput {
    pub samples: ChainSamples,
    pub proposal: ProposalKind,
    pub burn_in_counts: PhaseCounts,
    pub sampling_counts: PhaseCounts,
    /// Seconds spent in the sampling loop, setup excluded.
    pub wall_time: f64,
    pub trace: Vec<TraceRow>,
    pub final_state: ChainState,
}

impl ChainOutput {
    /// Acceptance rate after burn-in.
    pub fn acceptance_rate(&self) -> f64 {
        self.sampling_counts.rate()
    }

    pub fn write_trace_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["iteration", "accepted", "log_lik"])?;
        for row in &self.trace {
            out.write_record([
                row.iteration.to_string(),
                u8::from(row.accepted).to_string(),
                format!("{:e}", row.log_lik),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Runs one chain. Output depends only on `cfg` and the posterior.
pub fn run_chain(cfg: &ChainConfig, post: &Posterior) -> Result<ChainOutput> {
    cfg.validate()?;
    let grid = post.prior().grid();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let x0 = match &cfg.start {
        StartMode::PriorMean => post.prior().mean_state().clone(),
        StartMode::PriorDraw => sample_prior(post.prior(), &mut rng)?,
        StartMode::Given(x) => x.clone(),
    };
    let kind = cfg.proposal;
    let mut state = ChainState::new(post, x0, kind.tag)?;
    let burn_in = cfg.burn_in();
    let mut values = Vec::with_capacity(cfg.stored_count() * 3 * grid.len());
    let mut trace = Vec::with_capacity(cfg.stored_count());
    let mut counts = [PhaseCounts::default(); 2];

    let start = Instant::now();
    for t in 0..cfg.iterations {
        let accepted = step(&kind, &mut state, post, &mut rng)?;
        let phase = &mut counts[usize::from(t >= burn_in)];
        phase.proposed += 1;
        phase.accepted += usize::from(accepted);
        if t >= burn_in && (t - burn_in + 1).is_multiple_of(cfg.thin) {
            values.extend_from_slice(state.x.values());
            trace.push(TraceRow {
                iteration: t,
                accepted,
                log_lik: state.log_lik,
            });
        }
    }
    let wall_time = start.elapsed().as_secs_f64();

    Ok(ChainOutput {
        samples: ChainSamples::new(grid, cfg.thin, burn_in, values)?,
        proposal: kind,
        burn_in_counts: counts[0],
        sampling_counts: counts[1],
        wall_time,
        trace,
        final_state: state,
    })
}
