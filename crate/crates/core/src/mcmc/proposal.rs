use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;

use super::{ChainState, Posterior};
use crate::error::{Error, Result};
use crate::model::LatentState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProposalTag {
    /// `x + s z`, `z` standard normal.
    RwIdentity,
    /// `x + s C^{1/2} z`, steps shaped by the prior covariance.
    RwPrior,
    /// Preconditioned Crank-Nicolson, `mu + sqrt(1-s^2)(x-mu) + s C^{1/2} z`.
    Pcn,
    /// Langevin drift `x + s^2/2 grad log pi(x)` plus `s z`.
    Mala,
}

impl ProposalTag {
    pub const ALL: [ProposalTag; 4] = [Self::RwIdentity, Self::RwPrior, Self::Pcn, Self::Mala];

    pub fn name(self) -> &'static str {
        match self {
            Self::RwIdentity => "rw_identity",
            Self::RwPrior => "rw_prior",
            Self::Pcn => "pcn",
            Self::Mala => "mala",
        }
    }

    /// Conventional acceptance targets: 0.234 for random walks, 0.574 for MALA.
    pub fn default_target(self) -> f64 {
        match self {
            Self::Mala => 0.574,
            _ => 0.234,
        }
    }
}

impl fmt::Display for ProposalTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProposalTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown proposal {s:?}")))
    }
}

/// A proposal kernel with its step size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProposalKind {
    pub tag: ProposalTag,
    pub s: f64,
}

impl ProposalKind {
    pub fn new(tag: ProposalTag, s: f64) -> Result<Self> {
        let kind = Self { tag, s };
        kind.validate()?;
        Ok(kind)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s > 0.0 && self.s.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "step size must be positive, got {}",
                self.s
            )));
        }
        if self.tag == ProposalTag::Pcn && self.s > 1.0 {
            return Err(Error::InvalidParameter(format!(
                "pCN step size must be in (0, 1], got {}",
                self.s
            )));
        }
        Ok(())
    }
}

/// Proposal log densities entering the acceptance ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LogQ {
    /// `q(x'|x) = q(x|x')`; the terms cancel.
    Symmetric,
    /// The kernel is reversible with respect to the prior, so prior terms and
    /// proposal densities cancel together and only the likelihood remains.
    PriorReversible,
    Asymmetric {
        forward: f64,
        backward: f64,
    },
}

#[derive(Debug, Clone)]
pub struct Candidate {
    pub x: LatentState,
    pub log_q: LogQ,
    /// Posterior gradient at the candidate, already needed for the MALA
    /// backward density.
    pub gradient: Option<Vec<f64>>,
}

fn mala_log_q(to: &[f64], from: &[f64], grad: &[f64], s: f64) -> f64 {
    let h = 0.5 * s * s;
    let ss: f64 = to
        .iter()
        .zip(from)
        .zip(grad)
        .map(|((t, f), g)| {
            let d = t - f - h * g;
            d * d
        })
        .sum();
    -ss / (2.0 * s * s)
}

/// Draws a candidate from `kind` around `current`.
pub fn propose<R: Rng + ?Sized>(
    kind: &ProposalKind,
    current: &ChainState,
    post: &Posterior,
    rng: &mut R,
) -> Result<Candidate> {
    let s = kind.s;
    let x = current.x.values();
    let grid = current.x.grid();
    match kind.tag {
        ProposalTag::RwIdentity => {
            let v = x
                .iter()
                .map(|&xi| xi + s * rng.sample::<f64, _>(StandardNormal))
                .collect();
            Ok(Candidate {
                x: LatentState::new(grid, v)?,
                log_q: LogQ::Symmetric,
                gradient: None,
            })
        }
        ProposalTag::RwPrior => {
            let mut cand = post.prior().correlated_noise(rng)?;
            for (c, xi) in cand.values_mut().iter_mut().zip(x) {
                *c = xi + s * *c;
            }
            Ok(Candidate {
                x: cand,
                log_q: LogQ::Symmetric,
                gradient: None,
            })
        }
        ProposalTag::Pcn => {
            let mut cand = post.prior().correlated_noise(rng)?;
            let a = (1.0 - s * s).max(0.0).sqrt();
            let mu = post.prior().mean_state().values();
            for ((c, xi), m) in cand.values_mut().iter_mut().zip(x).zip(mu) {
                *c = m + a * (xi - m) + s * *c;
            }
            Ok(Candidate {
                x: cand,
                log_q: LogQ::PriorReversible,
                gradient: None,
            })
        }
        ProposalTag::Mala => {
            let g = current.gradient.as_ref().ok_or(Error::MissingGradient)?;
            let h = 0.5 * s * s;
            let v: Vec<f64> = x
                .iter()
                .zip(g)
                .map(|(&xi, gi)| xi + h * gi + s * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let cand = LatentState::new(grid, v)?;
            let g_new = post.gradient(&cand)?;
            let forward = mala_log_q(cand.values(), x, g, s);
            let backward = mala_log_q(x, cand.values(), &g_new, s);
            Ok(Candidate {
                x: cand,
                log_q: LogQ::Asymmetric { forward, backward },
                gradient: Some(g_new),
            })
        }
    }
}

/// Log Metropolis-Hastings ratio; `-inf` when the candidate density is not finite.
pub fn acceptance_log_ratio(current: &ChainState, candidate: &ChainState, log_q: LogQ) -> f64 {
    let target = |st: &ChainState| st.log_lik + st.log_prior.unwrap_or(0.0);
    let r = match log_q {
        LogQ::PriorReversible => candidate.log_lik - current.log_lik,
        LogQ::Symmetric => target(candidate) - target(current),
        LogQ::Asymmetric { forward, backward } => {
            target(candidate) - target(current) + backward - forward
        }
    };
    if candidate.log_lik == f64::NEG_INFINITY || r.is_nan() {
        f64::NEG_INFINITY
    } else {
        r
    }
}

/// Accepts when `ln u < log_ratio`, i.e. with probability `min(1, e^log_ratio)`
/// for `u` uniform on `[0, 1)`.
#[inline]
pub fn accept(log_ratio: f64, u: f64) -> bool {
    u.ln() < log_ratio
}

/// One Metropolis-Hastings transition. On acceptance the candidate's
/// densities become the new caches; on rejection `state` is untouched.
pub fn step<R: Rng + ?Sized>(
    kind: &ProposalKind,
    state: &mut ChainState,
    post: &Posterior,
    rng: &mut R,
) -> Result<bool> {
    let cand = propose(kind, state, post, rng)?;
    let log_prior = match cand.log_q {
        LogQ::PriorReversible => None,
        _ => Some(post.log_prior(&cand.x)?),
    };
    let next = ChainState {
        log_lik: post.log_likelihood(&cand.x),
        x: cand.x,
        log_prior,
        gradient: cand.gradient,
    };
    let ratio = acceptance_log_ratio(state, &next, cand.log_q);
    let u: f64 = rng.random();
    if accept(ratio, u) {
        *state = next;
        Ok(true)
    } else {
        Ok(false)
    }
}
