//! Synthetic problems and surrogate training data.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::StandardNormal;

use super::{AvoObservation, ForwardModel, LatentState, NoiseSpec, Prior, PriorConfig, PriorSpec};
use crate::error::{Error, Result};
use crate::field::{FieldVector, GridSpec};
use crate::grf::{build_base_with, BaseOptions, CorrelationSpec};

/// Depth of the top reservoir in meters, with its normalization bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthField {
    pub depth: FieldVector,
    pub d_min: f64,
    pub d_max: f64,
}

impl DepthField {
    pub fn new(depth: FieldVector, d_min: f64, d_max: f64) -> Result<Self> {
        if !(d_min < d_max) {
            return Err(Error::InvalidParameter(format!(
                "d_min {d_min} must be below d_max {d_max}"
            )));
        }
        if depth.values().iter().any(|&d| d < d_min || d > d_max) {
            return Err(Error::InvalidParameter(
                "depth outside [d_min, d_max]".into(),
            ));
        }
        Ok(Self {
            depth,
            d_min,
            d_max,
        })
    }

    /// `(depth - d_min) / (d_max - d_min)` per cell.
    pub fn normalized(&self) -> FieldVector {
        let span = self.d_max - self.d_min;
        let v = self
            .depth
            .values()
            .iter()
            .map(|d| (d - self.d_min) / span)
            .collect();
        FieldVector::new(self.depth.grid(), v).expect("normalized depth")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthConfig {
    pub d_min: f64,
    pub d_max: f64,
    /// Amplitude (meters) of a smooth random perturbation added to the ramp.
    pub perturbation: f64,
    pub perturbation_range: f64,
}

impl Default for DepthConfig {
    fn default() -> Self {
        Self {
            d_min: 2000.0,
            d_max: 2200.0,
            perturbation: 0.0,
            perturbation_range: 4.0,
        }
    }
}

impl DepthConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.d_min.is_finite()
            && self.d_max.is_finite()
            && self.d_max > self.d_min
            && self.perturbation >= 0.0
            && self.perturbation.is_finite()
            && self.perturbation_range > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "invalid depth configuration {self:?}"
            )))
        }
    }

    /// Diagonal ramp from `d_min` at cell `(0,0)` to `d_max` at the far corner,
    /// plus the optional perturbation, clipped into the bounds.
    pub fn generate<R: Rng + ?Sized>(&self, grid: GridSpec, rng: &mut R) -> Result<DepthField> {
        self.validate()?;
        let span = self.d_max - self.d_min;
        let frac = |k: usize, n: usize| {
            if n > 1 {
                k as f64 / (n - 1) as f64
            } else {
                0.0
            }
        };
        let mut depth = FieldVector::from_fn(grid, |i, j| {
            self.d_min + span * 0.5 * (frac(i, grid.nx) + frac(j, grid.ny))
        });
        if self.perturbation > 0.0 {
            let corr = CorrelationSpec::gaussian(self.perturbation, self.perturbation_range)?;
            // Only a smooth nuisance: clamp any negative eigenvalues rather than reject.
            let opts = BaseOptions {
                clamp_tolerance: 1.0,
            };
            let pert =
                build_base_with(grid, &corr, opts)?.sample_with(&FieldVector::zeros(grid), rng)?;
            for (d, p) in depth.values_mut().iter_mut().zip(pert.values()) {
                *d = (*d + p).clamp(self.d_min, self.d_max);
            }
        }
        DepthField::new(depth, self.d_min, self.d_max)
    }
}

/// Covariates `(x_g, x_o, x_clay, depth_norm)` with the two forward responses.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SurrogateData {
    pub x: Vec<[f64; 4]>,
    pub r0: Vec<f64>,
    pub g: Vec<f64>,
}

const DATA_HEADER: [&str; 6] = ["x_g", "x_o", "x_clay", "depth_norm", "r0", "g"];

impl SurrogateData {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// First `n` rows.
    pub fn head(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            x: self.x[..n].to_vec(),
            r0: self.r0[..n].to_vec(),
            g: self.g[..n].to_vec(),
        }
    }

    /// Rows at the given indices, in order.
    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            x: idx.iter().map(|&i| self.x[i]).collect(),
            r0: idx.iter().map(|&i| self.r0[i]).collect(),
            g: idx.iter().map(|&i| self.g[i]).collect(),
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(DATA_HEADER)?;
        for ((x, r), g) in self.x.iter().zip(&self.r0).zip(&self.g) {
            out.write_record(
                x.iter()
                    .chain([r, g])
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>(),
            )?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers()?.clone();
        if header.iter().collect::<Vec<_>>() != DATA_HEADER {
            return Err(Error::Format(format!("unexpected header {:?}", header)));
        }
        let mut data = Self::default();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let v: Vec<f64> = rec
                .iter()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Format(format!("row {}: {e}", line + 1)))?;
            if v.len() != 6 {
                return Err(Error::Format(format!(
                    "row {} has {} columns",
                    line + 1,
                    v.len()
                )));
            }
            data.x.push([v[0], v[1], v[2], v[3]]);
            data.r0.push(v[4]);
            data.g.push(v[5]);
        }
        Ok(data)
    }
}

/// Draws surrogate training data: normalized depth uniform on `[0, 1]`, then
/// each logit from its pointwise prior marginal at that depth.
pub fn sample_surrogate_data<R: Rng + ?Sized>(
    prior: &PriorConfig,
    forward: &dyn ForwardModel,
    n: usize,
    rng: &mut R,
) -> SurrogateData {
    let mut data = SurrogateData {
        x: Vec::with_capacity(n),
        r0: Vec::with_capacity(n),
        g: Vec::with_capacity(n),
    };
    for _ in 0..n {
        let d: f64 = rng.random();
        let mut x = [0.0; 3];
        for (k, xk) in x.iter_mut().enumerate() {
            let z: f64 = rng.sample(StandardNormal);
            *xk = prior.trends[k].eval(d) + prior.corr[k].sigma * z;
        }
        let (r0, g) = forward.evaluate(x, d);
        data.x.push([x[0], x[1], x[2], d]);
        data.r0.push(r0);
        data.g.push(g);
    }
    data
}

#[derive(Debug, Clone)]
pub struct SyntheticProblem {
    pub prior: PriorSpec,
    pub depth: DepthField,
    pub truth: LatentState,
    pub data: AvoObservation,
}

/// Builds a synthetic inversion problem: depth ramp, truth drawn from the
/// prior, and data = forward(truth) plus bivariate Gaussian noise (omitted
/// when `noise` is `None`).
pub fn make_synthetic_problem<R: Rng + ?Sized>(
    grid: GridSpec,
    depth_cfg: &DepthConfig,
    prior_cfg: &PriorConfig,
    noise: Option<&NoiseSpec>,
    forward: &dyn ForwardModel,
    rng: &mut R,
) -> Result<SyntheticProblem> {
    let depth = depth_cfg.generate(grid, rng)?;
    let depth_norm = depth.normalized();
    let prior = PriorSpec::from_config(prior_cfg, &depth_norm);
    let truth = super::sample_prior(&Prior::new(&prior)?, rng)?;
    let mut data = AvoObservation::predict(forward, &truth, depth_norm.values())?;
    if let Some(noise) = noise {
        noise.validate()?;
        let (l11, l21, l22) = noise.cholesky();
        for (r, g) in data.r0.values_mut().iter_mut().zip(data.g.values_mut()) {
            let z1: f64 = rng.sample(StandardNormal);
            let z2: f64 = rng.sample(StandardNormal);
            *r += l11 * z1;
            *g += l21 * z1 + l22 * z2;
        }
    }
    Ok(SyntheticProblem {
        prior,
        depth,
        truth,
        data,
    })
}
