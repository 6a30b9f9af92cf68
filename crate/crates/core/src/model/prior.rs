use rand::Rng;

use super::{LatentState, CLAY, GAS, OIL};
use crate::error::{Error, Result};
use crate::field::{FieldVector, GridSpec};
use crate::grf::{build_base_with, BaseOptions, CirculantBase, CorrelationSpec};

/// Piecewise-linear function of normalized depth, constant beyond its end points.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinear {
    points: Vec<(f64, f64)>,
}

impl PiecewiseLinear {
    pub fn new(mut points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidParameter(
                "piecewise-linear trend needs a point".into(),
            ));
        }
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        if points.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidParameter("duplicate trend abscissa".into()));
        }
        Ok(Self { points })
    }

    pub fn linear(at_top: f64, at_bottom: f64) -> Self {
        Self {
            points: vec![(0.0, at_top), (1.0, at_bottom)],
        }
    }

    pub fn constant(value: f64) -> Self {
        Self {
            points: vec![(0.0, value)],
        }
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn eval(&self, d: f64) -> f64 {
        let p = &self.points;
        if d <= p[0].0 {
            return p[0].1;
        }
        for w in p.windows(2) {
            let ((x0, y0), (x1, y1)) = (w[0], w[1]);
            if d <= x1 {
                return y0 + (y1 - y0) * (d - x0) / (x1 - x0);
            }
        }
        p[p.len() - 1].1
    }
}

/// Depth trends and correlation structure for the three logit fields.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorConfig {
    pub trends: [PiecewiseLinear; 3],
    pub corr: [CorrelationSpec; 3],
}

impl Default for PriorConfig {
    fn default() -> Self {
        let corr = CorrelationSpec::gaussian(1.0, 3.0).expect("default correlation");
        Self {
            trends: [
                PiecewiseLinear::linear(1.0, -3.0),
                PiecewiseLinear::linear(0.5, -2.5),
                PiecewiseLinear::constant(-1.0),
            ],
            corr: [corr; 3],
        }
    }
}

/// Prior means on the grid plus the per-field correlation specs.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorSpec {
    pub means: [FieldVector; 3],
    pub corr: [CorrelationSpec; 3],
}

impl PriorSpec {
    /// Evaluates the depth trends at every cell.
    pub fn from_config(config: &PriorConfig, depth_norm: &FieldVector) -> Self {
        let grid = depth_norm.grid();
        let mean = |k: usize| {
            let v = depth_norm
                .values()
                .iter()
                .map(|&d| config.trends[k].eval(d))
                .collect();
            FieldVector::new(grid, v).expect("trend field")
        };
        Self {
            means: [mean(GAS), mean(OIL), mean(CLAY)],
            corr: config.corr,
        }
    }

    pub fn grid(&self) -> GridSpec {
        self.means[0].grid()
    }
}

/// A ready-to-use prior: means plus one circulant base per field.
#[derive(Debug, Clone)]
pub struct Prior {
    means: [FieldVector; 3],
    mean_state: LatentState,
    bases: [CirculantBase; 3],
}

impl Prior {
    pub fn new(spec: &PriorSpec) -> Result<Self> {
        Self::with_options(spec, BaseOptions::default())
    }

    pub fn with_options(spec: &PriorSpec, opts: BaseOptions) -> Result<Self> {
        let grid = spec.grid();
        let base = |k: usize| build_base_with(grid, &spec.corr[k], opts);
        Self::from_parts(spec.means.clone(), [base(GAS)?, base(OIL)?, base(CLAY)?])
    }

    pub fn from_parts(means: [FieldVector; 3], bases: [CirculantBase; 3]) -> Result<Self> {
        let grid = means[0].grid();
        if means.iter().any(|m| m.grid() != grid) || bases.iter().any(|b| b.grid() != grid) {
            return Err(Error::InvalidParameter(
                "prior components on different grids".into(),
            ));
        }
        let mean_state = LatentState::from_fields(&means[0], &means[1], &means[2])?;
        Ok(Self {
            means,
            mean_state,
            bases,
        })
    }

    pub fn grid(&self) -> GridSpec {
        self.mean_state.grid()
    }

    pub fn means(&self) -> &[FieldVector; 3] {
        &self.means
    }

    pub fn mean_state(&self) -> &LatentState {
        &self.mean_state
    }

    pub fn bases(&self) -> &[CirculantBase; 3] {
        &self.bases
    }

    /// True when every base has a strictly positive spectrum, which the
    /// density and gradient evaluations require.
    pub fn is_invertible(&self) -> bool {
        self.bases.iter().all(|b| b.is_invertible())
    }

    /// A zero-mean correlated draw `C^{1/2} z` for each field.
    pub fn correlated_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<LatentState> {
        let grid = self.grid();
        let n = grid.len();
        let mut out = LatentState::zeros(grid);
        let mut z = vec![0.0; n];
        for (k, base) in self.bases.iter().enumerate() {
            for v in z.iter_mut() {
                *v = rng.sample(rand_distr::StandardNormal);
            }
            out.field_mut(k).copy_from_slice(&base.apply_sqrt(&z)?);
        }
        Ok(out)
    }

    /// `-Sigma^{-1} (x - mu)`, the gradient of the prior log density.
    pub fn log_density_gradient(&self, latent: &LatentState) -> Result<Vec<f64>> {
        let n = self.grid().len();
        let mut out = Vec::with_capacity(3 * n);
        for (k, base) in self.bases.iter().enumerate() {
            let v: Vec<f64> = latent
                .field(k)
                .iter()
                .zip(self.mean_state.field(k))
                .map(|(x, m)| x - m)
                .collect();
            out.extend(base.apply_precision(&v)?.into_iter().map(|p| -p));
        }
        Ok(out)
    }

    /// Sum of the three normalizing constants omitted by [`prior_log_density`].
    pub fn log_normalizer(&self) -> Result<f64> {
        self.bases.iter().map(|b| b.log_normalizer()).sum()
    }
}

/// Unnormalized prior log density: the sum of the three fields' quadratic forms.
pub fn prior_log_density(latent: &LatentState, prior: &Prior) -> Result<f64> {
    if latent.grid() != prior.grid() {
        return Err(Error::InvalidParameter(
            "latent state and prior on different grids".into(),
        ));
    }
    let mut total = 0.0;
    for (k, base) in prior.bases.iter().enumerate() {
        let v: Vec<f64> = latent
            .field(k)
            .iter()
            .zip(prior.mean_state.field(k))
            .map(|(x, m)| x - m)
            .collect();
        total += base.quadform(&v)?;
    }
    Ok(total)
}

/// Three independent field draws around the prior means.
pub fn sample_prior<R: Rng + ?Sized>(prior: &Prior, rng: &mut R) -> Result<LatentState> {
    let mut x = prior.correlated_noise(rng)?;
    for (v, m) in x.values_mut().iter_mut().zip(prior.mean_state.values()) {
        *v += m;
    }
    Ok(x)
}
