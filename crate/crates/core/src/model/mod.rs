//! The inverse problem: latent fields, reservoir transforms, prior, AVO
//! likelihood and a synthetic forward model.

mod forward;
mod likelihood;
mod prior;
mod synthetic;
mod transform;

pub use forward::{
    FiniteDifferenceJacobian, ForwardJacobian, ForwardModel, Jacobian, SyntheticForward,
};
pub use likelihood::{adjusted_noise, log_likelihood, log_likelihood_cell, NoiseSpec};
pub use prior::{prior_log_density, sample_prior, PiecewiseLinear, Prior, PriorConfig, PriorSpec};
pub use synthetic::{
    make_synthetic_problem, sample_surrogate_data, DepthConfig, DepthField, SurrogateData,
    SyntheticProblem,
};
pub use transform::{logistic, saturations, to_latent, to_reservoir, ReservoirState};

use crate::error::{Error, Result};
use crate::field::{FieldVector, GridSpec};

/// Index of the gas logit field inside a [`LatentState`].
pub const GAS: usize = 0;
/// Index of the oil logit field.
pub const OIL: usize = 1;
/// Index of the clay logit field.
pub const CLAY: usize = 2;
pub const FIELD_NAMES: [&str; 3] = ["x_g", "x_o", "x_clay"];

/// The MCMC state: three logit fields `(x_g, x_o, x_clay)` on one grid,
/// stored back to back in a single `3N` vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    grid: GridSpec,
    values: Vec<f64>,
}

impl LatentState {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != 3 * grid.len() {
            return Err(Error::LengthMismatch {
                expected: 3 * grid.len(),
                got: values.len(),
            });
        }
        Ok(Self { grid, values })
    }

    pub fn from_fields(x_g: &FieldVector, x_o: &FieldVector, x_clay: &FieldVector) -> Result<Self> {
        let grid = x_g.grid();
        if x_o.grid() != grid || x_clay.grid() != grid {
            return Err(Error::InvalidParameter(
                "latent fields on different grids".into(),
            ));
        }
        let mut values = Vec::with_capacity(3 * grid.len());
        values.extend_from_slice(x_g.values());
        values.extend_from_slice(x_o.values());
        values.extend_from_slice(x_clay.values());
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            grid,
            values: vec![0.0; 3 * grid.len()],
        }
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn field(&self, k: usize) -> &[f64] {
        let n = self.grid.len();
        &self.values[k * n..(k + 1) * n]
    }

    pub fn field_mut(&mut self, k: usize) -> &mut [f64] {
        let n = self.grid.len();
        &mut self.values[k * n..(k + 1) * n]
    }

    pub fn field_vector(&self, k: usize) -> FieldVector {
        FieldVector::new(self.grid, self.field(k).to_vec()).expect("latent field length")
    }

    /// The logits `(x_g, x_o, x_clay)` at one cell.
    #[inline]
    pub fn cell(&self, index: usize) -> [f64; 3] {
        let n = self.grid.len();
        [
            self.values[index],
            self.values[n + index],
            self.values[2 * n + index],
        ]
    }
}

/// Zero-offset reflectivity and AVO gradient per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct AvoObservation {
    pub r0: FieldVector,
    pub g: FieldVector,
}

impl AvoObservation {
    pub fn new(r0: FieldVector, g: FieldVector) -> Result<Self> {
        if r0.grid() != g.grid() {
            return Err(Error::InvalidParameter(
                "R0 and G on different grids".into(),
            ));
        }
        Ok(Self { r0, g })
    }

    pub fn grid(&self) -> GridSpec {
        self.r0.grid()
    }

    /// Evaluates a forward model at every cell of `latent`.
    pub fn predict(
        forward: &dyn ForwardModel,
        latent: &LatentState,
        depth_norm: &[f64],
    ) -> Result<Self> {
        let grid = latent.grid();
        if depth_norm.len() != grid.len() {
            return Err(Error::LengthMismatch {
                expected: grid.len(),
                got: depth_norm.len(),
            });
        }
        let mut r0 = vec![0.0; grid.len()];
        let mut g = vec![0.0; grid.len()];
        forward.evaluate_batch(latent, depth_norm, &mut r0, &mut g);
        Ok(Self {
            r0: FieldVector::new(grid, r0)?,
            g: FieldVector::new(grid, g)?,
        })
    }
}
