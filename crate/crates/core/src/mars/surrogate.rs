//! MARS models as a stand-in forward model, and the derivative-response
//! models used for Langevin proposals.

use super::{fit, MarsBatch, MarsFitConfig, MarsModel, TrainingSet};
use crate::error::{Error, Result};
use crate::model::{ForwardJacobian, ForwardModel, Jacobian, LatentState, SurrogateData};

/// Two MARS models, one for `R0` and one for `G`, over `(x_g, x_o, x_clay, depth_norm)`.
#[derive(Debug, Clone)]
pub struct MarsSurrogate {
    r0: MarsModel,
    g: MarsModel,
    batch: MarsBatch,
}

impl MarsSurrogate {
    pub fn new(r0: MarsModel, g: MarsModel) -> Result<Self> {
        if r0.n_vars > 4 || g.n_vars > 4 {
            return Err(Error::InvalidParameter(
                "surrogate models take four covariates".into(),
            ));
        }
        let batch = MarsBatch::new(&[&r0, &g]);
        Ok(Self { r0, g, batch })
    }

    pub fn r0(&self) -> &MarsModel {
        &self.r0
    }

    pub fn g(&self) -> &MarsModel {
        &self.g
    }

    /// Predicts both responses at arbitrary covariate columns.
    pub fn predict_columns(&self, columns: [&[f64]; 4], r0: &mut [f64], g: &mut [f64]) {
        self.batch.predict_columns(&columns, &mut [r0, g]);
    }
}

/// Fits the `R0` and `G` models (forward pass plus pruning) in parallel.
pub fn fit_surrogate(data: &SurrogateData, cfg: &MarsFitConfig) -> Result<MarsSurrogate> {
    let x: Vec<f64> = data.x.iter().flatten().copied().collect();
    let set_r0 = TrainingSet::new(4, x.clone(), data.r0.clone())?;
    let set_g = TrainingSet::new(4, x, data.g.clone())?;
    let (r0, g) = rayon::join(|| fit(&set_r0, cfg), || fit(&set_g, cfg));
    MarsSurrogate::new(r0?, g?)
}

impl ForwardModel for MarsSurrogate {
    fn evaluate(&self, x: [f64; 3], depth_norm: f64) -> (f64, f64) {
        let row = [x[0], x[1], x[2], depth_norm];
        (self.r0.predict(&row), self.g.predict(&row))
    }

    fn evaluate_batch(
        &self,
        latent: &LatentState,
        depth_norm: &[f64],
        r0: &mut [f64],
        g: &mut [f64],
    ) {
        let cols = [
            latent.field(0),
            latent.field(1),
            latent.field(2),
            depth_norm,
        ];
        self.predict_columns(cols, r0, g);
    }
}

impl ForwardJacobian for MarsSurrogate {
    fn jacobian(&self, x: [f64; 3], depth_norm: f64) -> Jacobian {
        let row = [x[0], x[1], x[2], depth_norm];
        let mut gr = [0.0; 4];
        let mut gg = [0.0; 4];
        self.r0.gradient_into(&row, &mut gr);
        self.g.gradient_into(&row, &mut gg);
        [[gr[0], gr[1], gr[2]], [gg[0], gg[1], gg[2]]]
    }
}

/// Six MARS models fitted to finite-difference partial derivatives:
/// `models[r][j]` approximates the derivative of response `r` (0 = `R0`,
/// 1 = `G`) with respect to logit `j`.
#[derive(Debug, Clone)]
pub struct MarsGradientBundle {
    pub models: [[MarsModel; 3]; 2],
}

impl MarsGradientBundle {
    pub fn all(&self) -> impl Iterator<Item = &MarsModel> {
        self.models.iter().flatten()
    }

    pub fn from_models(models: Vec<MarsModel>) -> Result<Self> {
        let arr: [MarsModel; 6] = models.try_into().map_err(|m: Vec<MarsModel>| {
            Error::Format(format!("expected 6 gradient models, got {}", m.len()))
        })?;
        let [a, b, c, d, e, f] = arr;
        Ok(Self {
            models: [[a, b, c], [d, e, f]],
        })
    }
}

impl ForwardJacobian for MarsGradientBundle {
    fn jacobian(&self, x: [f64; 3], depth_norm: f64) -> Jacobian {
        let row = [x[0], x[1], x[2], depth_norm];
        let mut j = [[0.0; 3]; 2];
        for (r, models) in self.models.iter().enumerate() {
            for (k, m) in models.iter().enumerate() {
                j[r][k] = m.predict(&row);
            }
        }
        j
    }
}

/// One-sided finite differences `(h(x + eps e_j) - h(x)) / eps` of `forward`
/// at each covariate row, one MARS model per response and logit.
pub fn fit_gradient_models(
    forward: &dyn ForwardModel,
    covariates: &[[f64; 4]],
    eps: f64,
    cfg: &MarsFitConfig,
) -> Result<MarsGradientBundle> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "eps must be positive, got {eps}"
        )));
    }
    let n = covariates.len();
    let mut responses = vec![vec![0.0; n]; 6];
    for (i, c) in covariates.iter().enumerate() {
        let x = [c[0], c[1], c[2]];
        let (r0, g) = forward.evaluate(x, c[3]);
        for j in 0..3 {
            let mut xs = x;
            xs[j] += eps;
            let (r0s, gs) = forward.evaluate(xs, c[3]);
            responses[j][i] = (r0s - r0) / eps;
            responses[3 + j][i] = (gs - g) / eps;
        }
    }
    let x: Vec<f64> = covariates.iter().flatten().copied().collect();
    let models = responses
        .into_iter()
        .map(|y| fit(&TrainingSet::new(4, x.clone(), y)?, cfg))
        .collect::<Result<Vec<_>>>()?;
    MarsGradientBundle::from_models(models)
}
