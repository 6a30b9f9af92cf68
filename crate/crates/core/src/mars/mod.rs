//! Multivariate adaptive regression splines: greedy forward selection of
//! reflected hinge pairs, backward pruning by generalized cross-validation,
//! prediction and analytic gradients.

mod batch;
mod forward;
pub(crate) mod linalg;
mod prune;
mod surrogate;
mod text;

pub use batch::MarsBatch;
pub use forward::{fit_forward, fit_forward_traced};
pub use prune::{prune_backward, prune_backward_traced, PruneStep};
pub use surrogate::{fit_gradient_models, fit_surrogate, MarsGradientBundle, MarsSurrogate};
pub use text::{read_models, write_models};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    /// `max(x - knot, 0)`
    PlusSide,
    /// `max(knot - x, 0)`
    MinusSide,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HingeFactor {
    pub var: usize,
    pub knot: f64,
    pub direction: Direction,
}

impl HingeFactor {
    pub fn new(var: usize, knot: f64, direction: Direction) -> Self {
        Self {
            var,
            knot,
            direction,
        }
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.eval_scalar(x[self.var])
    }

    #[inline]
    pub fn eval_scalar(&self, v: f64) -> f64 {
        match self.direction {
            Direction::PlusSide => (v - self.knot).max(0.0),
            Direction::MinusSide => (self.knot - v).max(0.0),
        }
    }

    /// Derivative with respect to `x[var]`; zero exactly at the knot.
    #[inline]
    pub fn derivative(&self, x: &[f64]) -> f64 {
        let v = x[self.var];
        match self.direction {
            Direction::PlusSide if v > self.knot => 1.0,
            Direction::MinusSide if v < self.knot => -1.0,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarsTerm {
    pub coefficient: f64,
    /// Empty for the intercept.
    pub factors: Vec<HingeFactor>,
}

impl MarsTerm {
    pub fn intercept(coefficient: f64) -> Self {
        Self {
            coefficient,
            factors: Vec::new(),
        }
    }

    /// Product of the hinge factors, without the coefficient.
    #[inline]
    pub fn basis(&self, x: &[f64]) -> f64 {
        self.factors.iter().map(|f| f.eval(x)).product()
    }

    pub fn degree(&self) -> usize {
        self.factors.len()
    }

    pub fn uses_var(&self, var: usize) -> bool {
        self.factors.iter().any(|f| f.var == var)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarsModel {
    /// The first term is the intercept.
    pub terms: Vec<MarsTerm>,
    pub gcv: f64,
    pub rss: f64,
    pub n_train: usize,
    pub n_vars: usize,
    pub penalty: f64,
}

impl MarsModel {
    pub fn intercept_only(value: f64, n_vars: usize) -> Self {
        Self {
            terms: vec![MarsTerm::intercept(value)],
            gcv: 0.0,
            rss: 0.0,
            n_train: 0,
            n_vars,
            penalty: DEFAULT_PENALTY,
        }
    }

    pub fn n_terms(&self) -> usize {
        self.terms.len()
    }

    /// Terms with two or more factors.
    pub fn n_interactions(&self) -> usize {
        self.terms.iter().filter(|t| t.degree() >= 2).count()
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|t| t.coefficient * t.basis(x)).sum()
    }

    pub fn predict_rows(&self, data: &TrainingSet) -> Vec<f64> {
        (0..data.n()).map(|i| self.predict(data.row(i))).collect()
    }

    /// Exact piecewise-linear gradient by the product rule.
    pub fn predict_gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.n_vars.max(x.len())];
        self.gradient_into(x, &mut g);
        g.truncate(x.len());
        g
    }

    /// Writes the gradient into `out` (length at least the number of covariates).
    pub fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for t in &self.terms {
            for (a, fa) in t.factors.iter().enumerate() {
                let d = fa.derivative(x);
                if d == 0.0 {
                    continue;
                }
                let rest: f64 = t
                    .factors
                    .iter()
                    .enumerate()
                    .filter(|&(b, _)| b != a)
                    .map(|(_, fb)| fb.eval(x))
                    .product();
                out[fa.var] += t.coefficient * d * rest;
            }
        }
    }
}

pub const DEFAULT_PENALTY: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarsFitConfig {
    /// Number of terms, intercept included, at which the forward pass stops.
    pub max_terms: usize,
    pub max_degree: usize,
    /// Cost per knot in the effective parameter count used by GCV.
    pub penalty: f64,
    /// Consider only every `min_span`-th candidate knot per parent and variable.
    pub min_span: usize,
    /// Exclude this many candidate knots at each end of the sorted values.
    pub end_span: usize,
    /// Thin candidate knots to roughly this many evenly spaced quantiles.
    pub max_knots: Option<usize>,
    /// Stop when the best pair reduces RSS by less than this fraction.
    pub threshold: f64,
}

impl Default for MarsFitConfig {
    fn default() -> Self {
        Self {
            max_terms: 41,
            max_degree: 2,
            penalty: DEFAULT_PENALTY,
            min_span: 1,
            end_span: 0,
            max_knots: None,
            threshold: 1e-10,
        }
    }
}

impl MarsFitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_terms < 1 || self.max_degree < 1 {
            return Err(Error::InvalidParameter(
                "max_terms and max_degree must be at least 1".into(),
            ));
        }
        if !(self.penalty >= 0.0) || !(self.threshold >= 0.0) {
            return Err(Error::InvalidParameter(
                "penalty and threshold must be non-negative".into(),
            ));
        }
        if self.max_knots == Some(0) {
            return Err(Error::InvalidParameter("max_knots must be positive".into()));
        }
        Ok(())
    }
}

/// Row-major covariate matrix with one scalar response.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    x: Vec<f64>,
    y: Vec<f64>,
    p: usize,
}

impl TrainingSet {
    pub fn new(p: usize, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if p == 0 {
            return Err(Error::InvalidParameter("no covariates".into()));
        }
        if x.len() != y.len() * p {
            return Err(Error::LengthMismatch {
                expected: y.len() * p,
                got: x.len(),
            });
        }
        if y.len() < 2 {
            return Err(Error::InvalidParameter(
                "need at least two observations".into(),
            ));
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite training value".into()));
        }
        Ok(Self { x, y, p })
    }

    pub fn from_rows<const P: usize>(rows: &[[f64; P]], y: Vec<f64>) -> Result<Self> {
        Self::new(P, rows.iter().flatten().copied().collect(), y)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n()).map(|i| self.x[i * self.p + j]).collect()
    }

    /// Values of `term`'s basis function (without coefficient) at every row.
    pub fn basis_column(&self, term: &MarsTerm) -> Vec<f64> {
        (0..self.n()).map(|i| term.basis(self.row(i))).collect()
    }
}

/// Effective number of parameters: `terms + penalty * (terms - 1) / 2`.
pub fn effective_parameters(n_terms: usize, penalty: f64) -> f64 {
    n_terms as f64 + penalty * (n_terms.saturating_sub(1)) as f64 / 2.0
}

/// `(rss / n) / (1 - D / n)^2`; fails when `D >= n`.
pub fn gcv(rss: f64, n: usize, n_terms: usize, penalty: f64) -> Result<f64> {
    let d = effective_parameters(n_terms, penalty);
    let n = n as f64;
    if d >= n {
        return Err(Error::InvalidParameter(format!(
            "effective parameters {d} not below sample size {n}"
        )));
    }
    let denom = 1.0 - d / n;
    Ok((rss / n) / (denom * denom))
}

/// Forward and pruned fit in one call.
pub fn fit(data: &TrainingSet, cfg: &MarsFitConfig) -> Result<MarsModel> {
    let forward = fit_forward(data, cfg)?;
    prune_backward(&forward, data)
}
