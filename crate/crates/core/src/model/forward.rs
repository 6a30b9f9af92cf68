use super::transform::{logistic, saturations};
use super::LatentState;

/// Maps per-cell logits `(x_g, x_o, x_clay)` and normalized depth to `(R0, G)`.
///
/// Implementations are deterministic and location independent apart from the
/// depth covariate.
pub trait ForwardModel: Send + Sync {
    fn evaluate(&self, x: [f64; 3], depth_norm: f64) -> (f64, f64);

    /// Evaluates every cell of `latent`; overridden by models with a faster batch path.
    fn evaluate_batch(
        &self,
        latent: &LatentState,
        depth_norm: &[f64],
        r0: &mut [f64],
        g: &mut [f64],
    ) {
        for (k, &d) in depth_norm.iter().enumerate() {
            let (a, b) = self.evaluate(latent.cell(k), d);
            r0[k] = a;
            g[k] = b;
        }
    }
}

/// `[[dR0/dx_g, dR0/dx_o, dR0/dx_clay], [dG/dx_g, dG/dx_o, dG/dx_clay]]`.
pub type Jacobian = [[f64; 3]; 2];

/// Supplies the partial derivatives of a forward model with respect to the logits.
pub trait ForwardJacobian: Send + Sync {
    fn jacobian(&self, x: [f64; 3], depth_norm: f64) -> Jacobian;
}

impl<T: ForwardModel + ?Sized> ForwardModel for std::sync::Arc<T> {
    fn evaluate(&self, x: [f64; 3], depth_norm: f64) -> (f64, f64) {
        (**self).evaluate(x, depth_norm)
    }

    fn evaluate_batch(
        &self,
        latent: &LatentState,
        depth_norm: &[f64],
        r0: &mut [f64],
        g: &mut [f64],
    ) {
        (**self).evaluate_batch(latent, depth_norm, r0, g)
    }
}

impl<T: ForwardJacobian + ?Sized> ForwardJacobian for std::sync::Arc<T> {
    fn jacobian(&self, x: [f64; 3], depth_norm: f64) -> Jacobian {
        (**self).jacobian(x, depth_norm)
    }
}

/// Stand-in for a rock-physics forward model: smooth, nonlinear and with
/// interactions between saturations, clay and depth.
///
/// ```text
/// r0 = a0 + a1 Sg + a2 So + a3 V (1-d) + a4 Sg V + a5 tanh(2d - 1)
/// g  = b0 + b1 Sg + b2 So + b3 V       + b4 So d + b5 Sg^2
/// ```
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticForward {
    pub a: [f64; 6],
    pub b: [f64; 6],
}

impl Default for SyntheticForward {
    fn default() -> Self {
        Self {
            a: [0.02, -0.12, -0.06, 0.08, 0.05, 0.03],
            b: [-0.05, 0.20, 0.10, -0.12, -0.08, -0.10],
        }
    }
}

impl SyntheticForward {
    #[inline]
    pub fn eval_reservoir(&self, sg: f64, so: f64, v: f64, d: f64) -> (f64, f64) {
        let a = &self.a;
        let b = &self.b;
        let r0 = a[0]
            + a[1] * sg
            + a[2] * so
            + a[3] * v * (1.0 - d)
            + a[4] * sg * v
            + a[5] * (2.0 * d - 1.0).tanh();
        let g = b[0] + b[1] * sg + b[2] * so + b[3] * v + b[4] * so * d + b[5] * sg * sg;
        (r0, g)
    }
}

impl ForwardModel for SyntheticForward {
    #[inline]
    fn evaluate(&self, x: [f64; 3], depth_norm: f64) -> (f64, f64) {
        let (sg, so, _) = saturations(x[0], x[1]);
        self.eval_reservoir(sg, so, logistic(x[2]), depth_norm)
    }
}

impl ForwardJacobian for SyntheticForward {
    fn jacobian(&self, x: [f64; 3], d: f64) -> Jacobian {
        let (sg, so, _) = saturations(x[0], x[1]);
        let v = logistic(x[2]);
        let dv = v * (1.0 - v);
        // d(Sg, So)/d(xg, xo)
        let dsg = [sg * (1.0 - sg), -sg * so];
        let dso = [-sg * so, so * (1.0 - so)];
        let (a, b) = (&self.a, &self.b);
        let ca = a[1] + a[4] * v;
        let cb = b[1] + 2.0 * b[5] * sg;
        let cc = b[2] + b[4] * d;
        [
            [
                ca * dsg[0] + a[2] * dso[0],
                ca * dsg[1] + a[2] * dso[1],
                (a[3] * (1.0 - d) + a[4] * sg) * dv,
            ],
            [
                cb * dsg[0] + cc * dso[0],
                cb * dsg[1] + cc * dso[1],
                b[3] * dv,
            ],
        ]
    }
}

/// One-sided finite differences `(h(x + eps e_j) - h(x)) / eps` of a forward model.
#[derive(Debug, Clone)]
pub struct FiniteDifferenceJacobian<F> {
    pub forward: F,
    pub eps: f64,
}

impl<F: ForwardModel> ForwardJacobian for FiniteDifferenceJacobian<F> {
    fn jacobian(&self, x: [f64; 3], d: f64) -> Jacobian {
        let (r, g) = self.forward.evaluate(x, d);
        let mut out = [[0.0; 3]; 2];
        for j in 0..3 {
            let mut xp = x;
            xp[j] += self.eps;
            let (rp, gp) = self.forward.evaluate(xp, d);
            out[0][j] = (rp - r) / self.eps;
            out[1][j] = (gp - g) / self.eps;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_formula_at_origin() {
        let f = SyntheticForward::default();
        let (r0, g) = f.evaluate([0.0, 0.0, 0.0], 0.5);
        // Sg = So = 1/3, V = 1/2, tanh(0) = 0
        let r0_expect = 0.02 - 0.12 / 3.0 - 0.06 / 3.0 + 0.08 * 0.25 + 0.05 / 6.0;
        let g_expect = -0.05 + 0.2 / 3.0 + 0.1 / 3.0 - 0.06 - 0.08 / 6.0 - 0.1 / 9.0;
        assert!((r0 - r0_expect).abs() < 1e-15);
        assert!((r0 - (-0.011_666_666_666_666_67)).abs() < 1e-15);
        assert!((g - g_expect).abs() < 1e-15);
    }

    #[test]
    fn intercepts_only_is_constant() {
        let f = SyntheticForward {
            a: [0.3, 0.0, 0.0, 0.0, 0.0, 0.0],
            b: [-0.7, 0.0, 0.0, 0.0, 0.0, 0.0],
        };
        for x in [[5.0, -2.0, 1.0], [-3.0, 0.1, 4.0]] {
            assert_eq!(f.evaluate(x, 0.2), (0.3, -0.7));
        }
    }

    #[test]
    fn analytic_jacobian_matches_central_differences() {
        let f = SyntheticForward::default();
        let h = 1e-6;
        for (x, d) in [
            ([0.3, -1.2, 0.7], 0.2),
            ([-2.0, 1.5, -0.4], 0.9),
            ([0.0, 0.0, 0.0], 0.5),
        ] {
            let jac = f.jacobian(x, d);
            for j in 0..3 {
                let (mut xp, mut xm) = (x, x);
                xp[j] += h;
                xm[j] -= h;
                let (rp, gp) = f.evaluate(xp, d);
                let (rm, gm) = f.evaluate(xm, d);
                assert!((jac[0][j] - (rp - rm) / (2.0 * h)).abs() < 1e-8);
                assert!((jac[1][j] - (gp - gm) / (2.0 * h)).abs() < 1e-8);
            }
        }
    }
}
