use super::LatentState;
use crate::error::{Error, Result};
use crate::field::{FieldVector, GridSpec};

/// Saturations and clay fraction on a grid; brine is the reference phase.
#[derive(Debug, Clone, PartialEq)]
pub struct ReservoirState {
    pub s_g: FieldVector,
    pub s_o: FieldVector,
    pub s_b: FieldVector,
    pub v_clay: FieldVector,
}

impl ReservoirState {
    pub fn grid(&self) -> GridSpec {
        self.s_g.grid()
    }
}

/// Overflow-safe logistic function.
#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `(S_g, S_o, S_b)` from the gas and oil logits, with brine as reference.
///
/// Logits are shifted by `max(0, x_g, x_o)` before exponentiation; the three
/// outputs share one denominator so they sum to one up to rounding.
#[inline]
pub fn saturations(x_g: f64, x_o: f64) -> (f64, f64, f64) {
    let m = x_g.max(x_o).max(0.0);
    let eg = (x_g - m).exp();
    let eo = (x_o - m).exp();
    let eb = (-m).exp();
    let den = eg + eo + eb;
    (eg / den, eo / den, eb / den)
}

pub fn to_reservoir(latent: &LatentState) -> ReservoirState {
    let grid = latent.grid();
    let n = grid.len();
    let (mut s_g, mut s_o, mut s_b, mut v) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    for k in 0..n {
        let [xg, xo, xc] = latent.cell(k);
        let (g, o, b) = saturations(xg, xo);
        s_g.push(g);
        s_o.push(o);
        s_b.push(b);
        v.push(logistic(xc));
    }
    let fv = |values| FieldVector::new(grid, values).expect("reservoir field");
    ReservoirState {
        s_g: fv(s_g),
        s_o: fv(s_o),
        s_b: fv(s_b),
        v_clay: fv(v),
    }
}

fn check_open(v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::OutOfUnitInterval(v))
    }
}

/// Inverse of [`to_reservoir`]: `x_l = ln(S_l / S_b)`, `x_clay = logit(V_clay)`.
pub fn to_latent(res: &ReservoirState) -> Result<LatentState> {
    let grid = res.grid();
    let n = grid.len();
    let mut values = vec![0.0; 3 * n];
    for k in 0..n {
        let (g, o, b, c) = (
            res.s_g.values()[k],
            res.s_o.values()[k],
            res.s_b.values()[k],
            res.v_clay.values()[k],
        );
        for v in [g, o, b, c] {
            check_open(v)?;
        }
        if (g + o + b - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "saturations at cell {k} sum to {}",
                g + o + b
            )));
        }
        values[k] = (g / b).ln();
        values[n + k] = (o / b).ln();
        values[2 * n + k] = (c / (1.0 - c)).ln();
    }
    LatentState::new(grid, values)
}
