//! Small dense helpers for the MARS least-squares fits.

/// Columns whose squared norm after projection falls below this fraction of the
/// original squared norm are treated as linearly dependent.
pub(crate) const DEPENDENCE_TOL: f64 = 1e-10;

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Incrementally built thin QR factorization `B = Q R` with orthonormal `Q`.
#[derive(Debug, Clone, Default)]
pub(crate) struct IncrementalQr {
    pub q: Vec<Vec<f64>>,
    /// Column `k` of the upper-triangular `R`, length `k + 1`.
    pub r: Vec<Vec<f64>>,
}

impl IncrementalQr {
    pub fn ncols(&self) -> usize {
        self.q.len()
    }

    /// Appends `col` with two passes of modified Gram-Schmidt. Returns `false`
    /// (leaving the factorization unchanged) when `col` is numerically in the
    /// span of the existing columns.
    pub fn push(&mut self, col: &[f64]) -> bool {
        let norm0 = dot(col, col);
        if !(norm0 > 0.0) {
            return false;
        }
        let mut v = col.to_vec();
        let mut coefs = vec![0.0; self.q.len() + 1];
        for _ in 0..2 {
            for (k, q) in self.q.iter().enumerate() {
                let c = dot(q, &v);
                for (vi, qi) in v.iter_mut().zip(q) {
                    *vi -= c * qi;
                }
                coefs[k] += c;
            }
        }
        let nv = dot(&v, &v);
        if nv <= DEPENDENCE_TOL * norm0 {
            return false;
        }
        let s = nv.sqrt();
        v.iter_mut().for_each(|x| *x /= s);
        coefs[self.q.len()] = s;
        self.q.push(v);
        self.r.push(coefs);
        true
    }

    /// `R^{-1} z` for the full upper-triangular `R`.
    pub fn solve(&self, z: &[f64]) -> Vec<f64> {
        let m = self.ncols();
        let mut beta = z[..m].to_vec();
        for k in (0..m).rev() {
            beta[k] /= self.r[k][k];
            let bk = beta[k];
            for i in 0..k {
                beta[i] -= self.r[k][i] * bk;
            }
        }
        beta
    }

    /// Column `k` of `R` padded with zeros to length `m`.
    pub fn r_column(&self, k: usize, m: usize) -> Vec<f64> {
        let mut c = self.r[k].clone();
        c.resize(m, 0.0);
        c
    }
}

/// Minimizes `||z - A beta||` by Householder QR of the `m x s` matrix whose
/// columns are `cols`. Returns `(beta, residual sum of squares)`.
///
/// Columns are assumed to have full rank; a vanishing pivot gets coefficient 0.
pub(crate) fn small_lstsq(cols: &[Vec<f64>], z: &[f64]) -> (Vec<f64>, f64) {
    let m = z.len();
    let s = cols.len();
    let mut a: Vec<Vec<f64>> = cols.to_vec();
    let mut b = z.to_vec();
    let mut diag = vec![0.0; s];
    for k in 0..s.min(m) {
        let norm = a[k][k..].iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let alpha = if a[k][k] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = a[k][k..].to_vec();
        v[0] -= alpha;
        let vv = dot(&v, &v);
        diag[k] = alpha;
        if vv == 0.0 {
            continue;
        }
        let reflect = |x: &mut [f64]| {
            let f = 2.0 * dot(&v, x) / vv;
            for (xi, vi) in x.iter_mut().zip(&v) {
                *xi -= f * vi;
            }
        };
        for col in a.iter_mut().skip(k + 1) {
            reflect(&mut col[k..]);
        }
        reflect(&mut b[k..]);
    }
    let mut beta = vec![0.0; s];
    for k in (0..s.min(m)).rev() {
        if diag[k] == 0.0 {
            continue;
        }
        let mut acc = b[k];
        for (j, bj) in beta.iter().enumerate().skip(k + 1) {
            acc -= a[j][k] * bj;
        }
        beta[k] = acc / diag[k];
    }
    let resid = b[s.min(m)..].iter().map(|x| x * x).sum();
    (beta, resid)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qr_reproduces_columns() {
        let cols = [
            vec![1.0, 1.0, 1.0, 1.0],
            vec![0.0, 1.0, 2.0, 3.0],
            vec![1.0, 0.0, 2.0, 5.0],
        ];
        let mut qr = IncrementalQr::default();
        for c in &cols {
            assert!(qr.push(c));
        }
        for (k, c) in cols.iter().enumerate() {
            for i in 0..4 {
                let v: f64 = (0..=k).map(|j| qr.q[j][i] * qr.r[k][j]).sum();
                assert!((v - c[i]).abs() < 1e-12);
            }
        }
        assert!(!qr.push(&[2.0, 3.0, 4.0, 5.0]));
        assert_eq!(qr.ncols(), 3);
    }

    #[test]
    fn lstsq_matches_normal_equations() {
        // z = 1 + 2 t exactly plus an orthogonal perturbation (1, -1, -1, 1)
        let a = vec![vec![1.0; 4], vec![0.0, 1.0, 2.0, 3.0]];
        let z: Vec<f64> = (0..4)
            .map(|t| 1.0 + 2.0 * t as f64)
            .zip([1.0, -1.0, -1.0, 1.0])
            .map(|(x, e)| x + e)
            .collect();
        let (beta, rss) = small_lstsq(&a, &z);
        assert!((beta[0] - 1.0).abs() < 1e-12 && (beta[1] - 2.0).abs() < 1e-12);
        assert!((rss - 4.0).abs() < 1e-12);
    }
}
