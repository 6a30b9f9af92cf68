//! Column-oriented prediction for many points and several models at once.

use super::{Direction, HingeFactor, MarsModel};

const BLOCK: usize = 128;
const LANES: usize = 32;

/// Several MARS models over the same covariates, compiled for evaluation at
/// many points.
///
/// Models whose terms have at most two factors are regrouped as
/// `sum_P w_P(x) L_P(x)`, where each parent weight `w_P` is one or a single
/// hinge and each `L_P` is an affine function plus a combination of
/// `(x_j - k)+` columns; a minus-side hinge is rewritten as
/// `(x - k)+ - x + k`. Points are processed in blocks with every pass a
/// straight loop over the block, compiled for the widest vector extension
/// the CPU reports. Higher-degree models evaluate each term's hinge product.
#[derive(Debug, Clone)]
pub struct MarsBatch {
    n_models: usize,
    n_vars: usize,
    plan: Plan,
}

#[derive(Debug, Clone)]
enum Plan {
    Grouped(GroupedPlan),
    Hinges(HingePlan),
}

impl MarsBatch {
    pub fn new(models: &[&MarsModel]) -> Self {
        let n_vars = models.iter().map(|m| m.n_vars).max().unwrap_or(0);
        let low_degree = models
            .iter()
            .flat_map(|m| &m.terms)
            .all(|t| t.factors.len() <= 2);
        let plan = if low_degree {
            Plan::Grouped(GroupedPlan::new(models))
        } else {
            Plan::Hinges(HingePlan::new(models))
        };
        Self {
            n_models: models.len(),
            n_vars,
            plan,
        }
    }

    /// Forces the term-by-term hinge product path regardless of degree.
    pub fn new_hinge_columns(models: &[&MarsModel]) -> Self {
        Self {
            n_models: models.len(),
            n_vars: models.iter().map(|m| m.n_vars).max().unwrap_or(0),
            plan: Plan::Hinges(HingePlan::new(models)),
        }
    }

    pub fn n_models(&self) -> usize {
        self.n_models
    }

    pub fn is_grouped(&self) -> bool {
        matches!(self.plan, Plan::Grouped(_))
    }

    /// `columns[v][i]` is covariate `v` at point `i`; `outputs[k][i]` receives
    /// model `k`'s prediction.
    pub fn predict_columns(&self, columns: &[&[f64]], outputs: &mut [&mut [f64]]) {
        assert!(columns.len() >= self.n_vars, "missing covariate columns");
        assert_eq!(outputs.len(), self.n_models, "one output per model");
        let n = columns.first().map_or(0, |c| c.len());
        assert!(
            columns.iter().all(|c| c.len() == n),
            "covariate columns differ in length"
        );
        assert!(
            outputs.iter().all(|o| o.len() >= n),
            "output shorter than input"
        );
        match &self.plan {
            Plan::Grouped(g) => g.predict(columns, outputs, n),
            Plan::Hinges(h) => h.predict(columns, outputs, n),
        }
    }
}

/// `gamma + sum beta_v x_v + sum alpha_h H_h`.
#[derive(Debug, Clone, Default)]
struct Affine {
    gamma: f64,
    beta: Vec<(usize, f64)>,
    alpha: Vec<(usize, f64)>,
}

impl Affine {
    fn add_beta(&mut self, var: usize, c: f64) {
        match self.beta.iter_mut().find(|(v, _)| *v == var) {
            Some((_, b)) => *b += c,
            None => self.beta.push((var, c)),
        }
    }

    fn add_alpha(&mut self, h: usize, c: f64) {
        match self.alpha.iter_mut().find(|(k, _)| *k == h) {
            Some((_, a)) => *a += c,
            None => self.alpha.push((h, c)),
        }
    }
}

#[derive(Debug, Clone)]
struct Group {
    /// Plus-side hinge column of the parent.
    hinge: usize,
    minus: bool,
    var: usize,
    knot: f64,
    body: Affine,
}

#[derive(Debug, Clone)]
struct GroupedModel {
    base: Affine,
    groups: Vec<Group>,
}

#[derive(Debug, Clone)]
struct GroupedPlan {
    /// Plus-side hinges `(var, knot)`.
    hinges: Vec<(usize, f64)>,
    models: Vec<GroupedModel>,
}

impl GroupedPlan {
    fn new(models: &[&MarsModel]) -> Self {
        let mut hinges: Vec<(usize, f64)> = Vec::new();
        let mut column = |h: &HingeFactor| {
            let found = hinges
                .iter()
                .position(|&(v, k)| v == h.var && k.to_bits() == h.knot.to_bits());
            found.unwrap_or_else(|| {
                hinges.push((h.var, h.knot));
                hinges.len() - 1
            })
        };
        let mut add = |body: &mut Affine, h: &HingeFactor, c: f64| {
            let idx = column(h);
            body.add_alpha(idx, c);
            if h.direction == Direction::MinusSide {
                body.add_beta(h.var, -c);
                body.gamma += c * h.knot;
            }
            idx
        };
        let mut compiled = Vec::with_capacity(models.len());
        for m in models {
            let mut base = Affine::default();
            let mut groups: Vec<Group> = Vec::new();
            for t in &m.terms {
                let c = t.coefficient;
                match t.factors.as_slice() {
                    [] => base.gamma += c,
                    [h] => {
                        add(&mut base, h, c);
                    }
                    [p, h] => {
                        let minus = p.direction == Direction::MinusSide;
                        let pos = groups.iter().position(|g| {
                            g.var == p.var
                                && g.minus == minus
                                && g.knot.to_bits() == p.knot.to_bits()
                        });
                        let pos = match pos {
                            Some(pos) => pos,
                            None => {
                                let mut scratch = Affine::default();
                                let hinge = add(&mut scratch, p, 0.0);
                                groups.push(Group {
                                    hinge,
                                    minus,
                                    var: p.var,
                                    knot: p.knot,
                                    body: Affine::default(),
                                });
                                groups.len() - 1
                            }
                        };
                        add(&mut groups[pos].body, h, c);
                    }
                    _ => unreachable!("grouping requires degree at most two"),
                }
            }
            compiled.push(GroupedModel { base, groups });
        }
        Self {
            hinges,
            models: compiled,
        }
    }

    fn predict(&self, columns: &[&[f64]], outputs: &mut [&mut [f64]], n: usize) {
        #[cfg(target_arch = "x86_64")]
        {
            let fma = std::arch::is_x86_feature_detected!("fma");
            if fma && std::arch::is_x86_feature_detected!("avx512f") {
                // SAFETY: the required CPU features were detected at runtime.
                return unsafe { avx512::predict(self, columns, outputs, n) };
            }
            if fma && std::arch::is_x86_feature_detected!("avx2") {
                // SAFETY: as above.
                return unsafe { self.predict_avx2(columns, outputs, n) };
            }
        }
        self.predict_range::<false>(columns, outputs, 0, n)
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2,fma")]
    unsafe fn predict_avx2(&self, columns: &[&[f64]], outputs: &mut [&mut [f64]], n: usize) {
        self.predict_range::<true>(columns, outputs, 0, n)
    }

    /// Portable path over points `from..to`; with `FMA` it rounds exactly
    /// like the AVX-512 kernel.
    #[inline(always)]
    fn predict_range<const FMA: bool>(
        &self,
        columns: &[&[f64]],
        outputs: &mut [&mut [f64]],
        from: usize,
        to: usize,
    ) {
        let mut hv = vec![[0.0f64; LANES]; self.hinges.len()];
        let mut xv = vec![[0.0f64; LANES]; columns.len()];
        let mut start = from;
        while start < to {
            let len = LANES.min(to - start);
            for (xr, col) in xv.iter_mut().zip(columns) {
                // Padding lanes repeat the last point so they stay finite.
                for (l, xl) in xr.iter_mut().enumerate() {
                    *xl = col[start + l.min(len - 1)];
                }
            }
            for (&(v, k), h) in self.hinges.iter().zip(hv.iter_mut()) {
                let xr = &xv[v];
                for l in 0..LANES {
                    let d = xr[l] - k;
                    h[l] = if d > 0.0 { d } else { 0.0 };
                }
            }
            for (m, out) in self.models.iter().zip(outputs.iter_mut()) {
                let mut a = affine::<FMA>(&m.base, &xv, &hv);
                for g in &m.groups {
                    let t = affine::<FMA>(&g.body, &xv, &hv);
                    let h = &hv[g.hinge];
                    if g.minus {
                        let xr = &xv[g.var];
                        for l in 0..LANES {
                            a[l] = madd::<FMA>(h[l] - xr[l] + g.knot, t[l], a[l]);
                        }
                    } else {
                        for l in 0..LANES {
                            a[l] = madd::<FMA>(h[l], t[l], a[l]);
                        }
                    }
                }
                out[start..start + len].copy_from_slice(&a[..len]);
            }
            start += len;
        }
    }
}

#[cfg(target_arch = "x86_64")]
mod avx512 {
    use std::arch::x86_64::*;

    use super::{Affine, GroupedPlan};

    const W: usize = 8;
    const V: usize = 8;
    const CHUNK: usize = W * V;

    type Reg = [__m512d; V];

    #[target_feature(enable = "avx512f,fma")]
    pub(super) unsafe fn predict(
        plan: &GroupedPlan,
        columns: &[&[f64]],
        outputs: &mut [&mut [f64]],
        n: usize,
    ) {
        let full = n / CHUNK * CHUNK;
        let zero = _mm512_setzero_pd();
        let mut xv: Vec<Reg> = vec![[zero; V]; columns.len()];
        let mut hv: Vec<Reg> = vec![[zero; V]; plan.hinges.len()];
        let mut start = 0;
        while start < full {
            for (xr, col) in xv.iter_mut().zip(columns) {
                let c = &col[start..start + CHUNK];
                for (j, x) in xr.iter_mut().enumerate() {
                    // SAFETY: `c` holds CHUNK = V * W values.
                    *x = unsafe { _mm512_loadu_pd(c.as_ptr().add(j * W)) };
                }
            }
            for (&(v, k), h) in plan.hinges.iter().zip(hv.iter_mut()) {
                let kk = _mm512_set1_pd(k);
                for j in 0..V {
                    h[j] = _mm512_max_pd(_mm512_sub_pd(xv[v][j], kk), zero);
                }
            }
            for (m, out) in plan.models.iter().zip(outputs.iter_mut()) {
                let mut acc = affine(&m.base, &xv, &hv);
                for g in &m.groups {
                    let t = affine(&g.body, &xv, &hv);
                    let mut w = hv[g.hinge];
                    if g.minus {
                        let kk = _mm512_set1_pd(g.knot);
                        for j in 0..V {
                            w[j] = _mm512_add_pd(_mm512_sub_pd(w[j], xv[g.var][j]), kk);
                        }
                    }
                    for j in 0..V {
                        acc[j] = _mm512_fmadd_pd(w[j], t[j], acc[j]);
                    }
                }
                let o = &mut out[start..start + CHUNK];
                for (j, a) in acc.iter().enumerate() {
                    // SAFETY: `o` holds CHUNK = V * W values.
                    unsafe { _mm512_storeu_pd(o.as_mut_ptr().add(j * W), *a) };
                }
            }
            start += CHUNK;
        }
        if full < n {
            plan.predict_range::<true>(columns, outputs, full, n);
        }
    }

    #[inline(always)]
    fn affine(body: &Affine, xv: &[Reg], hv: &[Reg]) -> Reg {
        // SAFETY (all intrinsics below): only reached from `predict`, which
        // requires avx512f and fma.
        unsafe {
            let mut a = [_mm512_set1_pd(body.gamma); V];
            for &(v, b) in &body.beta {
                let bb = _mm512_set1_pd(b);
                for j in 0..V {
                    a[j] = _mm512_fmadd_pd(bb, xv[v][j], a[j]);
                }
            }
            for &(h, c) in &body.alpha {
                let cc = _mm512_set1_pd(c);
                for j in 0..V {
                    a[j] = _mm512_fmadd_pd(cc, hv[h][j], a[j]);
                }
            }
            a
        }
    }
}

/// `a * b + c`, fused only where the caller runs with hardware FMA.
#[inline(always)]
fn madd<const FMA: bool>(a: f64, b: f64, c: f64) -> f64 {
    if FMA {
        a.mul_add(b, c)
    } else {
        a * b + c
    }
}

#[inline(always)]
fn affine<const FMA: bool>(
    body: &Affine,
    xv: &[[f64; LANES]],
    hv: &[[f64; LANES]],
) -> [f64; LANES] {
    let mut a = [body.gamma; LANES];
    for &(v, b) in &body.beta {
        let xr = &xv[v];
        for l in 0..LANES {
            a[l] = madd::<FMA>(b, xr[l], a[l]);
        }
    }
    for &(h, c) in &body.alpha {
        let hr = &hv[h];
        for l in 0..LANES {
            a[l] = madd::<FMA>(c, hr[l], a[l]);
        }
    }
    a
}

#[derive(Debug, Clone)]
struct CompiledTerm {
    coefficient: f64,
    hinges: Vec<usize>,
}

#[derive(Debug, Clone)]
struct HingePlan {
    hinges: Vec<HingeFactor>,
    models: Vec<(f64, Vec<CompiledTerm>)>,
}

impl HingePlan {
    fn new(models: &[&MarsModel]) -> Self {
        let mut hinges: Vec<HingeFactor> = Vec::new();
        let mut index_of = |h: &HingeFactor| {
            let found = hinges.iter().position(|g| {
                g.var == h.var && g.direction == h.direction && g.knot.to_bits() == h.knot.to_bits()
            });
            found.unwrap_or_else(|| {
                hinges.push(*h);
                hinges.len() - 1
            })
        };
        let mut compiled = Vec::with_capacity(models.len());
        for m in models {
            let mut intercept = 0.0;
            let mut terms = Vec::new();
            for t in &m.terms {
                if t.factors.is_empty() {
                    intercept += t.coefficient;
                } else {
                    terms.push(CompiledTerm {
                        coefficient: t.coefficient,
                        hinges: t.factors.iter().map(&mut index_of).collect(),
                    });
                }
            }
            compiled.push((intercept, terms));
        }
        Self {
            hinges,
            models: compiled,
        }
    }

    fn predict(&self, columns: &[&[f64]], outputs: &mut [&mut [f64]], n: usize) {
        let mut hv = vec![0.0; self.hinges.len() * BLOCK];
        let mut start = 0;
        while start < n {
            let len = BLOCK.min(n - start);
            for (h, buf) in self.hinges.iter().zip(hv.chunks_exact_mut(BLOCK)) {
                let x = &columns[h.var][start..start + len];
                for (b, &v) in buf.iter_mut().zip(x) {
                    *b = h.eval_scalar(v);
                }
            }
            for ((intercept, terms), out) in self.models.iter().zip(outputs.iter_mut()) {
                let out = &mut out[start..start + len];
                out.iter_mut().for_each(|o| *o = *intercept);
                for t in terms {
                    let a = t.coefficient;
                    for (i, o) in out.iter_mut().enumerate() {
                        let p: f64 = t.hinges.iter().map(|&h| hv[h * BLOCK + i]).product();
                        *o += a * p;
                    }
                }
            }
            start += len;
        }
    }
}
