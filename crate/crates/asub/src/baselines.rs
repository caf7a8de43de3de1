//! Classical estimators of `C` and of a single dominant direction.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;

use crate::asm_core::{CEstimate, Subspace};
use crate::error::{invalid, Error, Result};
use crate::gp::Dataset;
use crate::rng;
use crate::scalar::Real;

/// Forward difference step used by the experiments.
pub const FD_STEP: f64 = 1e-4;

/// Forward differences sharing the base point: `m + 1` evaluations. A
/// coordinate within `h` of the upper face is differenced backwards.
pub fn fd_gradient<T: Real>(f: &mut dyn FnMut(&[T]) -> T, x: &[T], h: T) -> Result<Vec<T>> {
    if !(h > T::zero()) {
        return invalid("step must be positive");
    }
    let fx = f(x);
    if !fx.finite() {
        return Err(Error::Numerical("f is not finite at the base point".into()));
    }
    let mut xs = x.to_vec();
    let mut g = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let back = x[i] + h > T::one();
        xs[i] = if back { x[i] - h } else { x[i] + h };
        let fi = f(&xs);
        xs[i] = x[i];
        if !fi.finite() {
            return Err(Error::Numerical(format!("f is not finite at the step along coordinate {i}")));
        }
        g.push(if back { (fx - fi) / h } else { (fi - fx) / h });
    }
    Ok(g)
}

/// Source of gradients for the Monte Carlo estimator, with a tally of the
/// raw function evaluations spent.
pub struct GradientOracle<'a, T> {
    kind: OracleKind<'a, T>,
    m: usize,
    evals: usize,
    grads: usize,
}

enum OracleKind<'a, T> {
    Analytic(Box<dyn FnMut(&[T]) -> Vec<T> + 'a>),
    ForwardFd { f: Box<dyn FnMut(&[T]) -> T + 'a>, h: T },
}

impl<'a, T: Real> GradientOracle<'a, T> {
    /// Exact gradients; each one is charged as a single evaluation.
    pub fn analytic(m: usize, g: impl FnMut(&[T]) -> Vec<T> + 'a) -> Self {
        Self { kind: OracleKind::Analytic(Box::new(g)), m, evals: 0, grads: 0 }
    }

    /// Forward differences of `f`, `m + 1` evaluations per gradient.
    pub fn forward_fd(m: usize, f: impl FnMut(&[T]) -> T + 'a, h: T) -> Self {
        Self { kind: OracleKind::ForwardFd { f: Box::new(f), h }, m, evals: 0, grads: 0 }
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn gradient(&mut self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.m {
            return invalid(format!("point dimension {} but oracle dimension {}", x.len(), self.m));
        }
        let g = match &mut self.kind {
            OracleKind::Analytic(g) => {
                self.evals += 1;
                let v = g(x);
                if v.len() != self.m || v.iter().any(|c| !c.finite()) {
                    return Err(Error::Numerical("analytic gradient is not a finite m-vector".into()));
                }
                v
            }
            OracleKind::ForwardFd { f, h } => {
                self.evals += self.m + 1;
                fd_gradient(&mut **f, x, *h)?
            }
        };
        self.grads += 1;
        Ok(g)
    }

    /// Raw function evaluations charged so far.
    pub fn eval_count(&self) -> usize {
        self.evals
    }

    pub fn gradient_count(&self) -> usize {
        self.grads
    }
}

/// `Ĉ = (1/M) Σ ∇f(x_k)∇f(x_k)ᵀ` with `x_k` uniform on the cube.
pub fn mc_estimate_c<T: Real>(oracle: &mut GradientOracle<'_, T>, n_samples: usize, seed: u64) -> Result<CEstimate<T>> {
    if n_samples == 0 {
        return invalid("need at least one sample");
    }
    let m = oracle.dim();
    let mut r = rng::seeded(seed);
    let mut c = DMatrix::<T>::zeros(m, m);
    let mut x = vec![T::zero(); m];
    for _ in 0..n_samples {
        for v in x.iter_mut() {
            *v = T::c(r.random::<f64>());
        }
        let g = DVector::from_vec(oracle.gradient(&x)?);
        c.ger(T::one(), &g, &g, T::one());
    }
    c /= T::n(n_samples);
    CEstimate::from_matrix(c, n_samples, None)
}

/// Least-squares slope of `y` on `[1, X]`, or `None` for a rank-deficient
/// design.
fn ols_slope<T: Real>(x: &DMatrix<T>, y: &DVector<T>) -> Option<DVector<T>> {
    let (n, m) = (x.nrows(), x.ncols());
    if n < m + 1 {
        return None;
    }
    let mut a = DMatrix::<T>::zeros(n, m + 1);
    a.column_mut(0).fill(T::one());
    a.view_mut((0, 1), (n, m)).copy_from(x);
    let qr = a.qr();
    let r = qr.r();
    let scale = (0..=m).fold(T::zero(), |s, k| s.max(r[(k, k)].abs()));
    if (0..=m).any(|k| !(r[(k, k)].abs() > T::c(1e-10) * scale)) {
        return None;
    }
    let qty = qr.q().transpose() * y;
    let mut coef = qty.rows(0, m + 1).into_owned();
    for k in (0..=m).rev() {
        let mut s = coef[k];
        for j in k + 1..=m {
            s -= r[(k, j)] * coef[j];
        }
        coef[k] = s / r[(k, k)];
    }
    Some(coef.rows(1, m).into_owned())
}

/// Unit direction of the global linear fit.
pub fn ols_direction<T: Real>(data: &Dataset<T>) -> Result<Subspace<T>> {
    let (n, m) = (data.n(), data.m());
    if n < m + 1 {
        return invalid(format!("need at least {} points for {m} inputs, got {n}", m + 1));
    }
    let b = ols_slope(&data.x_matrix(), data.y()).ok_or_else(|| Error::Numerical("design is rank deficient".into()))?;
    let ymax = data.y().iter().fold(T::one(), |s, v| s.max(v.abs()));
    if !(b.norm() > T::c(1e-12) * ymax) {
        return Err(Error::Numerical("regression slope is zero; it has no direction".into()));
    }
    Subspace::from_basis(&DMatrix::from_column_slice(m, 1, (b.clone() / b.norm()).as_slice()))
}

#[derive(Clone, Debug)]
pub struct LocalLinear<T> {
    pub c: CEstimate<T>,
    /// Points whose neighbourhood fit was rank deficient.
    pub n_skipped: usize,
}

/// Mean of `b_k b_kᵀ` over the slopes of OLS fits on each point's
/// `k_neighbors` nearest neighbours (the point itself included).
pub fn local_linear_c<T: Real>(data: &Dataset<T>, k_neighbors: usize) -> Result<LocalLinear<T>> {
    let (n, m) = (data.n(), data.m());
    if k_neighbors < m + 1 {
        return invalid(format!("need at least {} neighbours for {m} inputs", m + 1));
    }
    if k_neighbors > n {
        return invalid(format!("{k_neighbors} neighbours requested from {n} points"));
    }
    let mut c = DMatrix::<T>::zeros(m, m);
    let mut used = 0;
    let mut idx: Vec<(T, usize)> = Vec::with_capacity(n);
    for p in 0..n {
        let xp = data.point(p);
        idx.clear();
        for q in 0..n {
            let d = data.point(q).iter().zip(xp).fold(T::zero(), |s, (a, b)| s + (*a - *b) * (*a - *b));
            idx.push((d, q));
        }
        idx.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.cmp(&b.1)));
        let nb: Vec<usize> = idx.iter().take(k_neighbors).map(|v| v.1).collect();
        let x = DMatrix::from_fn(k_neighbors, m, |r, c| data.point(nb[r])[c]);
        let y = DVector::from_iterator(k_neighbors, nb.iter().map(|&q| data.y()[q]));
        if let Some(b) = ols_slope(&x, &y) {
            c.ger(T::one(), &b, &b, T::one());
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::Numerical("every neighbourhood fit was rank deficient".into()));
    }
    c /= T::n(used);
    Ok(LocalLinear { c: CEstimate::from_matrix(c, n, None)?, n_skipped: n - used })
}
