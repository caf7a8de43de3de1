//! Maximum-likelihood hyperparameters in log space.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{Dataset, GpModel};
use crate::benchfns::lhs;
use crate::error::{invalid, Error, Result};
use crate::kernels::{KernelFamily, KernelSpec};
use crate::linalg;
use crate::optim::{maximize_box_lazy, BoxOptions};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum NuggetMode<T> {
    /// τ² is a free parameter within `[lo, hi]`.
    Estimate { lo: T, hi: T },
    /// τ² is held at the given value.
    Fixed(T),
}

/// Box bounds on the natural-scale hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds<T> {
    pub lengthscale: (T, T),
    pub variance: (T, T),
    pub nugget: NuggetMode<T>,
}

impl<T: Real> Bounds<T> {
    /// `l ∈ [1e-2, 2]`, `σ² ∈ [1e-6·v, 1e2·v]`, `τ² ∈ [1e-8, v]` with `v` the
    /// sample variance of `y`.
    pub fn for_data(data: &Dataset<T>) -> Self {
        let v = Self::scale(data);
        Self {
            lengthscale: (T::c(1e-2), T::c(2.0)),
            variance: (T::c(1e-6) * v, T::c(1e2) * v),
            nugget: NuggetMode::Estimate { lo: T::c(1e-8), hi: v.max(T::c(1e-8)) },
        }
    }

    /// As [`Bounds::for_data`] but with `τ²` pinned at `1e-8`.
    pub fn noiseless(data: &Dataset<T>) -> Self {
        Self { nugget: NuggetMode::Fixed(T::c(1e-8)), ..Self::for_data(data) }
    }

    fn scale(data: &Dataset<T>) -> T {
        let v = data.y_variance();
        if v > T::zero() && v.finite() {
            v
        } else {
            T::c(1e-12)
        }
    }
}

/// Order and meaning of the log-parameter vector:
/// `[log l_1 … log l_m, log σ², (log τ²)]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamLayout<T> {
    pub m: usize,
    pub family: KernelFamily,
    /// `None` when τ² is estimated, otherwise the pinned value.
    pub fixed_nugget: Option<T>,
}

impl<T: Real> ParamLayout<T> {
    pub fn new(m: usize, family: KernelFamily, bounds: &Bounds<T>) -> Self {
        let fixed_nugget = match bounds.nugget {
            NuggetMode::Estimate { .. } => None,
            NuggetMode::Fixed(v) => Some(v),
        };
        Self { m, family, fixed_nugget }
    }

    pub fn len(&self) -> usize {
        self.m + 1 + usize::from(self.fixed_nugget.is_none())
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn names(&self) -> Vec<String> {
        let mut v: Vec<String> = (1..=self.m).map(|d| format!("log_l{d}")).collect();
        v.push("log_sigma2".into());
        if self.fixed_nugget.is_none() {
            v.push("log_tau2".into());
        }
        v
    }

    /// Lower and upper corners of the log-space box.
    pub fn box_bounds(&self, bounds: &Bounds<T>) -> (Vec<T>, Vec<T>) {
        let mut lo = vec![bounds.lengthscale.0.ln(); self.m];
        let mut hi = vec![bounds.lengthscale.1.ln(); self.m];
        lo.push(bounds.variance.0.ln());
        hi.push(bounds.variance.1.max(bounds.variance.0).ln());
        if let NuggetMode::Estimate { lo: a, hi: b } = bounds.nugget {
            lo.push(a.ln());
            hi.push(b.max(a).ln());
        }
        (lo, hi)
    }

    pub fn to_spec(&self, theta: &[T]) -> Result<KernelSpec<T>> {
        if theta.len() != self.len() {
            return invalid(format!("expected {} parameters, got {}", self.len(), theta.len()));
        }
        let ls = theta[..self.m].iter().map(|v| v.exp()).collect();
        let s2 = theta[self.m].exp();
        let tau = match self.fixed_nugget {
            Some(v) => v,
            None => theta[self.m + 1].exp(),
        };
        KernelSpec::new(self.family, ls, s2, tau)
    }

    pub fn from_spec(&self, spec: &KernelSpec<T>) -> Vec<T> {
        let mut v: Vec<T> = spec.lengthscales().iter().map(|l| l.ln()).collect();
        v.push(spec.variance().ln());
        if self.fixed_nugget.is_none() {
            v.push(spec.nugget().max(T::c(1e-300)).ln());
        }
        v
    }
}

/// Log marginal likelihood at log-parameters `theta` and, if requested, its
/// gradient. `None` when the Gram matrix cannot be factorized.
pub fn log_likelihood_grad<T: Real>(
    data: &Dataset<T>,
    layout: &ParamLayout<T>,
    theta: &[T],
    want_grad: bool,
) -> Option<(T, Vec<T>)> {
    let spec = layout.to_spec(theta).ok()?;
    let n = data.n();
    let m = data.m();
    let mut k = super::gram_without_nugget(&spec, data);
    let tau = spec.nugget();
    for i in 0..n {
        k[(i, i)] += tau;
    }
    let l = linalg::cholesky(&k)?;
    let ll = super::ll_from_factor(&l, data.y());
    if !ll.finite() {
        return None;
    }
    if !want_grad {
        return Some((ll, Vec::new()));
    }
    let alpha = linalg::chol_solve(&l, data.y());
    let kinv = linalg::chol_inverse(&l);
    // G = ααᵀ − K⁻¹; d ll = ½ Σ G ∘ dK.
    let half = T::c(0.5);
    let mut grad = vec![T::zero(); layout.len()];
    let s2 = spec.variance();
    let ks = spec.coords();
    let mut r = vec![T::zero(); m];
    let mut dl = vec![T::zero(); m];
    let mut pre = vec![T::zero(); m + 1];
    let mut suf = vec![T::zero(); m + 1];
    let mut g_s2 = T::zero();
    let mut trace_g = T::zero();
    for q in 0..n {
        let gqq = alpha[q] * alpha[q] - kinv[(q, q)];
        trace_g += gqq;
        g_s2 += gqq * s2;
        let xq = data.point(q);
        for p in q + 1..n {
            let g = T::c(2.0) * (alpha[p] * alpha[q] - kinv[(p, q)]);
            let xp = data.point(p);
            for c in 0..m {
                let t = xp[c] - xq[c];
                r[c] = ks[c].corr(t);
                dl[c] = ks[c].dlog_lengthscale(t);
            }
            pre[0] = T::one();
            for c in 0..m {
                pre[c + 1] = pre[c] * r[c];
            }
            suf[m] = T::one();
            for c in (0..m).rev() {
                suf[c] = suf[c + 1] * r[c];
            }
            g_s2 += g * s2 * pre[m];
            for d in 0..m {
                grad[d] += g * s2 * dl[d] * pre[d] * suf[d + 1];
            }
        }
    }
    for v in grad.iter_mut().take(m) {
        *v *= half;
    }
    grad[m] = half * g_s2;
    if layout.fixed_nugget.is_none() {
        grad[m + 1] = half * tau * trace_g;
    }
    Some((ll, grad))
}

#[derive(Clone, Debug)]
pub struct FitOptions<T> {
    /// Number of Latin-hypercube starting points in log space.
    pub n_restarts: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Extra starting point tried before the LHS starts.
    pub warm_start: Option<KernelSpec<T>>,
}

impl<T> Default for FitOptions<T> {
    fn default() -> Self {
        Self { n_restarts: 10, seed: 0, max_iter: 200, warm_start: None }
    }
}

#[derive(Clone, Debug)]
pub struct FitReport<T> {
    pub model: GpModel<T>,
    pub log_lik: T,
    pub theta: Vec<T>,
    pub layout: ParamLayout<T>,
    /// Max-norm of the projected log-likelihood gradient at the optimum.
    pub grad_norm: T,
    pub converged: bool,
    pub failed_starts: usize,
    pub warnings: Vec<String>,
}

/// Fits hyperparameters by multi-start maximum likelihood.
pub fn fit<T: Real>(
    data: &Dataset<T>,
    family: KernelFamily,
    bounds: &Bounds<T>,
    n_restarts: usize,
    seed: u64,
) -> Result<GpModel<T>> {
    let opts = FitOptions { n_restarts, seed, ..FitOptions::default() };
    Ok(fit_with(data, family, bounds, &opts)?.model)
}

pub fn fit_with<T: Real>(
    data: &Dataset<T>,
    family: KernelFamily,
    bounds: &Bounds<T>,
    opts: &FitOptions<T>,
) -> Result<FitReport<T>> {
    let m = data.m();
    let n = data.n();
    if n == 0 {
        return Err(Error::Fit("no data".into()));
    }
    let mut warnings = Vec::new();
    if n < m + 2 {
        warnings.push(format!("only {n} points for {m} inputs; the fit is weakly identified"));
    }
    let layout = ParamLayout::new(m, family, bounds);
    let (lo, hi) = layout.box_bounds(bounds);
    let p = layout.len();

    let mut starts: Vec<Vec<T>> = Vec::new();
    if let Some(w) = &opts.warm_start {
        if w.dim() == m {
            let mut t = layout.from_spec(w);
            for i in 0..p {
                t[i] = t[i].max(lo[i]).min(hi[i]);
            }
            starts.push(t);
        }
    }
    if opts.n_restarts > 0 {
        let u: DMatrix<T> = lhs(opts.n_restarts, p, opts.seed);
        for s in 0..opts.n_restarts {
            starts.push((0..p).map(|i| lo[i] + u[(s, i)] * (hi[i] - lo[i])).collect());
        }
    }
    if starts.is_empty() {
        return Err(Error::Fit("no starting points (n_restarts = 0 and no warm start)".into()));
    }

    let bopts = BoxOptions { max_iter: opts.max_iter, grad_tol: 1e-9, max_step: 1.0 };
    let mut best: Option<crate::optim::OptResult<T>> = None;
    let mut failed = 0;
    for s in &starts {
        let r = maximize_box_lazy(|t: &[T], g| log_likelihood_grad(data, &layout, t, g), s, &lo, &hi, bopts);
        match r {
            Some(r) => {
                if best.as_ref().is_none_or(|b| r.f > b.f) {
                    best = Some(r);
                }
            }
            None => failed += 1,
        }
    }
    let Some(best) = best else {
        return Err(Error::Fit(format!(
            "all {} starting points failed to factorize the Gram matrix (n = {n}, m = {m})",
            starts.len()
        )));
    };
    let spec = layout.to_spec(&best.x)?;
    let model = GpModel::new(spec, data.clone()).map_err(|e| Error::Fit(format!("final factorization: {e}")))?;
    if model.jittered() {
        warnings.push(format!("nugget raised to {:e} to factorize K", model.spec().nugget().to_f64_lossy()));
    }
    let grad_norm = projected_norm(&best.x, &best.grad, &lo, &hi);
    Ok(FitReport {
        model,
        log_lik: best.f,
        theta: best.x,
        layout,
        grad_norm,
        converged: best.converged,
        failed_starts: failed,
        warnings,
    })
}

pub(crate) fn projected_norm<T: Real>(x: &[T], g: &[T], lo: &[T], hi: &[T]) -> T {
    let mut m = T::zero();
    for i in 0..x.len() {
        let free = !((x[i] <= lo[i] && g[i] < T::zero()) || (x[i] >= hi[i] && g[i] > T::zero()));
        if free {
            m = m.max(g[i].abs());
        }
    }
    m
}
