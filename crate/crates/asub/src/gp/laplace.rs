//! Gaussian approximation to the hyperparameter posterior at the MLE.

use nalgebra::DMatrix;

use super::fit::{log_likelihood_grad, projected_norm, Bounds, NuggetMode, ParamLayout};
use super::GpModel;
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::linalg;
use crate::scalar::Real;

/// Step used for the Hessian, in log-parameter units.
pub const HESSIAN_STEP: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct HyperPosterior<T> {
    pub mle: KernelSpec<T>,
    /// MLE in log coordinates, ordered as `layout`.
    pub theta: Vec<T>,
    pub layout: ParamLayout<T>,
    /// Negative Hessian of the log-likelihood at `theta`.
    pub neg_hessian: DMatrix<T>,
    pub cov: DMatrix<T>,
    /// Some eigenvalue of the negative Hessian was negative and has been
    /// dropped.
    pub clipped_negative: bool,
    /// The negative Hessian was numerically singular; `cov` is a
    /// pseudo-inverse.
    pub pseudo_inverse: bool,
    /// Parameters held at an active bound. Their rows and columns of `cov`
    /// are zero: the posterior is conditioned on them.
    pub pinned: Vec<bool>,
    /// Max-norm of the log-likelihood gradient at `theta`, ignoring
    /// components that push against an active bound.
    pub grad_norm: T,
    pub warnings: Vec<String>,
}

impl<T: Real> HyperPosterior<T> {
    /// Correlation between parameters `i` and `j` under `cov`.
    pub fn correlation(&self, i: usize, j: usize) -> T {
        let d = (self.cov[(i, i)] * self.cov[(j, j)]).sqrt();
        if d > T::zero() {
            self.cov[(i, j)] / d
        } else {
            T::zero()
        }
    }
}

/// Symmetric Hessian of `grad` at `x` by central differences of the
/// gradient with step `h`.
pub fn fd_hessian<T: Real, G>(mut grad: G, x: &[T], h: T) -> Option<DMatrix<T>>
where
    G: FnMut(&[T]) -> Option<Vec<T>>,
{
    let p = x.len();
    let mut hess = DMatrix::<T>::zeros(p, p);
    let mut xs = x.to_vec();
    for j in 0..p {
        xs[j] = x[j] + h;
        let gp = grad(&xs)?;
        xs[j] = x[j] - h;
        let gm = grad(&xs)?;
        xs[j] = x[j];
        for i in 0..p {
            hess[(i, j)] = (gp[i] - gm[i]) / (T::c(2.0) * h);
        }
    }
    linalg::symmetrize(&mut hess);
    Some(hess)
}

/// `(−H)⁻¹` through the eigendecomposition. Eigenvalues below
/// `1e-10·λ_max` are dropped; the flags say whether any were negative or
/// merely tiny.
pub fn cov_from_neg_hessian<T: Real>(neg_h: &DMatrix<T>) -> (DMatrix<T>, bool, bool) {
    let p = neg_h.nrows();
    let (vals, vecs) = linalg::sym_eig_desc(neg_h);
    let top = vals.iter().fold(T::zero(), |m, v| m.max(*v));
    let thr = T::c(1e-10) * top;
    let mut clipped = false;
    let mut pseudo = false;
    let mut cov = DMatrix::<T>::zeros(p, p);
    for k in 0..p {
        let lam = vals[k];
        if lam < T::zero() && -lam > thr {
            clipped = true;
            continue;
        }
        if !(lam > thr) || top <= T::zero() {
            pseudo = true;
            continue;
        }
        let v = vecs.column(k);
        cov.ger(T::one() / lam, &v, &v, T::one());
    }
    linalg::symmetrize(&mut cov);
    (cov, clipped, pseudo)
}

/// Laplace covariance over the log-hyperparameters of a fitted model. A
/// pinned nugget stays at the model's value.
pub fn laplace_cov<T: Real>(model: &GpModel<T>, bounds: &Bounds<T>) -> Result<HyperPosterior<T>> {
    if model.n() == 0 {
        return Err(Error::Fit("no data to form a likelihood".into()));
    }
    let mut layout = ParamLayout::new(model.m(), model.spec().family(), bounds);
    if let NuggetMode::Fixed(_) = bounds.nugget {
        layout.fixed_nugget = Some(model.spec().nugget());
    }
    let theta = layout.from_spec(model.spec());
    let data = model.data();
    let (_, g0) = log_likelihood_grad(data, &layout, &theta, true)
        .ok_or_else(|| Error::Numerical("likelihood not computable at the MLE".into()))?;
    let (lo, hi) = layout.box_bounds(bounds);
    let grad_norm = projected_norm(&theta, &g0, &lo, &hi);
    let mut warnings = Vec::new();
    let eps = T::c(1e-9);
    let mut pinned = vec![false; theta.len()];
    for (k, name) in layout.names().iter().enumerate() {
        let low = theta[k] <= lo[k] + eps && g0[k] <= T::zero();
        let high = theta[k] >= hi[k] - eps && g0[k] >= T::zero();
        if low || high {
            pinned[k] = true;
            warnings.push(format!("{name} sits on an active bound and is held fixed"));
        }
    }
    if grad_norm > T::c(1e-3) {
        warnings.push(format!(
            "log-likelihood gradient norm {:e} at the MLE exceeds 1e-3; the fit may not have converged or sits on a bound",
            grad_norm.to_f64_lossy()
        ));
    }
    let hess =
        fd_hessian(|t: &[T]| log_likelihood_grad(data, &layout, t, true).map(|r| r.1), &theta, T::c(HESSIAN_STEP))
            .ok_or_else(|| Error::Numerical("likelihood not computable near the MLE".into()))?;
    let neg_hessian = -hess;
    let free: Vec<usize> = (0..theta.len()).filter(|&k| !pinned[k]).collect();
    let sub = DMatrix::from_fn(free.len(), free.len(), |a, b| neg_hessian[(free[a], free[b])]);
    let (sub_cov, clipped_negative, pseudo_inverse) = cov_from_neg_hessian(&sub);
    let mut cov = DMatrix::<T>::zeros(theta.len(), theta.len());
    for (a, &i) in free.iter().enumerate() {
        for (b, &j) in free.iter().enumerate() {
            cov[(i, j)] = sub_cov[(a, b)];
        }
    }
    if clipped_negative {
        warnings.push("negative Hessian has negative eigenvalues; they were clipped".into());
    }
    if pseudo_inverse {
        warnings.push("negative Hessian is singular; covariance is a pseudo-inverse".into());
    }
    Ok(HyperPosterior {
        mle: model.spec().clone(),
        theta,
        layout,
        neg_hessian,
        cov,
        pinned,
        clipped_negative,
        pseudo_inverse,
        grad_norm,
        warnings,
    })
}
