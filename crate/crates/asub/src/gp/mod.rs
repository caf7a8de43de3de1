//! Zero-mean Gaussian-process regression on the unit cube.

mod fit;
mod laplace;

pub use fit::{fit, fit_with, log_likelihood_grad, Bounds, FitOptions, FitReport, NuggetMode, ParamLayout};
pub use laplace::{cov_from_neg_hessian, fd_hessian, laplace_cov, HyperPosterior, HESSIAN_STEP};

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::kernels::{kernel_cross_d2, KernelSpec};
use crate::linalg;
use crate::scalar::Real;

/// Design points in `[0,1]^m` with responses.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    m: usize,
    /// Row-major `n × m`.
    x: Vec<T>,
    y: DVector<T>,
}

impl<T: Real> Dataset<T> {
    pub fn new(x: &DMatrix<T>, y: &DVector<T>) -> Result<Self> {
        let (n, m) = (x.nrows(), x.ncols());
        if n == 0 {
            return invalid("dataset needs at least one point");
        }
        if m == 0 {
            return invalid("dataset needs at least one input column");
        }
        if y.len() != n {
            return invalid(format!("{n} design rows but {} responses", y.len()));
        }
        let mut flat = Vec::with_capacity(n * m);
        for i in 0..n {
            for j in 0..m {
                let v = x[(i, j)];
                if !v.finite() || v < T::zero() || v > T::one() {
                    return invalid(format!(
                        "design entry ({i}, {j}) = {} lies outside [0, 1]; rescale inputs to the unit cube",
                        v.to_f64_lossy()
                    ));
                }
                flat.push(v);
            }
        }
        if let Some(i) = y.iter().position(|v| !v.finite()) {
            return invalid(format!("response {i} is not finite"));
        }
        Ok(Self { m, x: flat, y: y.clone() })
    }

    pub fn from_rows(rows: &[Vec<T>], y: &[T]) -> Result<Self> {
        let m = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != m) {
            return invalid("rows have differing lengths");
        }
        let x = DMatrix::from_fn(rows.len(), m, |i, j| rows[i][j]);
        Self::new(&x, &DVector::from_column_slice(y))
    }

    /// No observations, for prior-only models.
    pub fn empty(m: usize) -> Self {
        Self { m, x: Vec::new(), y: DVector::zeros(0) }
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[T] {
        &self.x[i * self.m..(i + 1) * self.m]
    }

    pub fn y(&self) -> &DVector<T> {
        &self.y
    }

    pub fn x_matrix(&self) -> DMatrix<T> {
        DMatrix::from_row_slice(self.n(), self.m, &self.x)
    }

    /// A new dataset with one more observation.
    pub fn with_point(&self, x: &[T], y: T) -> Result<Self> {
        if x.len() != self.m {
            return invalid(format!("point has dimension {}, dataset {}", x.len(), self.m));
        }
        if x.iter().any(|v| !v.finite() || *v < T::zero() || *v > T::one()) {
            return invalid("point lies outside [0, 1]");
        }
        if !y.finite() {
            return invalid("response is not finite");
        }
        let mut xs = self.x.clone();
        xs.extend_from_slice(x);
        let mut ys: Vec<T> = self.y.iter().copied().collect();
        ys.push(y);
        Ok(Self { m: self.m, x: xs, y: DVector::from_vec(ys) })
    }

    /// Rows reordered so that new row `i` is old row `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut x = Vec::with_capacity(self.x.len());
        for &p in perm {
            x.extend_from_slice(self.point(p));
        }
        Self { m: self.m, x, y: DVector::from_iterator(perm.len(), perm.iter().map(|&p| self.y[p])) }
    }

    /// Sample variance of the responses (zero for fewer than two).
    pub fn y_variance(&self) -> T {
        let n = self.n();
        if n < 2 {
            return T::zero();
        }
        let mean = self.y.sum() / T::n(n);
        self.y.iter().fold(T::zero(), |s, &v| s + (v - mean) * (v - mean)) / T::n(n - 1)
    }
}

/// `K_n` with `τ²` on the diagonal.
pub fn build_gram<T: Real>(spec: &KernelSpec<T>, data: &Dataset<T>) -> Result<DMatrix<T>> {
    check_dim(spec, data)?;
    let mut k = gram_without_nugget(spec, data);
    for i in 0..k.nrows() {
        k[(i, i)] += spec.nugget();
    }
    if k.iter().any(|v| !v.finite()) {
        return Err(Error::Numerical("Gram matrix has non-finite entries".into()));
    }
    Ok(k)
}

fn check_dim<T: Real>(spec: &KernelSpec<T>, data: &Dataset<T>) -> Result<()> {
    if spec.dim() != data.m() {
        return invalid(format!("kernel dimension {} but data dimension {}", spec.dim(), data.m()));
    }
    Ok(())
}

pub(crate) fn gram_without_nugget<T: Real>(spec: &KernelSpec<T>, data: &Dataset<T>) -> DMatrix<T> {
    let n = data.n();
    let mut k = DMatrix::<T>::zeros(n, n);
    for j in 0..n {
        k[(j, j)] = spec.variance();
        for i in j + 1..n {
            let v = spec.eval_unchecked(data.point(i), data.point(j));
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// `-½ yᵀK⁻¹y − ½ log|K| − (n/2) log 2π`.
pub fn log_likelihood<T: Real>(spec: &KernelSpec<T>, data: &Dataset<T>) -> Result<T> {
    let k = build_gram(spec, data)?;
    let l = linalg::cholesky(&k).ok_or_else(|| Error::Numerical("Gram matrix is not positive definite".into()))?;
    Ok(ll_from_factor(&l, data.y()))
}

pub(crate) fn ll_from_factor<T: Real>(l: &DMatrix<T>, y: &DVector<T>) -> T {
    let mut z = y.clone();
    linalg::forward_solve(l, &mut z);
    let n = y.len();
    -z.norm_squared() / T::c(2.0)
        - linalg::chol_logdet(l) / T::c(2.0)
        - T::n(n) * T::c((2.0 * std::f64::consts::PI).ln()) / T::c(2.0)
}

/// A fitted surrogate. Immutable: adding data or changing hyperparameters
/// produces a new model.
#[derive(Clone, Debug)]
pub struct GpModel<T> {
    spec: KernelSpec<T>,
    data: Dataset<T>,
    chol: DMatrix<T>,
    alpha: DVector<T>,
    kinv: DMatrix<T>,
    jittered: bool,
}

impl<T: Real> GpModel<T> {
    /// Factorizes `K_n`. If the factorization fails the nugget is raised
    /// ×10 at a time up to `1e-4·σ²`; the nugget actually used is stored in
    /// the model's spec.
    pub fn new(spec: KernelSpec<T>, data: Dataset<T>) -> Result<Self> {
        check_dim(&spec, &data)?;
        if data.n() == 0 {
            return Ok(Self::prior_with(spec, data));
        }
        let base = gram_without_nugget(&spec, &data);
        if base.iter().any(|v| !v.finite()) {
            return Err(Error::Numerical("Gram matrix has non-finite entries".into()));
        }
        let s2 = spec.variance();
        let (chol, tau) = linalg::cholesky_jittered(&base, spec.nugget(), T::c(1e-12) * s2, T::c(1e-4) * s2)?;
        let jittered = tau != spec.nugget();
        let spec = if jittered { spec.with_nugget(tau)? } else { spec };
        let alpha = linalg::chol_solve(&chol, data.y());
        let kinv = linalg::chol_inverse(&chol);
        Ok(Self { spec, data, chol, alpha, kinv, jittered })
    }

    /// The prior process with no observations.
    pub fn prior(spec: KernelSpec<T>) -> Self {
        let m = spec.dim();
        Self::prior_with(spec, Dataset::empty(m))
    }

    fn prior_with(spec: KernelSpec<T>, data: Dataset<T>) -> Self {
        Self {
            spec,
            data,
            chol: DMatrix::zeros(0, 0),
            alpha: DVector::zeros(0),
            kinv: DMatrix::zeros(0, 0),
            jittered: false,
        }
    }

    pub fn spec(&self) -> &KernelSpec<T> {
        &self.spec
    }

    pub fn data(&self) -> &Dataset<T> {
        &self.data
    }

    pub fn n(&self) -> usize {
        self.data.n()
    }

    pub fn m(&self) -> usize {
        self.data.m()
    }

    /// Lower Cholesky factor of `K_n`.
    pub fn chol(&self) -> &DMatrix<T> {
        &self.chol
    }

    /// `K_n⁻¹ y_n`.
    pub fn alpha(&self) -> &DVector<T> {
        &self.alpha
    }

    /// `K_n⁻¹`.
    pub fn kinv(&self) -> &DMatrix<T> {
        &self.kinv
    }

    /// Whether the nugget had to be raised to factorize `K_n`.
    pub fn jittered(&self) -> bool {
        self.jittered
    }

    pub fn log_likelihood(&self) -> T {
        if self.n() == 0 {
            return T::zero();
        }
        ll_from_factor(&self.chol, self.data.y())
    }

    /// `k(x, X_n)`.
    pub fn kvec(&self, x: &[T]) -> DVector<T> {
        DVector::from_iterator(self.n(), (0..self.n()).map(|p| self.spec.eval_unchecked(x, self.data.point(p))))
    }

    /// `κ(x)`: row `i` holds `∂k(x, x_p)/∂x_i` over the data points `p`.
    pub fn kappa(&self, x: &[T]) -> DMatrix<T> {
        let (n, m) = (self.n(), self.m());
        let ks = self.spec.coords();
        let mut out = DMatrix::<T>::zeros(m, n);
        let mut r = vec![T::zero(); m];
        let mut d1 = vec![T::zero(); m];
        for p in 0..n {
            let xp = self.data.point(p);
            for c in 0..m {
                let t = x[c] - xp[c];
                r[c] = ks[c].corr(t);
                d1[c] = ks[c].deriv(1, t);
            }
            for i in 0..m {
                let mut v = self.spec.variance() * d1[i];
                for c in 0..m {
                    if c != i {
                        v *= r[c];
                    }
                }
                out[(i, p)] = v;
            }
        }
        out
    }

    /// Predictive mean and latent variance at `x`.
    pub fn predict(&self, x: &[T]) -> Result<(T, T)> {
        if x.len() != self.m() {
            return invalid(format!("point dimension {} but model dimension {}", x.len(), self.m()));
        }
        let s2 = self.spec.variance();
        if self.n() == 0 {
            return Ok((T::zero(), s2));
        }
        let k = self.kvec(x);
        let mean = k.dot(&self.alpha);
        let mut z = k;
        linalg::forward_solve(&self.chol, &mut z);
        let var = (s2 - z.norm_squared()).max(T::zero());
        Ok((mean, var))
    }

    /// Posterior mean and covariance of `∇f(x)`.
    pub fn grad_posterior(&self, x: &[T]) -> Result<(DVector<T>, DMatrix<T>)> {
        let m = self.m();
        if x.len() != m {
            return invalid(format!("point dimension {} but model dimension {}", x.len(), m));
        }
        let prior = DMatrix::from_fn(m, m, |i, j| kernel_cross_d2(&self.spec, i, j));
        if self.n() == 0 {
            return Ok((DVector::zeros(m), prior));
        }
        let kap = self.kappa(x);
        let mu = &kap * &self.alpha;
        let cov = prior - &kap * &self.kinv * kap.transpose();
        Ok((mu, linalg::clip_psd(&cov)))
    }

    /// The same hyperparameters with one more observation. The factor is
    /// extended by a row and `K⁻¹` by the bordered-inverse formula.
    pub fn with_point(&self, x: &[T], y: T) -> Result<Self> {
        let data = self.data.with_point(x, y)?;
        if self.n() == 0 {
            return Self::new(self.spec.clone(), data);
        }
        let n = self.n();
        let kt = self.kvec(x);
        let c = self.spec.variance() + self.spec.nugget();
        let mut l21 = kt.clone();
        linalg::forward_solve(&self.chol, &mut l21);
        let schur = c - l21.norm_squared();
        if !(schur > T::zero()) {
            return Err(Error::DegenerateCandidate(schur.to_f64_lossy()));
        }
        let mut chol = DMatrix::<T>::zeros(n + 1, n + 1);
        chol.view_mut((0, 0), (n, n)).copy_from(&self.chol);
        for j in 0..n {
            chol[(n, j)] = l21[j];
        }
        chol[(n, n)] = schur.sqrt();
        let kinv = bordered_inverse(&self.kinv, &kt, c);
        let alpha = &kinv * data.y();
        Ok(Self { spec: self.spec.clone(), data, chol, alpha, kinv, jittered: self.jittered })
    }
}

/// Inverse of `[[K, k], [kᵀ, c]]` from `K⁻¹`:
/// `[[K⁻¹ + σ² g gᵀ, g], [gᵀ, 1/σ²]]` with `σ² = c − kᵀK⁻¹k` and `g = −K⁻¹k/σ²`.
pub fn bordered_inverse<T: Real>(kinv: &DMatrix<T>, k: &DVector<T>, c: T) -> DMatrix<T> {
    let n = kinv.nrows();
    let v = kinv * k;
    let s2 = c - k.dot(&v);
    let g = &v * (-T::one() / s2);
    let mut out = DMatrix::<T>::zeros(n + 1, n + 1);
    let mut top = kinv.clone();
    top.ger(s2, &g, &g, T::one());
    out.view_mut((0, 0), (n, n)).copy_from(&top);
    for i in 0..n {
        out[(i, n)] = g[i];
        out[(n, i)] = g[i];
    }
    out[(n, n)] = T::one() / s2;
    out
}

/// Free-function form of [`GpModel::predict`].
pub fn predict<T: Real>(model: &GpModel<T>, x: &[T]) -> Result<(T, T)> {
    model.predict(x)
}

/// Free-function form of [`GpModel::grad_posterior`].
pub fn grad_posterior<T: Real>(model: &GpModel<T>, x: &[T]) -> Result<(DVector<T>, DMatrix<T>)> {
    model.grad_posterior(x)
}
