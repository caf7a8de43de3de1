//! Intervals on the eigenvalues of `C` from hyperparameter uncertainty.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};

use crate::asm_core::estimate_c_for;
use crate::error::{invalid, Error, Result};
use crate::gp::{laplace_cov, Bounds, GpModel, HyperPosterior};
use crate::kernels::KernelSpec;
use crate::linalg;
use crate::rng;
use crate::scalar::Real;

pub const MAX_ATTEMPTS: usize = 100;
pub const DEFAULT_DRAWS: usize = 500;
pub const DEFAULT_LEVELS: [f64; 2] = [0.95, 0.99];

/// Draws hyperparameters from the Gaussian approximation in log space.
/// Draws leaving the box are redrawn, at most [`MAX_ATTEMPTS`] times each.
pub fn sample_hypers<T: Real>(
    post: &HyperPosterior<T>,
    n_draws: usize,
    bounds: &Bounds<T>,
    seed: u64,
) -> Result<Vec<KernelSpec<T>>> {
    let p = post.theta.len();
    if post.cov.nrows() != p || post.cov.ncols() != p {
        return invalid("posterior covariance does not match the parameter vector");
    }
    let (vals, vecs) = linalg::sym_eig_desc(&post.cov);
    let top = vals.iter().fold(T::zero(), |a, v| a.max(v.abs()));
    if vals.iter().any(|&v| v < -T::c(1e-10) * top) {
        return Err(Error::Uq("posterior covariance is not positive semi-definite".into()));
    }
    let mut root = vecs;
    for k in 0..p {
        let s = vals[k].max(T::zero()).sqrt();
        root.column_mut(k).scale_mut(s);
    }
    let (lo, hi) = post.layout.box_bounds(bounds);
    let tol = T::c(1e-12);
    let mut r = rng::seeded(seed);
    let mut out = Vec::with_capacity(n_draws);
    for d in 0..n_draws {
        let mut accepted = None;
        for _ in 0..MAX_ATTEMPTS {
            let z = nalgebra::DVector::<T>::from_iterator(p, (0..p).map(|_| T::c(StandardNormal.sample(&mut r))));
            let step = &root * z;
            let inside = (0..p).all(|k| {
                let t = post.theta[k] + step[k];
                t >= lo[k] - tol && t <= hi[k] + tol
            });
            if inside {
                accepted = Some(step);
                break;
            }
        }
        let step = accepted.ok_or_else(|| {
            Error::Uq(format!(
                "draw {d}: {MAX_ATTEMPTS} proposals in a row left the hyperparameter box; the covariance is too wide for the bounds"
            ))
        })?;
        out.push(perturb(&post.mle, post.layout.fixed_nugget.is_none(), step.as_slice())?);
    }
    Ok(out)
}

// Multiplies the MLE by exp(step) so a zero step returns it unchanged.
fn perturb<T: Real>(mle: &KernelSpec<T>, nugget_free: bool, step: &[T]) -> Result<KernelSpec<T>> {
    let m = mle.dim();
    let ls = mle.lengthscales().iter().zip(step).map(|(l, s)| *l * s.exp()).collect();
    let s2 = mle.variance() * step[m].exp();
    let tau = if nugget_free { mle.nugget() * step[m + 1].exp() } else { mle.nugget() };
    KernelSpec::new(mle.family(), ls, s2, tau)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EigenIntervals<T> {
    pub levels: Vec<f64>,
    /// `bounds[k][l]` is the central interval for the `k`-th largest
    /// eigenvalue at `levels[l]`.
    pub bounds: Vec<Vec<(T, T)>>,
    /// Eigenvalues at the MLE.
    pub point: Vec<T>,
    /// Median over draws, per eigenvalue.
    pub median: Vec<T>,
    pub n_draws: usize,
    pub n_skipped: usize,
}

impl<T: Real> EigenIntervals<T> {
    pub fn width(&self, k: usize, level: usize) -> T {
        let (lo, hi) = self.bounds[k][level];
        hi - lo
    }

    pub fn level_index(&self, level: f64) -> Option<usize> {
        self.levels.iter().position(|l| (l - level).abs() < 1e-12)
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile<T: Real>(sorted: &[T], q: f64) -> T {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = T::c(h - lo as f64);
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Rebuilds `K`, `W` and `C` for every draw on the model's data and takes
/// central quantiles of the sorted eigenvalues. Draws that fail numerically
/// are skipped; more than 10% skipped is an error.
pub fn eigen_intervals<T: Real>(
    model: &GpModel<T>,
    draws: &[KernelSpec<T>],
    levels: &[f64],
) -> Result<EigenIntervals<T>> {
    if draws.is_empty() {
        return invalid("no hyperparameter draws");
    }
    if levels.is_empty() || levels.iter().any(|l| !(*l > 0.0 && *l < 1.0)) {
        return invalid("coverage levels must lie in (0, 1)");
    }
    let m = model.m();
    let point: Vec<T> = estimate_c_for(model)?.eigvals.iter().copied().collect();
    let mut per_index: Vec<Vec<T>> = vec![Vec::with_capacity(draws.len()); m];
    let mut skipped = 0;
    for spec in draws {
        if spec.dim() != m {
            return invalid("draw dimension does not match the model");
        }
        let ok = GpModel::new(spec.clone(), model.data().clone()).and_then(|g| estimate_c_for(&g));
        match ok {
            Ok(c) => {
                for k in 0..m {
                    per_index[k].push(c.eigvals[k]);
                }
            }
            Err(_) => skipped += 1,
        }
    }
    if skipped * 10 > draws.len() {
        return Err(Error::Uq(format!("{skipped} of {} draws failed numerically", draws.len())));
    }
    let mut bounds = Vec::with_capacity(m);
    let mut median = Vec::with_capacity(m);
    for vals in per_index.iter_mut() {
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        median.push(quantile(vals, 0.5));
        bounds
            .push(levels.iter().map(|&l| (quantile(vals, (1.0 - l) / 2.0), quantile(vals, (1.0 + l) / 2.0))).collect());
    }
    Ok(EigenIntervals {
        levels: levels.to_vec(),
        bounds,
        point,
        median,
        n_draws: draws.len() - skipped,
        n_skipped: skipped,
    })
}

/// Laplace posterior, draws and intervals in one call.
pub fn eigen_uq<T: Real>(
    model: &GpModel<T>,
    bounds: &Bounds<T>,
    n_draws: usize,
    levels: &[f64],
    seed: u64,
) -> Result<(HyperPosterior<T>, EigenIntervals<T>)> {
    let post = laplace_cov(model, bounds)?;
    let draws = sample_hypers(&post, n_draws, bounds, seed)?;
    let iv = eigen_intervals(model, &draws, levels)?;
    Ok((post, iv))
}

/// Sample covariance of log-parameters of a set of draws, for diagnostics.
pub fn log_param_cov<T: Real>(post: &HyperPosterior<T>, draws: &[KernelSpec<T>]) -> DMatrix<T> {
    let p = post.theta.len();
    let rows: Vec<Vec<T>> = draws.iter().map(|s| post.layout.from_spec(s)).collect();
    let nd = T::n(rows.len());
    let mean: Vec<T> = (0..p).map(|k| rows.iter().fold(T::zero(), |a, r| a + r[k]) / nd).collect();
    DMatrix::from_fn(p, p, |i, j| {
        rows.iter().fold(T::zero(), |a, r| a + (r[i] - mean[i]) * (r[j] - mean[j])) / (nd - T::one())
    })
}
