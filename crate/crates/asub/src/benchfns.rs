//! Test problems with known structure, design generators and a GP path
//! sampler.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::kernels::KernelSpec;
use crate::linalg;
use crate::rng::{self, Rng};
use crate::scalar::Real;

/// Something that can be evaluated on `[0,1]^m`, possibly with noise.
pub trait BlackBox<T> {
    fn dim(&self) -> usize;
    fn eval(&mut self, x: &[T]) -> T;
}

/// Wraps a closure as a [`BlackBox`].
pub struct FnBox<F> {
    pub m: usize,
    pub f: F,
}

impl<T, F: FnMut(&[T]) -> T> BlackBox<T> for FnBox<F> {
    fn dim(&self) -> usize {
        self.m
    }
    fn eval(&mut self, x: &[T]) -> T {
        (self.f)(x)
    }
}

/// Latin hypercube sample: column `k` places one point in each stratum
/// `[i/n, (i+1)/n)`, jittered uniformly and permuted at random.
pub fn lhs<T: Real>(n: usize, m: usize, seed: u64) -> DMatrix<T> {
    let mut r = rng::seeded(seed);
    lhs_with(n, m, &mut r)
}

pub fn lhs_with<T: Real>(n: usize, m: usize, r: &mut Rng) -> DMatrix<T> {
    let mut x = DMatrix::<T>::zeros(n, m);
    let mut perm: Vec<usize> = (0..n).collect();
    for k in 0..m {
        perm.shuffle(r);
        for i in 0..n {
            // Keep the point strictly inside its stratum.
            let u: f64 = r.random::<f64>().clamp(1e-12, 1.0 - 1e-12);
            x[(i, k)] = T::c((perm[i] as f64 + u) / n as f64);
        }
    }
    x
}

/// Uniform points on the unit cube.
pub fn uniform_design<T: Real>(n: usize, m: usize, r: &mut Rng) -> DMatrix<T> {
    DMatrix::from_fn(n, m, |_, _| T::c(r.random::<f64>()))
}

/// `a sin(b x₁) + c x₂²` with `a = 0.1, b = 20, c = −4`.
pub fn testfun_2d<T: Real>(x: &[T]) -> T {
    T::c(0.1) * (T::c(20.0) * x[0]).sin() - T::c(4.0) * x[1] * x[1]
}

pub fn testfun_2d_grad<T: Real>(x: &[T]) -> Vec<T> {
    vec![T::c(2.0) * (T::c(20.0) * x[0]).cos(), -T::c(8.0) * x[1]]
}

/// `(a₁ᵀx)²`.
pub fn rank1_quadratic<T: Real>(a1: &[T], x: &[T]) -> T {
    let s = dot(a1, x);
    s * s
}

pub fn rank1_quadratic_grad<T: Real>(a1: &[T], x: &[T]) -> Vec<T> {
    let s = T::c(2.0) * dot(a1, x);
    a1.iter().map(|&a| s * a).collect()
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (&u, &v)| s + u * v)
}

/// Physical ranges of the wing-weight inputs, in input order:
/// wing area Sw (ft²), fuel weight Wfw (lb), aspect ratio A, quarter-chord
/// sweep Λ (degrees), dynamic pressure q (lb/ft²), taper ratio λ,
/// thickness-to-chord t/c, ultimate load factor Nz, design gross weight Wdg
/// (lb), paint weight Wp (lb/ft²).
pub const WING_RANGES: [(f64, f64); 10] = [
    (150.0, 200.0),
    (220.0, 300.0),
    (6.0, 10.0),
    (-10.0, 10.0),
    (16.0, 45.0),
    (0.5, 1.0),
    (0.08, 0.18),
    (2.5, 6.0),
    (1700.0, 2500.0),
    (0.025, 0.08),
];

/// Light-aircraft wing weight (lb) with inputs rescaled from `[0,1]^10`.
pub fn wing_weight<T: Real>(x: &[T]) -> T {
    let p: Vec<T> = (0..10)
        .map(|i| {
            let (lo, hi) = WING_RANGES[i];
            T::c(lo) + x[i] * T::c(hi - lo)
        })
        .collect();
    let (sw, wfw, a, sweep, q, taper, tc, nz, wdg, wp) = (p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7], p[8], p[9]);
    let cs = (sweep * T::c(std::f64::consts::PI / 180.0)).cos();
    T::c(0.036)
        * sw.powf(T::c(0.758))
        * wfw.powf(T::c(0.0035))
        * (a / (cs * cs)).powf(T::c(0.6))
        * q.powf(T::c(0.006))
        * taper.powf(T::c(0.04))
        * (T::c(100.0) * tc / cs).powf(T::c(-0.3))
        * (nz * wdg).powf(T::c(0.49))
        + sw * wp
}

/// Raw directions of the planted subspace in the seven-input stand-in,
/// drawn once from a standard normal with a fixed seed and frozen here.
const COVID_RAW: [[f64; 3]; 7] = [
    [0.6479, 0.4693, -0.643],
    [-1.1783, -0.1447, 1.2035],
    [1.3336, 0.9083, 0.3466],
    [1.6, 1.2328, -0.2203],
    [-1.062, -0.3646, -0.42],
    [0.6875, -1.8991, -0.1914],
    [1.6712, -0.9203, -0.7585],
];

/// Orthonormal 7×3 basis of the stand-in's planted subspace.
pub fn covid_basis<T: Real>() -> DMatrix<T> {
    let mut q = DMatrix::<T>::from_fn(7, 3, |i, j| T::c(COVID_RAW[i][j]));
    for j in 0..3 {
        for k in 0..j {
            let proj = q.column(k).dot(&q.column(j));
            let ck = q.column(k).into_owned();
            q.column_mut(j).axpy(-proj, &ck, T::one());
        }
        let nrm = q.column(j).norm();
        q.column_mut(j).scale_mut(T::one() / nrm);
    }
    q
}

fn covid_inner<T: Real>(z: &[T; 3]) -> (T, [T; 3]) {
    let v = T::c(3.0) * z[0] + T::c(2.0) * z[1] * z[1] + (T::c(4.0) * z[2]).sin();
    (v, [T::c(3.0), T::c(4.0) * z[1], T::c(4.0) * (T::c(4.0) * z[2]).cos()])
}

fn covid_project<T: Real>(q: &DMatrix<T>, x: &[T]) -> [T; 3] {
    let mut z = [T::zero(); 3];
    for (j, zj) in z.iter_mut().enumerate() {
        for i in 0..7 {
            *zj += q[(i, j)] * (x[i] - T::c(0.5));
        }
    }
    z
}

/// Smooth seven-input function that varies only along a fixed 3-D subspace.
pub fn covid_standin<T: Real>(x: &[T]) -> T {
    let q = covid_basis::<T>();
    covid_inner(&covid_project(&q, x)).0
}

pub fn covid_standin_grad<T: Real>(x: &[T]) -> Vec<T> {
    let q = covid_basis::<T>();
    let (_, gz) = covid_inner(&covid_project(&q, x));
    (0..7).map(|i| (0..3).fold(T::zero(), |s, j| s + q[(i, j)] * gz[j])).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub enum BenchKind<T> {
    TestFun2d,
    Rank1Quadratic { a1: Vec<T> },
    WingWeight,
    CovidStandin,
}

/// A named test problem with optional additive Gaussian output noise.
#[derive(Clone, Debug)]
pub struct Benchmark<T> {
    pub name: String,
    pub kind: BenchKind<T>,
    pub noise_sd: Option<T>,
    noise_rng: Rng,
}

impl<T: Real> Benchmark<T> {
    pub const NAMES: [&'static str; 4] = ["testfun_2d", "rank1_quadratic", "wing_weight", "covid_standin"];

    pub fn new(kind: BenchKind<T>) -> Self {
        let name = match &kind {
            BenchKind::TestFun2d => "testfun_2d",
            BenchKind::Rank1Quadratic { .. } => "rank1_quadratic",
            BenchKind::WingWeight => "wing_weight",
            BenchKind::CovidStandin => "covid_standin",
        };
        Self { name: name.to_string(), kind, noise_sd: None, noise_rng: rng::seeded(0) }
    }

    /// Looks up a benchmark by name. `m` is required for the rank-1
    /// quadratic, whose direction `a₁` is drawn iid standard normal from
    /// `seed`; other benchmarks have fixed dimension.
    pub fn by_name(name: &str, m: Option<usize>, seed: u64) -> Result<Self> {
        let fixed = |want: usize| -> Result<()> {
            match m {
                Some(d) if d != want => invalid(format!("{name} has dimension {want}, not {d}")),
                _ => Ok(()),
            }
        };
        let kind = match name {
            "testfun_2d" => {
                fixed(2)?;
                BenchKind::TestFun2d
            }
            "wing_weight" => {
                fixed(10)?;
                BenchKind::WingWeight
            }
            "covid_standin" => {
                fixed(7)?;
                BenchKind::CovidStandin
            }
            "rank1_quadratic" => {
                let Some(d) = m else {
                    return invalid("rank1_quadratic needs a dimension");
                };
                if d == 0 {
                    return invalid("dimension must be at least 1");
                }
                let mut r = rng::seeded(seed);
                let a1 = (0..d).map(|_| T::c(r.sample::<f64, _>(StandardNormal))).collect();
                BenchKind::Rank1Quadratic { a1 }
            }
            other => {
                return invalid(format!("unknown benchmark '{other}' (known: {})", Self::NAMES.join(", ")));
            }
        };
        Ok(Self::new(kind))
    }

    /// Adds iid `N(0, sd²)` noise to every `eval`, drawn from `seed`.
    pub fn with_noise(mut self, sd: T, seed: u64) -> Self {
        self.noise_sd = if sd > T::zero() { Some(sd) } else { None };
        self.noise_rng = rng::seeded(seed);
        self
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            BenchKind::TestFun2d => 2,
            BenchKind::Rank1Quadratic { a1 } => a1.len(),
            BenchKind::WingWeight => 10,
            BenchKind::CovidStandin => 7,
        }
    }

    /// Noise-free value.
    pub fn value(&self, x: &[T]) -> T {
        match &self.kind {
            BenchKind::TestFun2d => testfun_2d(x),
            BenchKind::Rank1Quadratic { a1 } => rank1_quadratic(a1, x),
            BenchKind::WingWeight => wing_weight(x),
            BenchKind::CovidStandin => covid_standin(x),
        }
    }

    /// Analytic gradient where one is available.
    pub fn gradient(&self, x: &[T]) -> Option<Vec<T>> {
        match &self.kind {
            BenchKind::TestFun2d => Some(testfun_2d_grad(x)),
            BenchKind::Rank1Quadratic { a1 } => Some(rank1_quadratic_grad(a1, x)),
            BenchKind::WingWeight => None,
            BenchKind::CovidStandin => Some(covid_standin_grad(x)),
        }
    }

    /// Orthonormal basis of the known active subspace, where one exists.
    pub fn true_subspace(&self) -> Option<DMatrix<T>> {
        match &self.kind {
            BenchKind::Rank1Quadratic { a1 } => {
                let v = DVector::from_column_slice(a1);
                let n = v.norm();
                Some(DMatrix::from_column_slice(a1.len(), 1, (v / n).as_slice()))
            }
            BenchKind::CovidStandin => Some(covid_basis()),
            _ => None,
        }
    }
}

impl<T: Real> BlackBox<T> for Benchmark<T> {
    fn dim(&self) -> usize {
        Benchmark::dim(self)
    }

    fn eval(&mut self, x: &[T]) -> T {
        let v = self.value(x);
        match self.noise_sd {
            Some(sd) => v + sd * T::c(self.noise_rng.sample::<f64, _>(StandardNormal)),
            None => v,
        }
    }
}

/// Covariance source for [`gp_sample`].
#[derive(Clone, Debug)]
pub enum SampleKernel<T> {
    Separable(KernelSpec<T>),
    /// `σ² exp(−½ (x−x')ᵀAᵀA(x−x'))` with `A` of shape r×m.
    Mahalanobis {
        a: DMatrix<T>,
        variance: T,
    },
}

impl<T: Real> SampleKernel<T> {
    fn value(&self, x: &[T], x2: &[T]) -> T {
        match self {
            Self::Separable(s) => s.eval_unchecked(x, x2),
            Self::Mahalanobis { a, variance } => {
                let d = DVector::from_iterator(x.len(), x.iter().zip(x2).map(|(u, v)| *u - *v));
                let ad = a * d;
                *variance * (-ad.norm_squared() / T::c(2.0)).exp()
            }
        }
    }
}

/// Cross-covariances of a Mahalanobis-kernel GP and its gradient between
/// `x1` and `x2`: returns `(k, ∂k/∂x2, ∂²k/∂x1∂x2ᵀ)`.
pub fn mahalanobis_blocks<T: Real>(a: &DMatrix<T>, variance: T, x1: &[T], x2: &[T]) -> (T, DVector<T>, DMatrix<T>) {
    let m = x1.len();
    let mm = a.transpose() * a;
    let d = DVector::from_iterator(m, x1.iter().zip(x2).map(|(u, v)| *u - *v));
    let md = &mm * &d;
    let k = variance * (-d.dot(&md) / T::c(2.0)).exp();
    let dk = &md * k;
    let hess = (&mm - &md * md.transpose()) * k;
    (k, dk, hess)
}

fn mvn_factor<T: Real>(cov: &DMatrix<T>) -> Result<Option<DMatrix<T>>> {
    let scale = (0..cov.nrows()).fold(T::zero(), |s, i| s.max(cov[(i, i)]));
    if scale == T::zero() {
        return Ok(None);
    }
    let (l, _) = linalg::cholesky_jittered(cov, T::zero(), T::c(1e-12) * scale, T::c(1e-4) * scale)?;
    Ok(Some(l))
}

fn mvn_draws<T: Real>(l: Option<&DMatrix<T>>, dim: usize, n_draws: usize, seed: u64) -> Vec<DVector<T>> {
    let mut r = rng::seeded(seed);
    (0..n_draws)
        .map(|_| match l {
            Some(l) => {
                let z = DVector::from_fn(dim, |_, _| T::c(r.sample::<f64, _>(StandardNormal)));
                l * z
            }
            None => DVector::zeros(dim),
        })
        .collect()
}

/// Draws of the GP at the rows of `x`, exact up to factorization jitter.
pub fn gp_sample_many<T: Real>(
    kernel: &SampleKernel<T>,
    x: &DMatrix<T>,
    n_draws: usize,
    seed: u64,
) -> Result<Vec<DVector<T>>> {
    let n = x.nrows();
    let pts: Vec<Vec<T>> = (0..n).map(|i| x.row(i).iter().copied().collect()).collect();
    let cov = DMatrix::from_fn(n, n, |i, j| kernel.value(&pts[i], &pts[j]));
    if cov.iter().any(|v| !v.finite()) {
        return Err(Error::Numerical("non-finite covariance".into()));
    }
    let l = mvn_factor(&cov)?;
    Ok(mvn_draws(l.as_ref(), n, n_draws, seed))
}

/// One draw of the GP at the rows of `x`.
pub fn gp_sample<T: Real>(kernel: &SampleKernel<T>, x: &DMatrix<T>, seed: u64) -> Result<DVector<T>> {
    Ok(gp_sample_many(kernel, x, 1, seed)?.remove(0))
}

/// Joint draws of values and gradients of a Mahalanobis-kernel GP at the
/// rows of `x`. Each draw is `(values (n), gradients (n×m))`.
pub fn gp_sample_with_gradient<T: Real>(
    a: &DMatrix<T>,
    variance: T,
    x: &DMatrix<T>,
    n_draws: usize,
    seed: u64,
) -> Result<Vec<(DVector<T>, DMatrix<T>)>> {
    let (n, m) = (x.nrows(), x.ncols());
    if a.ncols() != m {
        return invalid(format!("A has {} columns but points have dimension {m}", a.ncols()));
    }
    let pts: Vec<Vec<T>> = (0..n).map(|i| x.row(i).iter().copied().collect()).collect();
    let dim = n * (m + 1);
    // Layout: value p at p, gradient (p, i) at n + p·m + i.
    let mut cov = DMatrix::<T>::zeros(dim, dim);
    for p in 0..n {
        for q in 0..n {
            let (k, dk, hess) = mahalanobis_blocks(a, variance, &pts[p], &pts[q]);
            cov[(p, q)] = k;
            for j in 0..m {
                // Cov(f(x_p), ∂_j f(x_q)) = ∂k/∂x_q,j
                cov[(p, n + q * m + j)] = dk[j];
                cov[(n + q * m + j, p)] = dk[j];
                for i in 0..m {
                    cov[(n + p * m + i, n + q * m + j)] = hess[(i, j)];
                }
            }
        }
    }
    let l = mvn_factor(&cov)?;
    Ok(mvn_draws(l.as_ref(), dim, n_draws, seed)
        .into_iter()
        .map(|v| {
            let vals = v.rows(0, n).into_owned();
            let grads = DMatrix::from_fn(n, m, |p, i| v[n + p * m + i]);
            (vals, grads)
        })
        .collect())
}
