//! Separable stationary kernels on the unit cube and the 1-D integrals of
//! their products.
//!
//! A kernel is `k(x, x') = σ² Π_d r_d(x_d − x'_d)` where `r_d` is a unit
//! variance correlation in one coordinate. All integrals are over `[0, 1]`
//! per coordinate and multiply out over coordinates.

mod integrals;
mod quadrature;

pub use quadrature::gauss_legendre;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Gaussian,
    Matern32,
    Matern52,
}

impl KernelFamily {
    pub const ALL: [KernelFamily; 3] = [Self::Gaussian, Self::Matern32, Self::Matern52];

    /// Short command-line name.
    pub fn short_name(self) -> &'static str {
        match self {
            Self::Gaussian => "g",
            Self::Matern32 => "m32",
            Self::Matern52 => "m52",
        }
    }

    /// Accepts short and long spellings (`g`, `gaussian`, `m32`, `matern32`, ...).
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "g" | "gauss" | "gaussian" => Some(Self::Gaussian),
            "m32" | "matern32" | "matern_32" => Some(Self::Matern32),
            "m52" | "matern52" | "matern_52" => Some(Self::Matern52),
            _ => None,
        }
    }
}

/// Which 1-D integral of a kernel product.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IntegralKind {
    /// `∫ k(x,a) k(b,x) dx`
    Idd,
    /// `∫ ∂k(x,a)/∂x · ∂k(b,x)/∂x dx`
    Wii,
    /// `∫ ∂k(x,a)/∂x · k(b,x) dx`
    Wij,
}

impl IntegralKind {
    /// Derivative orders on the `a` and `b` factors.
    pub(crate) fn orders(self) -> (usize, usize) {
        match self {
            Self::Idd => (0, 0),
            Self::Wii => (1, 1),
            Self::Wij => (1, 0),
        }
    }
}

/// One evaluated 1-D integral.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Integral1D<T> {
    pub kind: IntegralKind,
    pub result: T,
}

/// Unit-variance correlation of one coordinate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Kernel1D<T> {
    pub family: KernelFamily,
    pub lengthscale: T,
}

impl<T: Real> Kernel1D<T> {
    pub fn new(family: KernelFamily, lengthscale: T) -> Self {
        Self { family, lengthscale }
    }

    /// `√3/l` or `√5/l` for the Matérn families, `1/l` for the Gaussian.
    #[inline]
    pub(crate) fn theta(&self) -> T {
        match self.family {
            KernelFamily::Gaussian => T::one() / self.lengthscale,
            KernelFamily::Matern32 => T::c(3f64.sqrt()) / self.lengthscale,
            KernelFamily::Matern52 => T::c(5f64.sqrt()) / self.lengthscale,
        }
    }

    /// Coefficients `[c0, c1, c2]` of the polynomial `p_k` such that
    /// `r^(k)(t) = sign(t)^k p_k(|t|) exp(-θ|t|)` (Matérn families only).
    #[inline]
    pub(crate) fn matern_poly(&self, k: usize) -> [T; 3] {
        let th = self.theta();
        let th2 = th * th;
        let z = T::zero();
        match (self.family, k) {
            (KernelFamily::Matern32, 0) => [T::one(), th, z],
            (KernelFamily::Matern32, 1) => [z, -th2, z],
            (KernelFamily::Matern32, _) => [-th2, th2 * th, z],
            (KernelFamily::Matern52, 0) => [T::one(), th, th2 / T::c(3.0)],
            (KernelFamily::Matern52, 1) => [z, -th2 / T::c(3.0), -th2 * th / T::c(3.0)],
            (KernelFamily::Matern52, _) => [-th2 / T::c(3.0), -th2 * th / T::c(3.0), th2 * th2 / T::c(3.0)],
            (KernelFamily::Gaussian, _) => unreachable!("no polynomial form"),
        }
    }

    /// `r^(k)(t)` for `k ∈ {0, 1, 2}`.
    #[inline]
    pub fn deriv(&self, k: usize, t: T) -> T {
        let l = self.lengthscale;
        match self.family {
            KernelFamily::Gaussian => {
                let l2 = l * l;
                let e = (-(t * t) / (T::c(2.0) * l2)).exp();
                match k {
                    0 => e,
                    1 => -t / l2 * e,
                    _ => (t * t / (l2 * l2) - T::one() / l2) * e,
                }
            }
            _ => {
                let a = t.abs();
                let p = self.matern_poly(k);
                let v = (p[0] + a * (p[1] + a * p[2])) * (-self.theta() * a).exp();
                if k == 1 && t < T::zero() {
                    -v
                } else {
                    v
                }
            }
        }
    }

    #[inline]
    pub fn corr(&self, t: T) -> T {
        self.deriv(0, t)
    }

    /// `l ∂r/∂l`, which for a scale family equals `-t r'(t)`.
    #[inline]
    pub(crate) fn dlog_lengthscale(&self, t: T) -> T {
        -t * self.deriv(1, t)
    }

    /// `-r''(0)`: variance of the derivative of a unit-variance process.
    pub fn neg_curvature(&self) -> T {
        let l2 = self.lengthscale * self.lengthscale;
        match self.family {
            KernelFamily::Gaussian => T::one() / l2,
            KernelFamily::Matern32 => T::c(3.0) / l2,
            KernelFamily::Matern52 => T::c(5.0 / 3.0) / l2,
        }
    }

    pub fn integral(&self, kind: IntegralKind, a: T, b: T) -> Integral1D<T> {
        let (ka, kb) = kind.orders();
        let mut out = [T::zero()];
        self.product_integrals(a, b, &[(ka, kb)], &mut out);
        Integral1D { kind, result: out[0] }
    }

    /// Gradient of an integral with respect to `(a, b)`.
    pub fn integral_grad(&self, kind: IntegralKind, a: T, b: T) -> (T, T) {
        let (ka, kb) = kind.orders();
        let mut out = [T::zero(); 2];
        self.product_integrals(a, b, &[(ka + 1, kb), (ka, kb + 1)], &mut out);
        (-out[0], -out[1])
    }
}

/// `∫₀¹ k(x,a) k(b,x) dx` for a unit-variance 1-D kernel.
pub fn integral_i<T: Real>(k: &Kernel1D<T>, a: T, b: T) -> T {
    k.integral(IntegralKind::Idd, a, b).result
}

/// `∫₀¹ ∂k(x,a)/∂x · ∂k(b,x)/∂x dx`.
pub fn integral_w_ii<T: Real>(k: &Kernel1D<T>, a: T, b: T) -> T {
    k.integral(IntegralKind::Wii, a, b).result
}

/// `∫₀¹ ∂k(x,a)/∂x · k(b,x) dx`.
pub fn integral_w_ij<T: Real>(k: &Kernel1D<T>, a: T, b: T) -> T {
    k.integral(IntegralKind::Wij, a, b).result
}

/// `(d/da, d/db)` of the chosen integral.
pub fn integral_grads<T: Real>(k: &Kernel1D<T>, a: T, b: T, which: IntegralKind) -> (T, T) {
    k.integral_grad(which, a, b)
}

/// Family, length scales, signal variance σ² and nugget τ².
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec<T> {
    family: KernelFamily,
    lengthscales: Vec<T>,
    variance: T,
    nugget: T,
}

impl<T: Real> KernelSpec<T> {
    pub fn new(family: KernelFamily, lengthscales: Vec<T>, variance: T, nugget: T) -> Result<Self> {
        if lengthscales.is_empty() {
            return invalid("kernel needs at least one length scale");
        }
        if lengthscales.iter().any(|&l| !(l > T::zero()) || !l.finite()) {
            return invalid("length scales must be positive and finite");
        }
        if !(variance > T::zero()) || !variance.finite() {
            return invalid("variance must be positive and finite");
        }
        if !(nugget >= T::zero()) || !nugget.finite() {
            return invalid("nugget must be non-negative and finite");
        }
        Ok(Self { family, lengthscales, variance, nugget })
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn lengthscales(&self) -> &[T] {
        &self.lengthscales
    }

    pub fn variance(&self) -> T {
        self.variance
    }

    pub fn nugget(&self) -> T {
        self.nugget
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    pub fn with_nugget(&self, nugget: T) -> Result<Self> {
        Self::new(self.family, self.lengthscales.clone(), self.variance, nugget)
    }

    /// The unit-variance kernel of coordinate `d`.
    #[inline]
    pub fn coord(&self, d: usize) -> Kernel1D<T> {
        Kernel1D::new(self.family, self.lengthscales[d])
    }

    pub fn coords(&self) -> Vec<Kernel1D<T>> {
        (0..self.dim()).map(|d| self.coord(d)).collect()
    }

    fn check_dims(&self, x: &[T], x2: &[T]) -> Result<()> {
        if x.len() != self.dim() || x2.len() != self.dim() {
            return invalid(format!(
                "point dimensions {} and {} do not match kernel dimension {}",
                x.len(),
                x2.len(),
                self.dim()
            ));
        }
        Ok(())
    }

    pub(crate) fn eval_unchecked(&self, x: &[T], x2: &[T]) -> T {
        let mut v = self.variance;
        for d in 0..self.dim() {
            v *= self.coord(d).corr(x[d] - x2[d]);
        }
        v
    }

    pub(crate) fn dx_unchecked(&self, x: &[T], x2: &[T], i: usize) -> T {
        let mut v = self.variance;
        for d in 0..self.dim() {
            let k = self.coord(d);
            v *= if d == i { k.deriv(1, x[d] - x2[d]) } else { k.corr(x[d] - x2[d]) };
        }
        v
    }
}

/// `k(x, x2)` without the nugget.
pub fn kernel_eval<T: Real>(spec: &KernelSpec<T>, x: &[T], x2: &[T]) -> Result<T> {
    spec.check_dims(x, x2)?;
    Ok(spec.eval_unchecked(x, x2))
}

/// `∂k(x, x2)/∂x_i`.
pub fn kernel_dx<T: Real>(spec: &KernelSpec<T>, x: &[T], x2: &[T], i: usize) -> Result<T> {
    spec.check_dims(x, x2)?;
    if i >= spec.dim() {
        return invalid(format!("coordinate {i} out of range for dimension {}", spec.dim()));
    }
    Ok(spec.dx_unchecked(x, x2, i))
}

/// `∂²k(x, x')/∂x_i ∂x'_j` at `x = x'`.
pub fn kernel_cross_d2<T: Real>(spec: &KernelSpec<T>, i: usize, j: usize) -> T {
    if i != j {
        return T::zero();
    }
    spec.variance * spec.coord(i).neg_curvature()
}
