//! Closed forms for `P(ka, a, kb, b) = ∫₀¹ r^(ka)(x−a) r^(kb)(x−b) dx`.
//!
//! Every integral the estimator needs (and every derivative of one with
//! respect to a design coordinate) is one of these with `ka, kb ≤ 2`.

use super::{Kernel1D, KernelFamily};
use crate::scalar::Real;

/// Coefficients of `p(t0 + ρu)` in `u` for a quadratic `p`.
#[inline]
fn shift<T: Real>(p: [T; 3], t0: T, rho: T) -> [T; 3] {
    [p[0] + t0 * (p[1] + t0 * p[2]), rho * (p[1] + T::c(2.0) * p[2] * t0), p[2]]
}

#[inline]
fn dot_product_poly<T: Real>(p: &[T; 3], q: &[T; 3], mom: &[T; 5]) -> T {
    let mut s = T::zero();
    for i in 0..3 {
        if p[i] == T::zero() {
            continue;
        }
        let mut inner = T::zero();
        for j in 0..3 {
            inner += q[j] * mom[i + j];
        }
        s += p[i] * inner;
    }
    s
}

/// `(-1)^i / (i! (i + 5))`, enough terms for `z < 2` in double precision.
const SERIES: [f64; 26] = {
    let mut c = [0.0; 26];
    let mut f = 1.0;
    let mut i = 0;
    while i < 26 {
        c[i] = f / (i + 5) as f64;
        i += 1;
        f = -f / i as f64;
    }
    c
};

/// `∫₀^L u^k e^{-q u} du` for `k = 0..4`, `q ≥ 0`.
fn exp_moments<T: Real>(q: T, len: T) -> [T; 5] {
    let mut j = [T::zero(); 5];
    let z = q * len;
    if q == T::zero() {
        let mut lp = len;
        for (k, v) in j.iter_mut().enumerate() {
            *v = lp / T::n(k + 1);
            lp *= len;
        }
    } else if z < T::c(2.0) {
        // Power series for the top moment (terms bounded by 2^i / i!), then
        // downward recurrence, which only shrinks errors while z < k.
        // Even and odd halves as two independent Horner chains in z².
        let z2 = z * z;
        let (mut ev, mut od) = (T::zero(), T::zero());
        for c in SERIES.chunks_exact(2).rev() {
            ev = ev * z2 + T::c(c[0]);
            od = od * z2 + T::c(c[1]);
        }
        let sum = ev + z * od;
        let ez = (-z).exp();
        let mut lp = len.powi(5);
        j[4] = sum * lp;
        for k in (1..5).rev() {
            lp /= len;
            j[k - 1] = (q * j[k] + lp * ez) / T::n(k);
        }
    } else {
        let ez = (-z).exp();
        j[0] = (T::one() - ez) / q;
        let mut lp = T::one();
        for k in 1..5 {
            lp *= len;
            j[k] = (T::n(k) * j[k - 1] - lp * ez) / q;
        }
    }
    j
}

impl<T: Real> Kernel1D<T> {
    /// Evaluates `P(ka, a, kb, b)` for every requested `(ka, kb)` pair,
    /// sharing the per-piece work between requests.
    pub fn product_integrals(&self, a: T, b: T, orders: &[(usize, usize)], out: &mut [T]) {
        debug_assert_eq!(orders.len(), out.len());
        match self.family {
            KernelFamily::Gaussian => self.gaussian_products(a, b, orders, out),
            _ => self.matern_products(a, b, orders, out),
        }
    }

    /// Single `P(ka, a, kb, b)`.
    pub fn product_integral(&self, ka: usize, a: T, kb: usize, b: T) -> T {
        let mut out = [T::zero()];
        self.product_integrals(a, b, &[(ka, kb)], &mut out);
        out[0]
    }

    fn gaussian_products(&self, a: T, b: T, orders: &[(usize, usize)], out: &mut [T]) {
        let l = self.lengthscale;
        let l2 = l * l;
        let l4 = l2 * l2;
        let two = T::c(2.0);
        let c = (a + b) / two;
        let d = (b - a) / two;
        let (u0, u1) = (-c, T::one() - c);
        let e0 = (-(u0 * u0) / l2).exp();
        let e1 = (-(u1 * u1) / l2).exp();
        let scale = (-(a - b) * (a - b) / (T::c(4.0) * l2)).exp();

        let mut mom = [T::zero(); 5];
        // u0 ≤ 0 ≤ u1, so the two erf terms add without cancellation.
        mom[0] = l * T::c(std::f64::consts::PI.sqrt()) / two * ((u1 / l).erf() - (u0 / l).erf());
        mom[1] = l2 / two * (e0 - e1);
        let mut p0 = T::one();
        let mut p1 = T::one();
        for k in 2..5 {
            p0 *= u0;
            p1 *= u1;
            mom[k] = l2 / two * (T::n(k - 1) * mom[k - 2] - (p1 * e1 - p0 * e0));
        }

        // h_k(t) with t = u + s, where r^(k)(t) = h_k(t) exp(-t²/2l²).
        let poly = |k: usize, s: T| -> [T; 3] {
            match k {
                0 => [T::one(), T::zero(), T::zero()],
                1 => [-s / l2, -T::one() / l2, T::zero()],
                _ => [(s * s - l2) / l4, two * s / l4, T::one() / l4],
            }
        };
        for (o, &(ka, kb)) in out.iter_mut().zip(orders) {
            // x - a = u + d, x - b = u - d
            *o = scale * dot_product_poly(&poly(ka, d), &poly(kb, -d), &mom);
        }
    }

    fn matern_products(&self, a: T, b: T, orders: &[(usize, usize)], out: &mut [T]) {
        let theta = self.theta();
        for o in out.iter_mut() {
            *o = T::zero();
        }
        let (lo_ab, hi_ab) = if a <= b { (a, b) } else { (b, a) };
        let cuts = [T::zero(), lo_ab.max(T::zero()), hi_ab.min(T::one()).max(lo_ab), T::one()];
        let polys: [[T; 3]; 3] = [self.matern_poly(0), self.matern_poly(1), self.matern_poly(2)];

        for w in cuts.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            let len = hi - lo;
            if !(len > T::zero()) {
                continue;
            }
            let mid = (lo + hi) / T::c(2.0);
            let sa = if mid >= a { T::one() } else { -T::one() };
            let sb = if mid >= b { T::one() } else { -T::one() };
            // |x - c| grows along the piece when sign(x - c) = +1. Start the
            // local coordinate u at the end where the product is largest so
            // that the exponential factor only decays.
            let rho_sum = sa + sb;
            let (x0, dir) = if rho_sum < T::zero() { (hi, -T::one()) } else { (lo, T::one()) };
            let ta = (sa * (x0 - a)).max(T::zero());
            let tb = (sb * (x0 - b)).max(T::zero());
            let (ra, rb) = (sa * dir, sb * dir);
            let q = theta * (ra + rb);
            let mom = exp_moments(if rho_sum == T::zero() { T::zero() } else { q.abs() }, len);
            let pre = (-theta * (ta + tb)).exp();
            if pre == T::zero() {
                continue;
            }
            let pa = polys.map(|p| shift(p, ta, ra));
            let pb = polys.map(|p| shift(p, tb, rb));
            for (o, &(ka, kb)) in out.iter_mut().zip(orders) {
                let mut sign = pre;
                if ka == 1 {
                    sign *= sa;
                }
                if kb == 1 {
                    sign *= sb;
                }
                *o += sign * dot_product_poly(&pa[ka.min(2)], &pb[kb.min(2)], &mom);
            }
        }
    }
}
