//! Box-constrained quasi-Newton ascent.
//!
//! Projected BFGS on the inverse Hessian with a backtracking Armijo search
//! along the projected path. Variables pinned at a bound with the gradient
//! pushing outwards are frozen for the step.

use crate::scalar::Real;

#[derive(Clone, Copy, Debug)]
pub struct BoxOptions {
    pub max_iter: usize,
    /// Stop when the projected gradient's max-norm is below
    /// `grad_tol · max(1, |f|)`.
    pub grad_tol: f64,
    /// Largest first trial move in any coordinate.
    pub max_step: f64,
}

impl Default for BoxOptions {
    fn default() -> Self {
        Self { max_iter: 50, grad_tol: 1e-6, max_step: 0.25 }
    }
}

#[derive(Clone, Debug)]
pub struct OptResult<T> {
    pub x: Vec<T>,
    pub f: T,
    pub grad: Vec<T>,
    pub iters: usize,
    pub evals: usize,
    pub converged: bool,
}

fn clamp_into<T: Real>(x: &mut [T], lo: &[T], hi: &[T]) {
    for i in 0..x.len() {
        x[i] = x[i].max(lo[i]).min(hi[i]);
    }
}

fn projected_grad_norm<T: Real>(x: &[T], g: &[T], lo: &[T], hi: &[T]) -> T {
    // Ascent direction is +g.
    let mut m = T::zero();
    for i in 0..x.len() {
        let moved = (x[i] + g[i]).max(lo[i]).min(hi[i]);
        m = m.max((moved - x[i]).abs());
    }
    m
}

/// Maximizes `f` over the box `[lo, hi]`. The callback returns the value
/// and gradient, or `None` where `f` cannot be evaluated; such points are
/// treated as infinitely bad by the line search.
pub fn maximize_box<T: Real, F>(mut f: F, x0: &[T], lo: &[T], hi: &[T], opts: BoxOptions) -> Option<OptResult<T>>
where
    F: FnMut(&[T]) -> Option<(T, Vec<T>)>,
{
    maximize_box_lazy(|x: &[T], _| f(x), x0, lo, hi, opts)
}

/// [`maximize_box`] for objectives whose gradient costs much more than the
/// value. The callback's flag says whether the gradient is wanted; line
/// search trials ask only for the value.
pub fn maximize_box_lazy<T: Real, F>(mut f: F, x0: &[T], lo: &[T], hi: &[T], opts: BoxOptions) -> Option<OptResult<T>>
where
    F: FnMut(&[T], bool) -> Option<(T, Vec<T>)>,
{
    let p = x0.len();
    let mut x = x0.to_vec();
    clamp_into(&mut x, lo, hi);
    let (mut fx, mut g) = f(&x, true)?;
    let mut evals = 1;
    let mut h = vec![T::zero(); p * p];
    let reset = |h: &mut Vec<T>| {
        h.iter_mut().for_each(|v| *v = T::zero());
        for i in 0..p {
            h[i * p + i] = T::one();
        }
    };
    reset(&mut h);
    let tol = T::c(opts.grad_tol);
    let mut iters = 0;
    let mut converged = false;
    let mut fresh = true;

    while iters < opts.max_iter {
        if projected_grad_norm(&x, &g, lo, hi) <= tol * fx.abs().max(T::one()) {
            converged = true;
            break;
        }
        iters += 1;
        let eps = T::c(1e-12);
        let free: Vec<bool> = (0..p)
            .map(|i| !((x[i] <= lo[i] + eps && g[i] < T::zero()) || (x[i] >= hi[i] - eps && g[i] > T::zero())))
            .collect();
        let mut d = vec![T::zero(); p];
        for i in 0..p {
            if free[i] {
                let mut s = T::zero();
                for j in 0..p {
                    if free[j] {
                        s += h[i * p + j] * g[j];
                    }
                }
                d[i] = s;
            }
        }
        let mut slope: T = (0..p).fold(T::zero(), |s, i| s + d[i] * g[i]);
        if !(slope > T::zero()) {
            reset(&mut h);
            fresh = true;
            for i in 0..p {
                d[i] = if free[i] { g[i] } else { T::zero() };
            }
            slope = (0..p).fold(T::zero(), |s, i| s + d[i] * g[i]);
            if !(slope > T::zero()) {
                converged = true;
                break;
            }
        }
        let dmax = d.iter().fold(T::zero(), |m, v| m.max(v.abs()));
        let mut t = if fresh { T::c(opts.max_step) / dmax } else { T::one().min(T::c(opts.max_step) / dmax) };
        let mut accepted = None;
        for _ in 0..40 {
            let mut xn: Vec<T> = (0..p).map(|i| x[i] + t * d[i]).collect();
            clamp_into(&mut xn, lo, hi);
            let gain: T = (0..p).fold(T::zero(), |s, i| s + g[i] * (xn[i] - x[i]));
            if let Some((fnew, _)) = f(&xn, false) {
                evals += 1;
                if fnew.finite() && fnew >= fx + T::c(1e-4) * gain && fnew >= fx {
                    if let Some((fnew, gnew)) = f(&xn, true) {
                        accepted = Some((xn, fnew, gnew));
                        break;
                    }
                }
            } else {
                evals += 1;
            }
            t *= T::c(0.5);
        }
        let Some((xn, fnew, gnew)) = accepted else {
            if fresh {
                converged = true;
                break;
            }
            reset(&mut h);
            fresh = true;
            continue;
        };
        // BFGS on the minimization problem -f.
        let s: Vec<T> = (0..p).map(|i| xn[i] - x[i]).collect();
        let y: Vec<T> = (0..p).map(|i| g[i] - gnew[i]).collect();
        let sy: T = (0..p).fold(T::zero(), |a, i| a + s[i] * y[i]);
        let sn = s.iter().fold(T::zero(), |a, v| a + *v * *v).sqrt();
        let yn = y.iter().fold(T::zero(), |a, v| a + *v * *v).sqrt();
        let small = (fx - fnew).abs() <= T::c(1e-14) * fx.abs().max(T::one());
        x = xn;
        fx = fnew;
        g = gnew;
        if sy > T::c(1e-12) * sn * yn {
            if fresh {
                // Scale the identity before the first update.
                let yy = yn * yn;
                let gamma = sy / yy;
                for v in h.iter_mut() {
                    *v *= gamma;
                }
            }
            let rho = T::one() / sy;
            let hy: Vec<T> = (0..p).map(|i| (0..p).fold(T::zero(), |a, j| a + h[i * p + j] * y[j])).collect();
            let yhy: T = (0..p).fold(T::zero(), |a, i| a + y[i] * hy[i]);
            for i in 0..p {
                for j in 0..p {
                    h[i * p + j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
            fresh = false;
        }
        if small && sn <= T::c(1e-12) {
            converged = true;
            break;
        }
    }
    Some(OptResult { x, f: fx, grad: g, iters, evals, converged })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_interior_maximum_of_quadratic() {
        let f = |x: &[f64]| {
            let (a, b) = (x[0] - 0.3, x[1] - 0.7);
            Some((-(a * a + 10.0 * b * b + a * b), vec![-(2.0 * a + b), -(20.0 * b + a)]))
        };
        let r =
            maximize_box(f, &[0.9, 0.1], &[0.0, 0.0], &[1.0, 1.0], BoxOptions { max_iter: 100, ..Default::default() })
                .unwrap();
        assert!(r.converged);
        assert!((r.x[0] - 0.3).abs() < 1e-5 && (r.x[1] - 0.7).abs() < 1e-5, "{:?}", r.x);
    }

    #[test]
    fn stops_on_active_bound() {
        let f = |x: &[f64]| Some((x[0] - (x[1] - 0.5).powi(2), vec![1.0, -2.0 * (x[1] - 0.5)]));
        let r =
            maximize_box(f, &[0.2, 0.9], &[0.0, 0.0], &[1.0, 1.0], BoxOptions { max_iter: 100, ..Default::default() })
                .unwrap();
        assert_eq!(r.x[0], 1.0);
        assert!((r.x[1] - 0.5).abs() < 1e-5);
    }

    #[test]
    fn backs_off_from_undefined_region() {
        // Undefined beyond x = 0.6; the maximum inside is at 0.5.
        let f = |x: &[f64]| {
            if x[0] > 0.6 {
                None
            } else {
                Some((-(x[0] - 0.5).powi(2), vec![-2.0 * (x[0] - 0.5)]))
            }
        };
        let r =
            maximize_box(f, &[0.0], &[0.0], &[1.0], BoxOptions { max_iter: 100, max_step: 2.0, ..Default::default() })
                .unwrap();
        assert!((r.x[0] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn never_decreases_from_start() {
        let f = |x: &[f64]| Some(((3.0 * x[0]).sin(), vec![3.0 * (3.0 * x[0]).cos()]));
        let start = 0.1;
        let r = maximize_box(f, &[start], &[0.0], &[1.0], BoxOptions::default()).unwrap();
        assert!(r.f >= (3.0 * start).sin());
    }
}
