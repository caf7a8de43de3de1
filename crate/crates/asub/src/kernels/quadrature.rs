//! Composite Gauss–Legendre evaluation of the same 1-D product integrals,
//! kept as an independent cross-check of the closed forms.

use super::Kernel1D;
use crate::scalar::Real;

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 1 { x } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * p - pm) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

impl<T: Real> Kernel1D<T> {
    /// `P(ka, a, kb, b)` by composite Gauss–Legendre quadrature, split at
    /// the kinks `a` and `b` and refined to panels no wider than `l / 4`.
    pub fn product_integral_quadrature(&self, ka: usize, a: T, kb: usize, b: T) -> T {
        let (nodes, weights) = gauss_legendre(20);
        let l = self.lengthscale.to_f64_lossy();
        let (af, bf) = (a.to_f64_lossy(), b.to_f64_lossy());
        let mut cuts = [0.0, af.clamp(0.0, 1.0), bf.clamp(0.0, 1.0), 1.0];
        cuts.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let mut total = T::zero();
        for w in cuts.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            if hi <= lo {
                continue;
            }
            let panels = ((hi - lo) / (0.25 * l)).ceil().max(1.0) as usize;
            let h = (hi - lo) / panels as f64;
            for p in 0..panels {
                let c = lo + (p as f64 + 0.5) * h;
                for (x, wt) in nodes.iter().zip(&weights) {
                    let xx = T::c(c + 0.5 * h * x);
                    total += T::c(0.5 * h * wt) * self.deriv(ka, xx - a) * self.deriv(kb, xx - b);
                }
            }
        }
        total
    }
}
