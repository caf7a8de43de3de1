#![allow(dead_code)]

//! Reference implementations written independently of the library.

/// Which correlation family, spelled out without the library's types.
#[derive(Clone, Copy, Debug)]
pub enum Fam {
    Gauss,
    M32,
    M52,
}

pub const FAMS: [Fam; 3] = [Fam::Gauss, Fam::M32, Fam::M52];

/// k-th derivative (k ≤ 2) of the unit-variance correlation at lag t.
pub fn corr_d(fam: Fam, l: f64, k: usize, t: f64) -> f64 {
    match fam {
        Fam::Gauss => {
            let r = (-t * t / (2.0 * l * l)).exp();
            match k {
                0 => r,
                1 => -t / (l * l) * r,
                _ => (t * t / l.powi(4) - 1.0 / (l * l)) * r,
            }
        }
        Fam::M32 => {
            let z = 3f64.sqrt() * t.abs() / l;
            match k {
                0 => (1.0 + z) * (-z).exp(),
                1 => -3.0 * t / (l * l) * (-z).exp(),
                _ => -3.0 / (l * l) * (1.0 - z) * (-z).exp(),
            }
        }
        Fam::M52 => {
            let z = 5f64.sqrt() * t.abs() / l;
            match k {
                0 => (1.0 + z + z * z / 3.0) * (-z).exp(),
                1 => -5.0 * t / (3.0 * l * l) * (1.0 + z) * (-z).exp(),
                _ => -5.0 / (3.0 * l * l) * (1.0 + z - z * z) * (-z).exp(),
            }
        }
    }
}

fn simpson_rec(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Adaptive Simpson quadrature on [a, b].
pub fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    // Start from a uniform 16-panel split so narrow features are not missed.
    let panels = 16;
    let h = (b - a) / panels as f64;
    (0..panels)
        .map(|p| {
            let (lo, hi) = (a + p as f64 * h, a + (p + 1) as f64 * h);
            let (fa, fb, fm) = (f(lo), f(hi), f(0.5 * (lo + hi)));
            let whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb);
            simpson_rec(f, lo, hi, fa, fm, fb, whole, tol / panels as f64, 40)
        })
        .sum()
}

/// ∫₀¹ r^(ka)(x − a) r^(kb)(x − b) dx, split at the kinks a and b.
pub fn product_oracle(fam: Fam, l: f64, ka: usize, a: f64, kb: usize, b: f64) -> f64 {
    let f = |x: f64| corr_d(fam, l, ka, x - a) * corr_d(fam, l, kb, x - b);
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    simpson(&f, 0.0, lo, 1e-11) + simpson(&f, lo, hi, 1e-11) + simpson(&f, hi, 1.0, 1e-11)
}

/// ∫₀¹ k(x,a) k(b,x) dx
pub fn i_oracle(fam: Fam, l: f64, a: f64, b: f64) -> f64 {
    product_oracle(fam, l, 0, a, 0, b)
}

/// ∫₀¹ ∂k(x,a)/∂x ∂k(b,x)/∂x dx; ∂k(b,x)/∂x is r'(x − b) because r' is odd.
pub fn wii_oracle(fam: Fam, l: f64, a: f64, b: f64) -> f64 {
    product_oracle(fam, l, 1, a, 1, b)
}

/// ∫₀¹ ∂k(x,a)/∂x k(b,x) dx
pub fn wij_oracle(fam: Fam, l: f64, a: f64, b: f64) -> f64 {
    product_oracle(fam, l, 1, a, 0, b)
}

/// Small deterministic generator so oracles do not share the library's RNG plumbing.
pub struct SplitMix(pub u64);

impl SplitMix {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform().max(1e-300);
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}

/// Test function a sin(b x1) + c x2² with a = 0.1, b = 20, c = −4, and its gradient.
pub fn ard_fn(x: &[f64]) -> f64 {
    0.1 * (20.0 * x[0]).sin() - 4.0 * x[1] * x[1]
}

pub fn ard_grad(x: &[f64]) -> [f64; 2] {
    [2.0 * (20.0 * x[0]).cos(), -8.0 * x[1]]
}

/// Expected gradient outer product of `ard_fn` over the unit square, in closed form.
pub fn ard_c_exact() -> [[f64; 2]; 2] {
    let c11 = 2.0 + (40f64).sin() / 20.0;
    let c22 = 64.0 / 3.0;
    let c12 = 2.0 * (20f64).sin() / 20.0 * -4.0;
    [[c11, c12], [c12, c22]]
}

pub fn frob(a: &[Vec<f64>]) -> f64 {
    a.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
}

/// Eigenvalues of a symmetric 2×2 matrix, descending.
pub fn eig2(c: [[f64; 2]; 2]) -> (f64, f64) {
    let tr = c[0][0] + c[1][1];
    let det = c[0][0] * c[1][1] - c[0][1] * c[1][0];
    let disc = (0.25 * tr * tr - det).max(0.0).sqrt();
    (0.5 * tr + disc, 0.5 * tr - disc)
}

/// Φ⁻¹(p) by Acklam's rational approximation, relative error about 1e-9.
pub fn inv_normal_cdf(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e1,
        2.209460984245205e2,
        -2.759285104469687e2,
        1.383577518672690e2,
        -3.066479806614716e1,
        2.506628277459239,
    ];
    const B: [f64; 5] =
        [-5.447609879822406e1, 1.615858368580409e2, -1.556989798598866e2, 6.680131188771972e1, -1.328068155288572e1];
    const C: [f64; 6] = [
        -7.784894002430293e-3,
        -3.223964580411365e-1,
        -2.400758277161838,
        -2.549732539343734,
        4.374664141464968,
        2.938163982698783,
    ];
    const D: [f64; 4] = [7.784695709041462e-3, 3.224671290700398e-1, 2.445134137142996, 3.754408661907416];
    let lo = 0.02425;
    if p < lo {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - lo {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}
