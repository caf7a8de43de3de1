//! One-step lookahead design for learning `C`.
//!
//! Adding `(x̃, y)` to the design moves every entry of `C` by
//! `α + Zβ + Z²γ`, where `Z = (y − m_n(x̃))/σ_n(x̃)` is standard normal under
//! the current model. The acquisitions score a candidate by the spread of
//! that move.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::asm_core::{build_w, estimate_c, subspace, subspace_distance, CEstimate, Subspace, WTensor};
use crate::benchfns::{lhs, BlackBox};
use crate::error::{invalid, Error, Result};
use crate::gp::{fit_with, Bounds, Dataset, FitOptions, GpModel};
use crate::kernels::{Kernel1D, KernelFamily, KernelSpec};
use crate::optim::{maximize_box, BoxOptions};
use crate::rng;
use crate::scalar::Real;

/// Candidates with `σ_n²(x̃)` below this fraction of the process variance
/// are rejected.
pub const DEGENERATE_RATIO: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AcqCriterion {
    /// Variance of `tr C`, restricted to the diagonal.
    Trace,
    /// `‖Var C‖_F²` with the variance taken entrywise.
    Var1,
    /// `‖E[A A]‖_F²` for the centred update `A`.
    Var2,
}

impl AcqCriterion {
    pub const ALL: [AcqCriterion; 3] = [Self::Trace, Self::Var1, Self::Var2];

    pub fn name(self) -> &'static str {
        match self {
            Self::Trace => "trace",
            Self::Var1 => "var1",
            Self::Var2 => "var2",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name().eq_ignore_ascii_case(s))
    }
}

/// How the next design point is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Trace,
    Var1,
    Var2,
    /// Uniform on the cube.
    Random,
}

impl Strategy {
    pub fn criterion(self) -> Option<AcqCriterion> {
        match self {
            Self::Trace => Some(AcqCriterion::Trace),
            Self::Var1 => Some(AcqCriterion::Var1),
            Self::Var2 => Some(AcqCriterion::Var2),
            Self::Random => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self.criterion() {
            Some(c) => c.name(),
            None => "random",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match AcqCriterion::parse(s) {
            Some(AcqCriterion::Trace) => Some(Self::Trace),
            Some(AcqCriterion::Var1) => Some(Self::Var1),
            Some(AcqCriterion::Var2) => Some(Self::Var2),
            None if s.eq_ignore_ascii_case("random") => Some(Self::Random),
            None => None,
        }
    }
}

impl From<AcqCriterion> for Strategy {
    fn from(c: AcqCriterion) -> Self {
        match c {
            AcqCriterion::Trace => Self::Trace,
            AcqCriterion::Var1 => Self::Var1,
            AcqCriterion::Var2 => Self::Var2,
        }
    }
}

/// Coefficients of the update of `C` at a candidate `x̃`.
#[derive(Clone, Debug)]
pub struct AcqCoeffs<T> {
    pub alpha: DMatrix<T>,
    pub b: DMatrix<T>,
    pub gamma: DMatrix<T>,
    /// `db[d] = ∂B/∂x̃_d`; empty when gradients were not requested.
    pub db: Vec<DMatrix<T>>,
    pub dgamma: Vec<DMatrix<T>>,
    pub xtilde: Vec<T>,
    /// Predictive variance of `y(x̃)`, nugget included.
    pub sigma2n: T,
    /// `g = −K⁻¹k(x̃)/σ_n²`.
    pub g: DVector<T>,
    /// Border of `W` for the augmented design, `i ≤ j` entries only. Feeds
    /// [`WTensor::bordered`].
    pub border_a: Vec<Vec<DVector<T>>>,
    pub border_b: Vec<Vec<DVector<T>>>,
    pub border_w: DMatrix<T>,
}

impl<T: Real> AcqCoeffs<T> {
    /// `C^{(n+1)} − C^{(n)}` for the standardized residual `z`.
    pub fn delta(&self, z: T) -> DMatrix<T> {
        &self.alpha + &self.b * z + &self.gamma * (z * z)
    }

    pub fn has_grad(&self) -> bool {
        !self.db.is_empty()
    }
}

// Orders of P(ka, kb) tabulated per coordinate between data and candidate.
const ORDERS: [(usize, usize); 6] = [(0, 0), (1, 1), (1, 0), (0, 1), (1, 2), (0, 2)];
const P00: usize = 0;
const P11: usize = 1;
const P10: usize = 2;
const P01: usize = 3;
const P12: usize = 4;
const P02: usize = 5;
// At (x̃_c, x̃_c).
const SELF_ORDERS: [(usize, usize); 5] = [(0, 0), (1, 1), (1, 0), (1, 2), (0, 2)];
const S00: usize = 0;
const S11: usize = 1;
const S10: usize = 2;
const S12: usize = 3;
const S02: usize = 4;

/// Per-model state shared by all candidates: `S_ij = W_ij + W_ijᵀ` and
/// `S_ij α` for `i ≤ j`.
pub struct AcqContext<'a, T> {
    model: &'a GpModel<T>,
    coords: Vec<Kernel1D<T>>,
    pairs: Vec<(usize, usize)>,
    sym: Vec<DMatrix<T>>,
    sym_alpha: Vec<DVector<T>>,
}

impl<'a, T: Real> AcqContext<'a, T> {
    pub fn new(model: &'a GpModel<T>, w: &WTensor<T>) -> Result<Self> {
        let m = model.m();
        if w.m() != m || w.n() != model.n() {
            return invalid(format!(
                "W is for n = {}, m = {} but the model has n = {}, m = {}",
                w.n(),
                w.m(),
                model.n(),
                m
            ));
        }
        if model.n() == 0 {
            return invalid("the update coefficients need at least one observation");
        }
        let mut pairs = Vec::with_capacity(m * (m + 1) / 2);
        let mut sym = Vec::with_capacity(pairs.capacity());
        let mut sym_alpha = Vec::with_capacity(pairs.capacity());
        for i in 0..m {
            for j in i..m {
                let blk = w.upper(i, j);
                let s = blk + blk.transpose();
                sym_alpha.push(&s * model.alpha());
                sym.push(s);
                pairs.push((i, j));
            }
        }
        Ok(Self { model, coords: model.spec().coords(), pairs, sym, sym_alpha })
    }

    pub fn model(&self) -> &GpModel<T> {
        self.model
    }

    pub fn coeffs(&self, x: &[T], with_grad: bool) -> Result<AcqCoeffs<T>> {
        self.compute(x, with_grad, false)
    }

    /// Acquisition value at `x`.
    pub fn value(&self, x: &[T], crit: AcqCriterion) -> Result<T> {
        let c = self.compute(x, false, crit == AcqCriterion::Trace)?;
        Ok(acq_value(&c, crit))
    }

    /// Acquisition value and gradient at `x`.
    pub fn value_grad(&self, x: &[T], crit: AcqCriterion) -> Result<(T, Vec<T>)> {
        let c = self.compute(x, true, crit == AcqCriterion::Trace)?;
        Ok((acq_value(&c, crit), acq_grad(&c, crit)?))
    }

    fn compute(&self, x: &[T], with_grad: bool, diag_only: bool) -> Result<AcqCoeffs<T>> {
        let model = self.model;
        let (n, m) = (model.n(), model.m());
        if x.len() != m {
            return invalid(format!("candidate dimension {} but model dimension {m}", x.len()));
        }
        if x.iter().any(|v| !v.finite() || *v < T::zero() || *v > T::one()) {
            return invalid("candidate outside [0,1]^m");
        }
        let spec = model.spec();
        let s2f = spec.variance();
        let s4 = s2f * s2f;
        let two = T::c(2.0);

        let kt = model.kvec(x);
        let v = model.kinv() * &kt;
        let sig2 = s2f + spec.nugget() - kt.dot(&v);
        if !(sig2 > T::c(DEGENERATE_RATIO) * s2f) {
            return Err(Error::DegenerateCandidate(sig2.to_f64_lossy()));
        }
        let sig = sig2.sqrt();
        let g = &v * (-T::one() / sig2);

        let no = if with_grad { 6 } else { 4 };
        let mut tab = vec![T::zero(); m * n * 6];
        for c in 0..m {
            for p in 0..n {
                let at = (c * n + p) * 6;
                self.coords[c].product_integrals(model.data().point(p)[c], x[c], &ORDERS[..no], &mut tab[at..at + no]);
            }
        }
        let t = |c: usize, p: usize, k: usize| tab[(c * n + p) * 6 + k];
        let mut st = vec![[T::zero(); 5]; m];
        for c in 0..m {
            self.coords[c].product_integrals(x[c], x[c], &SELF_ORDERS, &mut st[c]);
        }

        // Per-direction quantities for the gradient.
        let (dv, dsig2) = if with_grad {
            let kap = model.kappa(x);
            let dv = model.kinv() * kap.transpose();
            let ds: Vec<T> = (0..m).map(|d| -two * kap.row(d).transpose().dot(&v)).collect();
            (dv, ds)
        } else {
            (DMatrix::zeros(0, 0), Vec::new())
        };

        let alpha_y = model.alpha();
        let mut alpha = DMatrix::<T>::zeros(m, m);
        let mut bm = DMatrix::<T>::zeros(m, m);
        let mut gm = DMatrix::<T>::zeros(m, m);
        let mut db = if with_grad { vec![DMatrix::<T>::zeros(m, m); m] } else { Vec::new() };
        let mut dg = db.clone();
        let mut border_a = vec![vec![DVector::<T>::zeros(0); m]; m];
        let mut border_b = border_a.clone();
        let mut border_w = DMatrix::<T>::zeros(m, m);

        let mut gv = vec![T::zero(); m];
        let mut ex = vec![T::zero(); m];
        let mut dapb = vec![T::zero(); m];
        // Without gradients only Π_{c ≠ i,j} t00 is needed; tabulate it.
        let mut rest2 = Vec::new();
        if !with_grad {
            rest2 = vec![T::zero(); n * m * m];
            for p in 0..n {
                for i in 0..m {
                    for c in 0..m {
                        gv[c] = if c == i { T::one() } else { t(c, p, P00) };
                    }
                    excluded_products(&gv, &mut rest2[(p * m + i) * m..(p * m + i + 1) * m]);
                }
            }
        }
        for (k, &(i, j)) in self.pairs.iter().enumerate() {
            if diag_only && i != j {
                continue;
            }
            let mut a = DVector::<T>::zeros(n);
            let mut b = DVector::<T>::zeros(n);
            // Σ_p ∂_d(a+b)[p]·v[p] and the same against α.
            let mut dapb_v = vec![T::zero(); m];
            let mut dapb_al = vec![T::zero(); m];
            for p in 0..n {
                let rest = if with_grad {
                    for c in 0..m {
                        gv[c] = if c == i || c == j { T::one() } else { t(c, p, P00) };
                    }
                    excluded_products(&gv, &mut ex);
                    ex[i]
                } else {
                    rest2[(p * m + i) * m + j]
                };
                let pair_val;
                if i == j {
                    a[p] = s4 * t(i, p, P11) * rest;
                    b[p] = a[p];
                    pair_val = two * t(i, p, P11);
                } else {
                    a[p] = s4 * t(i, p, P10) * t(j, p, P01) * rest;
                    b[p] = s4 * t(j, p, P10) * t(i, p, P01) * rest;
                    pair_val = t(i, p, P10) * t(j, p, P01) + t(j, p, P10) * t(i, p, P01);
                }
                if !with_grad {
                    continue;
                }
                for d in 0..m {
                    dapb[d] = if d == i && i == j {
                        -two * s4 * t(i, p, P12) * rest
                    } else if d == i {
                        -s4 * rest * (t(i, p, P11) * t(j, p, P01) + t(j, p, P10) * t(i, p, P02))
                    } else if d == j {
                        -s4 * rest * (t(i, p, P10) * t(j, p, P02) + t(j, p, P11) * t(i, p, P01))
                    } else {
                        -s4 * pair_val * t(d, p, P01) * ex[d]
                    };
                    dapb_v[d] += dapb[d] * v[p];
                    dapb_al[d] += dapb[d] * alpha_y[p];
                }
            }
            let apb = &a + &b;

            // Self term and its derivatives.
            for c in 0..m {
                gv[c] = if c == i || c == j { T::one() } else { st[c][S00] };
            }
            excluded_products(&gv, &mut ex);
            let rest = ex[i];
            let w_self = if i == j { s4 * st[i][S11] * rest } else { s4 * st[i][S10] * st[j][S10] * rest };

            let sv = &self.sym[k] * &v;
            let vwv = v.dot(&sv) / two;
            let apb_v = apb.dot(&v);
            let n_gamma = w_self + vwv - apb_v;
            let n_beta = apb.dot(alpha_y) - self.sym_alpha[k].dot(&v);
            let gamma = n_gamma / sig2;
            let beta = n_beta / sig;
            // Change of tr(K⁻¹W) under the bordered inverse, written in g.
            let gsg = vwv / (sig2 * sig2);
            let al = -(sig2 * gsg + g.dot(&apb) + w_self / sig2);

            alpha[(i, j)] = al;
            alpha[(j, i)] = al;
            bm[(i, j)] = beta;
            bm[(j, i)] = beta;
            gm[(i, j)] = gamma;
            gm[(j, i)] = gamma;
            border_w[(i, j)] = w_self;
            border_w[(j, i)] = w_self;
            border_a[i][j] = a;
            border_b[i][j] = b;

            if with_grad {
                let sv_apb = &sv - &apb;
                for d in 0..m {
                    let dw = if d == i && i == j {
                        -two * s4 * st[i][S12] * rest
                    } else if i == j {
                        -two * s4 * st[i][S11] * st[d][S10] * ex[d]
                    } else if d == i {
                        -s4 * (st[i][S02] + st[i][S11]) * st[j][S10] * rest
                    } else if d == j {
                        -s4 * (st[j][S02] + st[j][S11]) * st[i][S10] * rest
                    } else {
                        -two * s4 * st[i][S10] * st[j][S10] * st[d][S10] * ex[d]
                    };
                    let dvd = dv.column(d);
                    let dn_gamma = dw + dvd.dot(&sv_apb) - dapb_v[d];
                    let dn_beta = dapb_al[d] - self.sym_alpha[k].dot(&dvd);
                    let dgam = dn_gamma / sig2 - n_gamma * dsig2[d] / (sig2 * sig2);
                    let dbet = dn_beta / sig - n_beta * dsig2[d] / (two * sig2 * sig);
                    db[d][(i, j)] = dbet;
                    db[d][(j, i)] = dbet;
                    dg[d][(i, j)] = dgam;
                    dg[d][(j, i)] = dgam;
                }
            }
        }
        Ok(AcqCoeffs {
            alpha,
            b: bm,
            gamma: gm,
            db,
            dgamma: dg,
            xtilde: x.to_vec(),
            sigma2n: sig2,
            g,
            border_a,
            border_b,
            border_w,
        })
    }
}

/// `ex[c] = Π_{c' ≠ c} g[c']` without division.
fn excluded_products<T: Real>(g: &[T], ex: &mut [T]) {
    let m = g.len();
    let mut acc = T::one();
    for c in 0..m {
        ex[c] = acc;
        acc *= g[c];
    }
    acc = T::one();
    for c in (0..m).rev() {
        ex[c] *= acc;
        acc *= g[c];
    }
}

/// Update coefficients and their gradients at `x̃`.
pub fn coeffs<T: Real>(model: &GpModel<T>, w: &WTensor<T>, xtilde: &[T]) -> Result<AcqCoeffs<T>> {
    AcqContext::new(model, w)?.coeffs(xtilde, true)
}

fn hadamard_sq_sum<T: Real>(b: &DMatrix<T>, g: &DMatrix<T>) -> DMatrix<T> {
    b.component_mul(b) + g.component_mul(g) * T::c(2.0)
}

pub fn acq_value<T: Real>(c: &AcqCoeffs<T>, crit: AcqCriterion) -> T {
    let m = c.b.nrows();
    match crit {
        AcqCriterion::Trace => {
            (0..m).fold(T::zero(), |s, i| s + c.b[(i, i)] * c.b[(i, i)] + T::c(2.0) * c.gamma[(i, i)] * c.gamma[(i, i)])
        }
        AcqCriterion::Var1 => hadamard_sq_sum(&c.b, &c.gamma).norm_squared(),
        AcqCriterion::Var2 => (&c.b * &c.b + &c.gamma * &c.gamma * T::c(2.0)).norm_squared(),
    }
}

pub fn acq_grad<T: Real>(c: &AcqCoeffs<T>, crit: AcqCriterion) -> Result<Vec<T>> {
    if !c.has_grad() {
        return invalid("coefficients were computed without gradients");
    }
    let m = c.b.nrows();
    let two = T::c(2.0);
    let four = T::c(4.0);
    let out = match crit {
        AcqCriterion::Trace => (0..m)
            .map(|d| {
                (0..m).fold(T::zero(), |s, i| {
                    s + two * c.b[(i, i)] * c.db[d][(i, i)] + four * c.gamma[(i, i)] * c.dgamma[d][(i, i)]
                })
            })
            .collect(),
        AcqCriterion::Var1 => {
            let mm = hadamard_sq_sum(&c.b, &c.gamma);
            (0..m)
                .map(|d| {
                    let dm = c.b.component_mul(&c.db[d]) * two + c.gamma.component_mul(&c.dgamma[d]) * four;
                    two * mm.dot(&dm)
                })
                .collect()
        }
        AcqCriterion::Var2 => {
            let mm = &c.b * &c.b + &c.gamma * &c.gamma * two;
            (0..m)
                .map(|d| {
                    let dm =
                        &c.db[d] * &c.b + &c.b * &c.db[d] + (&c.dgamma[d] * &c.gamma + &c.gamma * &c.dgamma[d]) * two;
                    two * mm.dot(&dm)
                })
                .collect()
        }
    };
    Ok(out)
}

/// Result of [`optimize_acq`].
#[derive(Clone, Debug)]
pub struct AcqOptimum<T> {
    pub x: Vec<T>,
    pub value: T,
    /// Best value among the space-filling candidates.
    pub best_candidate_value: T,
    /// Candidates rejected as degenerate.
    pub n_degenerate: usize,
}

/// Scores an LHS of `n_candidates` points and polishes the best `n_local`
/// with bounded quasi-Newton ascent.
pub fn optimize_acq<T: Real>(
    model: &GpModel<T>,
    w: &WTensor<T>,
    crit: AcqCriterion,
    n_candidates: usize,
    n_local: usize,
    seed: u64,
) -> Result<AcqOptimum<T>> {
    if n_local == 0 || n_candidates < n_local {
        return invalid(format!("need n_candidates ≥ n_local ≥ 1, got {n_candidates} and {n_local}"));
    }
    let ctx = AcqContext::new(model, w)?;
    let m = model.m();
    let cand: DMatrix<T> = lhs(n_candidates, m, seed);
    let mut scored: Vec<(T, usize)> = Vec::with_capacity(n_candidates);
    let mut n_degenerate = 0;
    let mut row = vec![T::zero(); m];
    for r in 0..n_candidates {
        for c in 0..m {
            row[c] = cand[(r, c)];
        }
        match ctx.value(&row, crit) {
            Ok(v) if v.finite() => scored.push((v, r)),
            Ok(_) | Err(Error::DegenerateCandidate(_)) => n_degenerate += 1,
            Err(e) => return Err(e),
        }
    }
    if scored.is_empty() {
        return Err(Error::DesignSaturated);
    }
    // Stable: ties keep candidate order.
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
    let best_candidate_value = scored[0].0;
    let lo = vec![T::zero(); m];
    let hi = vec![T::one(); m];
    let opts = BoxOptions { max_iter: 50, grad_tol: 1e-6, max_step: 0.1 };
    let mut best_x: Vec<T> = cand.row(scored[0].1).iter().copied().collect();
    let mut best_v = best_candidate_value;
    for &(v0, r) in scored.iter().take(n_local) {
        let x0: Vec<T> = cand.row(r).iter().copied().collect();
        let res = maximize_box(|x: &[T]| ctx.value_grad(x, crit).ok(), &x0, &lo, &hi, opts);
        if let Some(res) = res {
            if res.f.finite() && res.f > best_v && res.f >= v0 {
                best_v = res.f;
                best_x = res.x;
            }
        }
    }
    Ok(AcqOptimum { x: best_x, value: best_v, best_candidate_value, n_degenerate })
}

/// Settings for [`run_sequential`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeqConfig {
    pub n0: usize,
    /// Total number of evaluations of `f`, initial design included.
    pub budget: usize,
    pub strategy: Strategy,
    pub family: KernelFamily,
    /// Refit hyperparameters every this many steps; `0` keeps the initial
    /// fit throughout.
    pub refit_every: usize,
    /// Fix the nugget at 1e-8 instead of estimating it.
    pub noiseless: bool,
    pub n_restarts: usize,
    /// Space-filling candidates per step; `None` means `100·m`.
    pub n_candidates: Option<usize>,
    pub n_local: usize,
    pub seed: u64,
}

impl SeqConfig {
    pub fn new(n0: usize, budget: usize, strategy: Strategy) -> Self {
        Self {
            n0,
            budget,
            strategy,
            family: KernelFamily::Matern52,
            refit_every: 1,
            noiseless: false,
            n_restarts: 10,
            n_candidates: None,
            n_local: 5,
            seed: 0,
        }
    }
}

/// State after one new evaluation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepRecord<T> {
    /// Zero-based index of the evaluation; the first step has index `n0`.
    pub step: usize,
    pub x: Vec<T>,
    /// `None` for random steps.
    pub acq_value: Option<T>,
    pub y: T,
    /// Eigenvalues of `C` once the point has been absorbed.
    pub eigvals: Vec<T>,
    pub subspace_error: Option<T>,
    pub refit: bool,
    pub lengthscales: Vec<T>,
    pub variance: T,
    pub nugget: T,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunRecord<T> {
    pub config: SeqConfig,
    pub initial_x: Vec<Vec<T>>,
    pub initial_y: Vec<T>,
    pub initial_eigvals: Vec<T>,
    pub initial_error: Option<T>,
    pub steps: Vec<StepRecord<T>>,
    pub warnings: Vec<String>,
}

impl<T: Real> RunRecord<T> {
    /// Number of evaluations of `f` recorded.
    pub fn n_evals(&self) -> usize {
        self.initial_y.len() + self.steps.len()
    }

    /// Subspace error after the last recorded evaluation.
    pub fn final_error(&self) -> Option<T> {
        match self.steps.last() {
            Some(s) => s.subspace_error,
            None => self.initial_error,
        }
    }

    /// `(evaluations, error)` for the initial design and every step.
    pub fn error_curve(&self) -> Vec<(usize, T)> {
        let mut out = Vec::with_capacity(self.steps.len() + 1);
        if let Some(e) = self.initial_error {
            out.push((self.initial_y.len(), e));
        }
        for s in &self.steps {
            if let Some(e) = s.subspace_error {
                out.push((s.step + 1, e));
            }
        }
        out
    }
}

/// A run stopped early; `record` holds everything up to the failure.
#[derive(Clone, Debug)]
pub struct AbortWithPartialRecord<T> {
    pub record: RunRecord<T>,
    pub reason: Error,
}

impl<T> std::fmt::Display for AbortWithPartialRecord<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "run aborted after {} steps: {}", self.record.steps.len(), self.reason)
    }
}

impl<T: std::fmt::Debug> std::error::Error for AbortWithPartialRecord<T> {}

struct LoopState<T> {
    model: GpModel<T>,
    w: WTensor<T>,
    c: CEstimate<T>,
}

fn error_against<T: Real>(c: &CEstimate<T>, reference: Option<&Subspace<T>>) -> Result<Option<T>> {
    match reference {
        Some(r) => Ok(Some(subspace_distance(r, &subspace(c, r.r())?)?)),
        None => Ok(None),
    }
}

fn eig_vec<T: Real>(c: &CEstimate<T>) -> Vec<T> {
    c.eigvals.iter().copied().collect()
}

/// Sequential design: an LHS of `n0` points, then one point per step chosen
/// by `cfg.strategy` until `cfg.budget` evaluations have been spent.
/// `reference`, if given, is the subspace the per-step error is measured
/// against.
pub fn run_sequential<T: Real>(
    f: &mut dyn BlackBox<T>,
    cfg: &SeqConfig,
    reference: Option<&Subspace<T>>,
) -> std::result::Result<RunRecord<T>, Box<AbortWithPartialRecord<T>>> {
    run_sequential_with(f, cfg, reference, &mut |_| {})
}

/// [`run_sequential`] calling `observe` with the record after the initial
/// design and after every step.
pub fn run_sequential_with<T: Real>(
    f: &mut dyn BlackBox<T>,
    cfg: &SeqConfig,
    reference: Option<&Subspace<T>>,
    observe: &mut dyn FnMut(&RunRecord<T>),
) -> std::result::Result<RunRecord<T>, Box<AbortWithPartialRecord<T>>> {
    let m = f.dim();
    let mut record = RunRecord {
        config: cfg.clone(),
        initial_x: Vec::new(),
        initial_y: Vec::new(),
        initial_eigvals: Vec::new(),
        initial_error: None,
        steps: Vec::new(),
        warnings: Vec::new(),
    };
    macro_rules! bail {
        ($e:expr) => {
            return Err(Box::new(AbortWithPartialRecord { record, reason: $e }))
        };
    }
    macro_rules! tryr {
        ($e:expr) => {
            match $e {
                Ok(v) => v,
                Err(e) => bail!(e),
            }
        };
    }
    if cfg.n0 < 2 || cfg.budget <= cfg.n0 {
        bail!(Error::InvalidInput(format!("need budget > n0 ≥ 2, got n0 = {} and budget = {}", cfg.n0, cfg.budget)));
    }
    if cfg.n_local == 0 {
        bail!(Error::InvalidInput("n_local must be at least 1".into()));
    }
    if let Some(r) = reference {
        if r.m() != m {
            bail!(Error::InvalidInput(format!("reference subspace has dimension {} but f has {m}", r.m())));
        }
    }
    let n_candidates = cfg.n_candidates.unwrap_or(100 * m).max(cfg.n_local);

    let x0: DMatrix<T> = lhs(cfg.n0, m, rng::derive_seed(cfg.seed, 1));
    for r in 0..cfg.n0 {
        let x: Vec<T> = x0.row(r).iter().copied().collect();
        let y = f.eval(&x);
        if !y.finite() {
            bail!(Error::Numerical(format!("f returned a non-finite value at initial point {r}")));
        }
        record.initial_x.push(x);
        record.initial_y.push(y);
    }
    let mut data = tryr!(Dataset::from_rows(&record.initial_x, &record.initial_y));

    let fit_model =
        |data: &Dataset<T>, warm: Option<&KernelSpec<T>>, stream: u64| -> Result<(GpModel<T>, Vec<String>)> {
            let bounds = if cfg.noiseless { Bounds::noiseless(data) } else { Bounds::for_data(data) };
            let opts = FitOptions {
                n_restarts: if warm.is_some() { 0 } else { cfg.n_restarts },
                seed: rng::derive_seed(cfg.seed, stream),
                warm_start: warm.cloned(),
                ..FitOptions::default()
            };
            let rep = fit_with(data, cfg.family, &bounds, &opts)?;
            Ok((rep.model, rep.warnings))
        };
    let fresh = |model: GpModel<T>| -> Result<LoopState<T>> {
        let w = build_w(&model);
        let c = estimate_c(&model, &w)?;
        Ok(LoopState { model, w, c })
    };

    let (model, warns) = tryr!(fit_model(&data, None, 2));
    record.warnings.extend(warns);
    let mut state = tryr!(fresh(model));
    record.initial_eigvals = eig_vec(&state.c);
    record.initial_error = tryr!(error_against(&state.c, reference));
    observe(&record);

    let mut random = rng::seeded(rng::derive_seed(cfg.seed, 3));
    for step in cfg.n0..cfg.budget {
        let (x, acq_value) = match cfg.strategy.criterion() {
            None => ((0..m).map(|_| T::c(random.random::<f64>())).collect::<Vec<T>>(), None),
            Some(crit) => {
                let seed = rng::derive_seed(cfg.seed, 1000 + step as u64);
                let opt = tryr!(optimize_acq(&state.model, &state.w, crit, n_candidates, cfg.n_local, seed));
                (opt.x, Some(opt.value))
            }
        };
        let y = f.eval(&x);
        if !y.finite() {
            bail!(Error::Numerical(format!("f returned a non-finite value at step {step}")));
        }
        data = tryr!(data.with_point(&x, y));
        let k = step - cfg.n0 + 1;
        let refit = cfg.refit_every > 0 && k.is_multiple_of(cfg.refit_every);
        state = if refit {
            let warm = state.model.spec().clone();
            let (model, warns) = tryr!(fit_model(&data, Some(&warm), 2000 + step as u64));
            record.warnings.extend(warns);
            tryr!(fresh(model))
        } else {
            tryr!(incremental_update(&state, &x, y))
        };
        let spec = state.model.spec();
        record.steps.push(StepRecord {
            step,
            x,
            acq_value,
            y,
            eigvals: eig_vec(&state.c),
            subspace_error: tryr!(error_against(&state.c, reference)),
            refit,
            lengthscales: spec.lengthscales().to_vec(),
            variance: spec.variance(),
            nugget: spec.nugget(),
        });
        observe(&record);
    }
    Ok(record)
}

/// Absorbs `(x, y)` with frozen hyperparameters: `C` moves by
/// `α + Zβ + Z²γ`, `W` gains a border and `K⁻¹` is extended in place.
fn incremental_update<T: Real>(state: &LoopState<T>, x: &[T], y: T) -> Result<LoopState<T>> {
    let co = AcqContext::new(&state.model, &state.w)?.coeffs(x, false)?;
    let mean = state.model.kvec(x).dot(state.model.alpha());
    let z = (y - mean) / co.sigma2n.sqrt();
    let c_new = &state.c.c + co.delta(z);
    let model = state.model.with_point(x, y)?;
    let w = state.w.bordered(&co.border_a, &co.border_b, &co.border_w);
    let c = CEstimate::from_matrix(c_new, model.n(), Some(model.spec().clone()))?;
    Ok(LoopState { model, w, c })
}

/// `C` after absorbing `(x̃, y)` with the hyperparameters held fixed.
pub fn update_c<T: Real>(model: &GpModel<T>, w: &WTensor<T>, c: &CEstimate<T>, x: &[T], y: T) -> Result<CEstimate<T>> {
    let st = LoopState { model: model.clone(), w: w.clone(), c: c.clone() };
    Ok(incremental_update(&st, x, y)?.c)
}
