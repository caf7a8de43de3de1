//! Closed-form active-subspace matrix of a fitted GP, its eigenstructure and
//! subspace comparisons.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::benchfns::mahalanobis_blocks;
use crate::error::{invalid, Error, Result};
use crate::gp::GpModel;
use crate::kernels::{kernel_cross_d2, KernelSpec};
use crate::linalg;
use crate::rng;
use crate::scalar::Real;

/// Per-coordinate pairwise integrals over the design: `I`, `w_ii` and
/// `wij[p][q] = wij(x_pc, x_qc)`, all n×n.
struct CoordTables<T> {
    i: DMatrix<T>,
    wii: DMatrix<T>,
    wij: DMatrix<T>,
}

fn coord_tables<T: Real>(spec: &KernelSpec<T>, pts: &[&[T]], c: usize) -> CoordTables<T> {
    let n = pts.len();
    let k = spec.coord(c);
    let mut i = DMatrix::zeros(n, n);
    let mut wii = DMatrix::zeros(n, n);
    let mut wij = DMatrix::zeros(n, n);
    let orders = [(0, 0), (1, 1), (1, 0), (0, 1)];
    let mut out = [T::zero(); 4];
    for q in 0..n {
        for p in q..n {
            k.product_integrals(pts[p][c], pts[q][c], &orders, &mut out);
            i[(p, q)] = out[0];
            i[(q, p)] = out[0];
            wii[(p, q)] = out[1];
            wii[(q, p)] = out[1];
            wij[(p, q)] = out[2];
            wij[(q, p)] = out[3];
        }
    }
    CoordTables { i, wii, wij }
}

/// `W_ij = ∫ κ_i(x)ᵀ κ_j(x) dx` for all coordinate pairs. Only the blocks with
/// `i ≤ j` are stored; `W_ji = W_ijᵀ`.
#[derive(Clone, Debug)]
pub struct WTensor<T> {
    m: usize,
    n: usize,
    blocks: Vec<DMatrix<T>>,
}

#[inline]
fn upper_index(m: usize, i: usize, j: usize) -> usize {
    debug_assert!(i <= j && j < m);
    i * m - i * (i + 1) / 2 + j
}

impl<T: Real> WTensor<T> {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Stored block `W_ij`, `i ≤ j`.
    pub fn upper(&self, i: usize, j: usize) -> &DMatrix<T> {
        &self.blocks[upper_index(self.m, i, j)]
    }

    /// `W_ij` for any `i, j`.
    pub fn block(&self, i: usize, j: usize) -> DMatrix<T> {
        if i <= j {
            self.upper(i, j).clone()
        } else {
            self.upper(j, i).transpose()
        }
    }

    /// `W_ij[p, q]` for any `i, j`.
    #[inline]
    pub fn entry(&self, i: usize, j: usize, p: usize, q: usize) -> T {
        if i <= j {
            self.upper(i, j)[(p, q)]
        } else {
            self.upper(j, i)[(q, p)]
        }
    }

    /// The tensor of the design with one more point `x̃`, given the border
    /// blocks: `a[i][j][p] = W^{(n+1)}_ij[p, n]`, `b[i][j][q] = W^{(n+1)}_ij[n, q]`
    /// and `w[i][j] = W^{(n+1)}_ij[n, n]`, for `i ≤ j`.
    pub fn bordered(&self, a: &[Vec<DVector<T>>], b: &[Vec<DVector<T>>], w: &DMatrix<T>) -> Self {
        let (m, n) = (self.m, self.n);
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for i in 0..m {
            for j in i..m {
                let mut out = DMatrix::zeros(n + 1, n + 1);
                out.view_mut((0, 0), (n, n)).copy_from(self.upper(i, j));
                for p in 0..n {
                    out[(p, n)] = a[i][j][p];
                    out[(n, p)] = b[i][j][p];
                }
                out[(n, n)] = w[(i, j)];
                blocks.push(out);
            }
        }
        Self { m, n: n + 1, blocks }
    }
}

/// Assembles `W` for the model's design and hyperparameters.
pub fn build_w<T: Real>(model: &GpModel<T>) -> WTensor<T> {
    let spec = model.spec();
    let (n, m) = (model.n(), model.m());
    let data = model.data();
    let pts: Vec<&[T]> = (0..n).map(|p| data.point(p)).collect();
    let tabs: Vec<CoordTables<T>> = (0..m).map(|c| coord_tables(spec, &pts, c)).collect();
    let s4 = spec.variance() * spec.variance();
    let mut blocks = Vec::with_capacity(m * (m + 1) / 2);
    for i in 0..m {
        for j in i..m {
            let mut out = DMatrix::<T>::zeros(n, n);
            for q in 0..n {
                for p in 0..n {
                    let mut v = s4;
                    if i == j {
                        v *= tabs[i].wii[(p, q)];
                    } else {
                        v *= tabs[i].wij[(p, q)] * tabs[j].wij[(q, p)];
                    }
                    for (c, t) in tabs.iter().enumerate() {
                        if c != i && c != j {
                            v *= t.i[(p, q)];
                        }
                    }
                    out[(p, q)] = v;
                }
            }
            blocks.push(out);
        }
    }
    WTensor { m, n, blocks }
}

/// `E_ij = ∫ ∂²k(x, x)/∂x_i∂x'_j dx`, diagonal for separable kernels.
pub fn build_e<T: Real>(spec: &KernelSpec<T>, m: usize) -> DMatrix<T> {
    DMatrix::from_fn(m, m, |i, j| if i < spec.dim() { kernel_cross_d2(spec, i, j) } else { T::zero() })
}

/// `C` with its sorted eigendecomposition.
#[derive(Clone, Debug)]
pub struct CEstimate<T> {
    pub c: DMatrix<T>,
    /// Descending, clipped at zero.
    pub eigvals: DVector<T>,
    /// Unit eigenvectors in columns, matching `eigvals`.
    pub eigvecs: DMatrix<T>,
    /// Smallest eigenvalue before clipping.
    pub min_raw_eigval: T,
    pub n: usize,
    /// Hyperparameters of the GP behind the estimate, if any.
    pub spec: Option<KernelSpec<T>>,
}

impl<T: Real> CEstimate<T> {
    /// Wraps an arbitrary symmetric matrix, for estimators other than the GP.
    pub fn from_matrix(c: DMatrix<T>, n: usize, spec: Option<KernelSpec<T>>) -> Result<Self> {
        if c.nrows() != c.ncols() || c.nrows() == 0 {
            return invalid("C must be a non-empty square matrix");
        }
        if c.iter().any(|v| !v.finite()) {
            return Err(Error::Numerical("C has non-finite entries".into()));
        }
        let mut c = c;
        linalg::symmetrize(&mut c);
        let (vals, vecs) = linalg::sym_eig_desc(&c);
        let min_raw_eigval = vals.iter().fold(vals[0], |a, &v| a.min(v));
        let eigvals = vals.map(|v| v.max(T::zero()));
        Ok(Self { c, eigvals, eigvecs: vecs, min_raw_eigval, n, spec })
    }

    pub fn m(&self) -> usize {
        self.c.nrows()
    }
}

/// `C_ij = E_ij − tr(K⁻¹W_ij) + αᵀW_ijα` with `α = K⁻¹y`.
pub fn estimate_c<T: Real>(model: &GpModel<T>, w: &WTensor<T>) -> Result<CEstimate<T>> {
    let m = model.m();
    let n = model.n();
    if w.m() != m || w.n() != n {
        return invalid(format!("W is for m = {}, n = {} but the model has m = {m}, n = {n}", w.m(), w.n()));
    }
    let mut c = build_e(model.spec(), m);
    if n > 0 {
        let kinv = model.kinv();
        let alpha = model.alpha();
        for i in 0..m {
            for j in i..m {
                let wb = w.upper(i, j);
                let tr = kinv.dot(wb);
                let quad = alpha.dot(&(wb * alpha));
                let v = c[(i, j)] - tr + quad;
                c[(i, j)] = v;
                c[(j, i)] = v;
            }
        }
    }
    CEstimate::from_matrix(c, n, Some(model.spec().clone()))
}

/// Builds `W` and evaluates `C` in one go.
pub fn estimate_c_for<T: Real>(model: &GpModel<T>) -> Result<CEstimate<T>> {
    estimate_c(model, &build_w(model))
}

/// An `r`-dimensional subspace of `R^m` by an orthonormal basis.
#[derive(Clone, Debug, PartialEq)]
pub struct Subspace<T> {
    pub u: DMatrix<T>,
}

impl<T: Real> Subspace<T> {
    /// Orthonormalizes the columns of `u` (thin QR).
    pub fn from_basis(u: &DMatrix<T>) -> Result<Self> {
        let (m, r) = (u.nrows(), u.ncols());
        if r == 0 || r > m {
            return invalid(format!("basis must have between 1 and {m} columns, got {r}"));
        }
        let qr = u.clone().qr();
        let (q, rr) = (qr.q(), qr.r());
        if (0..r).any(|k| !(rr[(k, k)].abs() > T::c(1e-12))) {
            return invalid("basis columns are linearly dependent");
        }
        Ok(Self { u: q.columns(0, r).into_owned() })
    }

    pub fn m(&self) -> usize {
        self.u.nrows()
    }

    pub fn r(&self) -> usize {
        self.u.ncols()
    }
}

/// Leading `r` eigenvectors of `C`.
pub fn subspace<T: Real>(c: &CEstimate<T>, r: usize) -> Result<Subspace<T>> {
    let m = c.m();
    if r == 0 || r >= m {
        return invalid(format!("subspace dimension must satisfy 1 ≤ r < {m}, got {r}"));
    }
    Ok(Subspace { u: c.eigvecs.columns(0, r).into_owned() })
}

/// `‖Uᵀ Û⊥‖₂`, the sine of the largest principal angle when `r = r̂`.
pub fn subspace_distance<T: Real>(u: &Subspace<T>, uhat: &Subspace<T>) -> Result<T> {
    if u.m() != uhat.m() {
        return invalid(format!("ambient dimensions differ: {} vs {}", u.m(), uhat.m()));
    }
    if uhat.r() == uhat.m() {
        return Ok(T::zero());
    }
    let perp = linalg::orthonormal_complement(&uhat.u);
    let d = linalg::spectral_norm(&(u.u.transpose() * perp));
    Ok(d.min(T::one()))
}

/// Advisory dimension: position of the largest gap in log-eigenvalues.
/// Eigenvalues below `1e-12·λ₁` are floored there.
pub fn suggest_r<T: Real>(eigvals: &DVector<T>) -> usize {
    let m = eigvals.len();
    if m < 2 {
        return 1;
    }
    let top = eigvals[0].max(T::c(1e-300));
    let floor = top * T::c(1e-12);
    let logs: Vec<T> = eigvals.iter().map(|v| v.max(floor).ln()).collect();
    let mut best = 1;
    let mut gap = logs[0] - logs[1];
    for k in 1..m - 1 {
        let g = logs[k] - logs[k + 1];
        if g > gap {
            gap = g;
            best = k + 1;
        }
    }
    best
}

/// Empirical `E[∇f ∇fᵀ]` for a GP with kernel `σ² exp(−½ (x−x')ᵀAᵀA(x−x'))`,
/// drawing gradients from the prior gradient covariance `σ²AᵀA`.
pub fn mom_check<T: Real>(a: &DMatrix<T>, sigma2: T, n_draws: usize, seed: u64) -> Result<DMatrix<T>> {
    let m = a.ncols();
    if m == 0 || a.nrows() == 0 {
        return invalid("A must be non-empty");
    }
    if n_draws == 0 {
        return invalid("need at least one draw");
    }
    let x = vec![T::c(0.5); m];
    let (_, _, cov) = mahalanobis_blocks(a, sigma2, &x, &x);
    let (vals, vecs) = linalg::sym_eig_desc(&cov);
    let root = &vecs * DMatrix::from_diagonal(&vals.map(|v| v.max(T::zero()).sqrt()));
    let mut r = rng::seeded(seed);
    let mut acc = DMatrix::<T>::zeros(m, m);
    for _ in 0..n_draws {
        let z = DVector::from_fn(m, |_, _| T::c(r.sample::<f64, _>(StandardNormal)));
        let g = &root * z;
        acc.ger(T::one(), &g, &g, T::one());
    }
    Ok(acc / T::n(n_draws))
}
