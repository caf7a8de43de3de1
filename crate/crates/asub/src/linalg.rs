//! Dense helpers on top of nalgebra: jittered Cholesky, triangular inverse,
//! sorted symmetric eigendecomposition and subspace utilities.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Lower Cholesky factor, or `None` if a pivot is not positive.
pub fn cholesky<T: Real>(a: &DMatrix<T>) -> Option<DMatrix<T>> {
    let n = a.nrows();
    let mut l = a.clone();
    // Left-looking by columns on column-major storage; the inner update is
    // an axpy over a contiguous column.
    for j in 0..n {
        for k in 0..j {
            let ljk = l[(j, k)];
            if ljk == T::zero() {
                continue;
            }
            let (left, mut right) = l.columns_range_pair_mut(k, j);
            let src = left.rows_range(j..n);
            let mut dst = right.rows_range_mut(j..n);
            dst.axpy(-ljk, &src, T::one());
        }
        let d = l[(j, j)];
        if !(d > T::zero()) || !d.finite() {
            return None;
        }
        let s = d.sqrt();
        l[(j, j)] = s;
        let inv = T::one() / s;
        for i in j + 1..n {
            l[(i, j)] *= inv;
        }
    }
    for j in 1..n {
        for i in 0..j {
            l[(i, j)] = T::zero();
        }
    }
    Some(l)
}

/// Cholesky of `base + nugget·I`, raising the nugget by ×10 until it
/// succeeds or exceeds `cap`. Returns the factor and the nugget used.
pub fn cholesky_jittered<T: Real>(base: &DMatrix<T>, nugget: T, floor: T, cap: T) -> Result<(DMatrix<T>, T)> {
    let mut tau = nugget;
    loop {
        let mut k = base.clone();
        for i in 0..k.nrows() {
            k[(i, i)] += tau;
        }
        if let Some(l) = cholesky(&k) {
            return Ok((l, tau));
        }
        let next = if tau > T::zero() { tau * T::c(10.0) } else { floor };
        if next > cap || !(next > T::zero()) {
            return Err(Error::Numerical(format!("Cholesky failed with nugget up to {:e}", tau.to_f64_lossy())));
        }
        tau = next;
    }
}

/// Solves `L x = b` in place.
pub fn forward_solve<T: Real>(l: &DMatrix<T>, b: &mut DVector<T>) {
    let n = l.nrows();
    for j in 0..n {
        let xj = b[j] / l[(j, j)];
        b[j] = xj;
        if xj != T::zero() {
            let col = l.column(j);
            for i in j + 1..n {
                b[i] -= col[i] * xj;
            }
        }
    }
}

/// Solves `Lᵀ x = b` in place.
pub fn backward_solve<T: Real>(l: &DMatrix<T>, b: &mut DVector<T>) {
    let n = l.nrows();
    for j in (0..n).rev() {
        let col = l.column(j);
        let mut s = b[j];
        for i in j + 1..n {
            s -= col[i] * b[i];
        }
        b[j] = s / l[(j, j)];
    }
}

/// `(L Lᵀ)⁻¹ b`.
pub fn chol_solve<T: Real>(l: &DMatrix<T>, b: &DVector<T>) -> DVector<T> {
    let mut x = b.clone();
    forward_solve(l, &mut x);
    backward_solve(l, &mut x);
    x
}

/// Inverse of a lower-triangular matrix. Blocks of the recursion
/// `[A 0; B C]⁻¹ = [A⁻¹ 0; −C⁻¹BA⁻¹ C⁻¹]` go through gemm.
pub fn lower_inverse<T: Real>(l: &DMatrix<T>) -> DMatrix<T> {
    let n = l.nrows();
    if n <= 64 {
        return lower_inverse_direct(l);
    }
    let h = n / 2;
    let ai = lower_inverse(&l.view((0, 0), (h, h)).into_owned());
    let ci = lower_inverse(&l.view((h, h), (n - h, n - h)).into_owned());
    let x = -(&ci * l.view((h, 0), (n - h, h))) * &ai;
    let mut out = DMatrix::<T>::zeros(n, n);
    out.view_mut((0, 0), (h, h)).copy_from(&ai);
    out.view_mut((h, h), (n - h, n - h)).copy_from(&ci);
    out.view_mut((h, 0), (n - h, h)).copy_from(&x);
    out
}

// Column-by-column forward substitution against unit vectors.
fn lower_inverse_direct<T: Real>(l: &DMatrix<T>) -> DMatrix<T> {
    let n = l.nrows();
    let mut li = DMatrix::<T>::zeros(n, n);
    let ls = l.as_slice();
    for (j, col) in li.as_mut_slice().chunks_exact_mut(n.max(1)).enumerate() {
        col[j] = T::one();
        for k in j..n {
            let xk = col[k] / ls[k * n + k];
            col[k] = xk;
            if xk != T::zero() {
                let lk = &ls[k * n + k + 1..(k + 1) * n];
                for (c, a) in col[k + 1..].iter_mut().zip(lk) {
                    *c -= *a * xk;
                }
            }
        }
    }
    li
}

/// `(L Lᵀ)⁻¹` from the factor.
pub fn chol_inverse<T: Real>(l: &DMatrix<T>) -> DMatrix<T> {
    let li = lower_inverse(l);
    let mut out = li.transpose() * &li;
    symmetrize(&mut out);
    out
}

/// `log det(L Lᵀ)`.
pub fn chol_logdet<T: Real>(l: &DMatrix<T>) -> T {
    T::c(2.0) * (0..l.nrows()).fold(T::zero(), |s, i| s + l[(i, i)].ln())
}

pub fn symmetrize<T: Real>(a: &mut DMatrix<T>) {
    let n = a.nrows();
    for i in 0..n {
        for j in i + 1..n {
            let v = (a[(i, j)] + a[(j, i)]) / T::c(2.0);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// Eigenvalues in descending order with matching unit eigenvectors. Each
/// eigenvector's largest-magnitude entry is made positive so the output is
/// reproducible.
pub fn sym_eig_desc<T: Real>(a: &DMatrix<T>) -> (DVector<T>, DMatrix<T>) {
    let mut s = a.clone();
    symmetrize(&mut s);
    let eig = nalgebra::SymmetricEigen::new(s);
    let n = a.nrows();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| {
        eig.eigenvalues[j].partial_cmp(&eig.eigenvalues[i]).unwrap_or(std::cmp::Ordering::Equal).then(i.cmp(&j))
    });
    let vals = DVector::from_iterator(n, idx.iter().map(|&i| eig.eigenvalues[i]));
    let mut vecs = DMatrix::<T>::zeros(n, n);
    for (c, &i) in idx.iter().enumerate() {
        let mut v = eig.eigenvectors.column(i).into_owned();
        let mut big = 0;
        for r in 1..n {
            if v[r].abs() > v[big].abs() {
                big = r;
            }
        }
        if v[big] < T::zero() {
            v = -v;
        }
        vecs.set_column(c, &v);
    }
    (vals, vecs)
}

/// Largest singular value.
pub fn spectral_norm<T: Real>(a: &DMatrix<T>) -> T {
    if a.nrows() == 0 || a.ncols() == 0 {
        return T::zero();
    }
    let svd = nalgebra::SVD::new(a.clone(), false, false);
    svd.singular_values.iter().fold(T::zero(), |m, &v| m.max(v))
}

/// Orthonormal basis of the complement of `range(u)` for `u` with
/// orthonormal columns, via the eigenvectors of `I − UUᵀ`.
pub fn orthonormal_complement<T: Real>(u: &DMatrix<T>) -> DMatrix<T> {
    let m = u.nrows();
    let r = u.ncols();
    let p = DMatrix::<T>::identity(m, m) - u * u.transpose();
    let (_, vecs) = sym_eig_desc(&p);
    vecs.columns(0, m - r).into_owned()
}

/// Projects a symmetric matrix onto the PSD cone by clipping eigenvalues.
pub fn clip_psd<T: Real>(a: &DMatrix<T>) -> DMatrix<T> {
    let (vals, vecs) = sym_eig_desc(a);
    if vals.iter().all(|&v| v >= T::zero()) {
        let mut s = a.clone();
        symmetrize(&mut s);
        return s;
    }
    let d = DMatrix::from_diagonal(&vals.map(|v| v.max(T::zero())));
    let mut out = &vecs * d * vecs.transpose();
    symmetrize(&mut out);
    out
}
