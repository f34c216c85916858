//! Small dense complex linear algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn hermitian_part(m: &CMat) -> CMat {
    (m + m.adjoint()) * c(0.5, 0.0)
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues ascending.
pub fn herm_eig(m: &CMat) -> (Vec<f64>, CMat) {
    let n = m.nrows();
    if n == 0 {
        return (Vec::new(), CMat::zeros(0, 0));
    }
    let eig = hermitian_part(m).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = CMat::zeros(n, n);
    for (col, &i) in order.iter().enumerate() {
        vecs.set_column(col, &eig.eigenvectors.column(i));
    }
    (vals, vecs)
}

pub fn min_eig(m: &CMat) -> f64 {
    herm_eig(m).0.first().copied().unwrap_or(f64::INFINITY)
}

/// Largest singular value.
pub fn op_norm(m: &CMat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

/// Entrywise ℓ¹ norm.
pub fn l1_norm(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm()).sum()
}

pub fn max_abs(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Generalized eigenvalues of the Hermitian-definite pencil `a x = λ b x`,
/// ascending, with eigenvectors normalized to `x* b x = 1`. Computed by
/// Cholesky whitening. `None` if `b` is not positive definite.
pub fn gen_eig(a: &CMat, b: &CMat) -> Option<(Vec<f64>, CMat)> {
    let n = b.nrows();
    let chol = hermitian_part(b).cholesky()?;
    let l = chol.l();
    let linv = l.clone().solve_lower_triangular(&CMat::identity(n, n))?;
    let w = &linv * hermitian_part(a) * linv.adjoint();
    let (vals, y) = herm_eig(&w);
    let x = linv.adjoint() * y;
    Some((vals, x))
}

/// Same pencil, whitened with the spectral decomposition of `b` instead of
/// its Cholesky factor. Used as an independent second route.
pub fn gen_eig_spectral(a: &CMat, b: &CMat) -> Option<(Vec<f64>, CMat)> {
    let (bv, bu) = herm_eig(b);
    if bv.first().copied().unwrap_or(1.0) <= 0.0 {
        return None;
    }
    let n = b.nrows();
    let mut w = bu.clone();
    for j in 0..n {
        let s = 1.0 / bv[j].sqrt();
        for i in 0..n {
            w[(i, j)] *= s;
        }
    }
    let m = w.adjoint() * hermitian_part(a) * &w;
    let (vals, y) = herm_eig(&m);
    Some((vals, w * y))
}

/// Largest generalized eigenvalue with its eigenvector.
pub fn gen_eig_max(a: &CMat, b: &CMat) -> Option<(f64, CVec)> {
    let (vals, x) = gen_eig(a, b)?;
    let n = vals.len();
    if n == 0 {
        return Some((1.0, CVec::zeros(0)));
    }
    Some((vals[n - 1], x.column(n - 1).into_owned()))
}

/// Rayleigh quotient `x* a x / x* b x`.
pub fn rayleigh(a: &CMat, b: &CMat, x: &CVec) -> f64 {
    let num = x.dotc(&(a * x)).re;
    let den = x.dotc(&(b * x)).re;
    num / den
}

/// Principal submatrix on the given indices.
pub fn submatrix(m: &CMat, idx: &[usize]) -> CMat {
    CMat::from_fn(idx.len(), idx.len(), |i, j| m[(idx[i], idx[j])])
}
