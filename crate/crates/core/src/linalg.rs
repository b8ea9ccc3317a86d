//! Small dense linear-algebra helpers and order-independent reductions.
//!
//! All long reductions go through pairwise summation so that results do not
//! depend on how work is split across threads.

use nalgebra::DMatrix;

use crate::C64;

/// Dense complex matrix.
pub type CMat = DMatrix<C64>;

const PAIRWISE_BLOCK: usize = 32;

fn pairwise<T, F>(lo: usize, hi: usize, f: &F) -> T
where
    T: std::ops::Add<Output = T> + Default,
    F: Fn(usize) -> T,
{
    if hi - lo <= PAIRWISE_BLOCK {
        let mut acc = T::default();
        for i in lo..hi {
            acc = acc + f(i);
        }
        acc
    } else {
        let mid = lo + (hi - lo) / 2;
        pairwise(lo, mid, f) + pairwise(mid, hi, f)
    }
}

/// Pairwise sum of `f(i)` for `i` in `0..n`.
pub fn sum_by<T, F>(n: usize, f: F) -> T
where
    T: std::ops::Add<Output = T> + Default,
    F: Fn(usize) -> T,
{
    pairwise(0, n, &f)
}

/// Pairwise sum of a complex slice.
pub fn sum(values: &[C64]) -> C64 {
    sum_by(values.len(), |i| values[i])
}

/// Euclidean sesquilinear product `sum x_i conj(y_i)`.
pub fn dot(x: &[C64], y: &[C64]) -> C64 {
    debug_assert_eq!(x.len(), y.len());
    sum_by(x.len(), |i| x[i] * y[i].conj())
}

/// Euclidean bilinear product `sum x_i y_i`.
pub fn dot_bilinear(x: &[C64], y: &[C64]) -> C64 {
    debug_assert_eq!(x.len(), y.len());
    sum_by(x.len(), |i| x[i] * y[i])
}

/// Squared Euclidean norm.
pub fn norm_sqr(x: &[C64]) -> f64 {
    sum_by(x.len(), |i| x[i].norm_sqr())
}

/// `y += a * x`.
pub fn axpy(a: C64, x: &[C64], y: &mut [C64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// `x *= a`.
pub fn scale(a: C64, x: &mut [C64]) {
    for xi in x.iter_mut() {
        *xi *= a;
    }
}

/// Maximum absolute entry of a matrix.
pub fn max_abs(m: &CMat) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

/// Frobenius norm of `m - m^H`.
pub fn hermitian_defect(m: &CMat) -> f64 {
    (m - m.adjoint()).norm()
}

/// Eigen-decomposition of a Hermitian matrix with eigenvalues sorted ascending.
pub fn hermitian_eigen(m: &CMat) -> (Vec<f64>, CMat) {
    let n = m.nrows();
    let sym = (m + m.adjoint()) * C64::new(0.5, 0.0);
    let eig = nalgebra::SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = CMat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// `m^{-1/2}` for a Hermitian positive definite matrix.
pub fn inv_sqrt_hermitian(m: &CMat) -> Option<CMat> {
    let (values, vectors) = hermitian_eigen(m);
    if values.iter().any(|&v| v <= 0.0) {
        return None;
    }
    let d = CMat::from_diagonal(&nalgebra::DVector::from_iterator(
        values.len(),
        values.iter().map(|v| C64::new(1.0 / v.sqrt(), 0.0)),
    ));
    Some(&vectors * d * vectors.adjoint())
}

/// Singular values sorted descending.
pub fn singular_values(m: &CMat) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let svd = m.clone().svd(false, false);
    let mut s: Vec<f64> = svd.singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// 2-norm condition number; infinite for singular or empty matrices.
pub fn condition_number(m: &CMat) -> f64 {
    let s = singular_values(m);
    match (s.first(), s.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        _ => f64::INFINITY,
    }
}

/// Inverse via LU, `None` when singular.
pub fn inverse(m: &CMat) -> Option<CMat> {
    m.clone().try_inverse()
}

/// Determinant.
pub fn determinant(m: &CMat) -> C64 {
    m.clone().determinant()
}
