//! Hermitian eigen- and linear solvers used by the fiberwise Hodge theory.
//!
//! * [`lobpcg`]: block preconditioner-free LOBPCG for the smallest eigenpairs.
//! * [`dense_eigen`]: assembles the operator and diagonalises it (oracle and
//!   small-grid fallback).
//! * [`deflated_cg`]: conjugate gradients on the orthogonal complement of a
//!   given orthonormal subspace (the Green operator).
//!
//! Inner products here are Euclidean. Fiber inner products differ from the
//! Euclidean one by a positive constant, so orthogonality is unaffected.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMat};
use crate::C64;

/// Numerical knobs shared by the fiber solvers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    /// Eigenvalues at or below this are counted as kernel.
    pub zero_tol: f64,
    /// Required ratio between the first non-kernel and the last kernel eigenvalue.
    pub gap_ratio: f64,
    /// Number of smallest eigenpairs requested per harmonic-space computation.
    pub nev: usize,
    /// Extra block columns carried by LOBPCG beyond `nev`.
    pub guard: usize,
    /// Eigen-residual tolerance relative to the operator norm estimate.
    pub eig_tol: f64,
    pub eig_max_iter: usize,
    /// Relative residual tolerance of the Green solve.
    pub cg_tol: f64,
    /// Iteration cap of the Green solve; `None` means `10 N^2`.
    pub cg_max_iter: Option<usize>,
    /// Operators of at most this dimension are diagonalised densely.
    pub dense_max_dim: usize,
    /// Seed of the LOBPCG starting block.
    pub seed: u64,
    /// Strength `gamma` of the lattice-doubler penalty `gamma N^2 ((L_a/4)^p + (L_b/4)^p)`.
    pub penalty_strength: f64,
    /// Power `p` of the doubler penalty.
    pub penalty_power: u32,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            zero_tol: 3e-4,
            gap_ratio: 1e3,
            nev: 8,
            guard: 4,
            eig_tol: 1e-14,
            eig_max_iter: 20_000,
            cg_tol: 1e-10,
            cg_max_iter: None,
            dense_max_dim: 576,
            seed: 0x5EED,
            penalty_strength: 1.0,
            penalty_power: 8,
        }
    }
}

/// A Hermitian operator on `C^dim`.
pub trait HermitianOperator: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[C64], y: &mut [C64]);

    /// Hermitian positive definite approximate inverse, `z = T r`
    /// (overwrites `z`). The identity unless an implementation knows better.
    fn precondition(&self, r: &[C64], z: &mut [C64]) {
        z.copy_from_slice(r);
    }
}

/// Eigenvalues (ascending) with Euclidean-orthonormal eigenvectors.
#[derive(Clone, Debug)]
pub struct EigenPairs {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<C64>>,
    /// Largest eigen-residual norm among the returned pairs.
    pub max_residual: f64,
}

fn apply_block<O: HermitianOperator + ?Sized>(op: &O, x: &CMat) -> CMat {
    let n = op.dim();
    let data = x.as_slice();
    let cols: Vec<Vec<C64>> = (0..x.ncols())
        .into_par_iter()
        .map(|j| {
            let mut y = vec![C64::new(0.0, 0.0); n];
            op.apply(&data[j * n..(j + 1) * n], &mut y);
            y
        })
        .collect();
    CMat::from_vec(n, x.ncols(), cols.concat())
}

fn column(m: &CMat, j: usize) -> &[C64] {
    let n = m.nrows();
    &m.as_slice()[j * n..(j + 1) * n]
}

/// Orthonormalises the columns of `y` against the orthonormal columns of
/// `basis` and each other, dropping numerically dependent columns.
fn orthonormalize(basis: Option<&CMat>, y: &CMat) -> CMat {
    let n = y.nrows();
    let mut kept: Vec<Vec<C64>> = Vec::new();
    for j in 0..y.ncols() {
        let mut v = column(y, j).to_vec();
        let original = linalg::norm_sqr(&v).sqrt();
        if original == 0.0 {
            continue;
        }
        for _pass in 0..2 {
            if let Some(b) = basis {
                for i in 0..b.ncols() {
                    let q = column(b, i);
                    let c = linalg::dot(&v, q);
                    linalg::axpy(-c, q, &mut v);
                }
            }
            for q in &kept {
                let c = linalg::dot(&v, q);
                linalg::axpy(-c, q, &mut v);
            }
        }
        let norm = linalg::norm_sqr(&v).sqrt();
        if norm > 1e-10 * original {
            linalg::scale(C64::new(1.0 / norm, 0.0), &mut v);
            kept.push(v);
        }
    }
    CMat::from_vec(n, kept.len(), kept.concat())
}

fn precondition_block<O: HermitianOperator + ?Sized>(op: &O, residual: &CMat, active: &[usize]) -> CMat {
    let n = residual.nrows();
    let cols: Vec<Vec<C64>> = active
        .par_iter()
        .map(|&j| {
            let mut z = vec![C64::new(0.0, 0.0); n];
            op.precondition(column(residual, j), &mut z);
            z
        })
        .collect();
    CMat::from_vec(n, active.len(), cols.concat())
}

fn hstack(a: &CMat, b: &CMat) -> CMat {
    let n = a.nrows();
    let mut data = Vec::with_capacity(n * (a.ncols() + b.ncols()));
    data.extend_from_slice(a.as_slice());
    data.extend_from_slice(b.as_slice());
    CMat::from_vec(n, a.ncols() + b.ncols(), data)
}

fn rayleigh_ritz(s: &CMat, as_: &CMat, keep: usize) -> (Vec<f64>, CMat) {
    let g = s.adjoint() * as_;
    let (values, vectors) = linalg::hermitian_eigen(&g);
    let keep = keep.min(values.len());
    (values[..keep].to_vec(), vectors.columns(0, keep).into_owned())
}

/// Norm estimate by power iteration from a fixed start vector.
pub fn norm_estimate<O: HermitianOperator + ?Sized>(op: &O, steps: usize) -> f64 {
    let n = op.dim();
    let mut x: Vec<C64> = (0..n).map(|i| C64::new(1.0 + ((i * 7919) % 13) as f64, ((i * 104729) % 11) as f64)).collect();
    let mut y = vec![C64::new(0.0, 0.0); n];
    let mut est = 0.0;
    for _ in 0..steps {
        let nx = linalg::norm_sqr(&x).sqrt();
        linalg::scale(C64::new(1.0 / nx, 0.0), &mut x);
        y.iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
        op.apply(&x, &mut y);
        est = linalg::norm_sqr(&y).sqrt();
        std::mem::swap(&mut x, &mut y);
    }
    // Power iteration approaches the norm from below.
    1.05 * est
}

/// Smallest `nev` eigenpairs by block LOBPCG with soft locking.
pub fn lobpcg<O: HermitianOperator + ?Sized>(op: &O, nev: usize, opts: &SolverOptions) -> Result<EigenPairs> {
    let n = op.dim();
    let nev = nev.min(n);
    let b = (nev + opts.guard).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let init = CMat::from_fn(n, b, |_, _| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5));
    let mut x = orthonormalize(None, &init);
    if x.ncols() < b {
        return Err(Error::Solver("degenerate LOBPCG starting block".into()));
    }
    let scale = norm_estimate(op, 30);
    let tol = opts.eig_tol.max(f64::EPSILON) * scale;
    let mut ax = apply_block(op, &x);
    let (mut lambda, c) = rayleigh_ritz(&x, &ax, b);
    x = &x * &c;
    ax = &ax * &c;
    let mut p: Option<CMat> = None;
    let mut last_max = f64::INFINITY;
    for it in 0..opts.eig_max_iter {
        if it > 0 && it % 25 == 0 {
            // Refresh to contain drift of the implicitly updated products.
            x = orthonormalize(None, &x);
            ax = apply_block(op, &x);
            let (l, c) = rayleigh_ritz(&x, &ax, b);
            lambda = l;
            x = &x * &c;
            ax = &ax * &c;
        }
        let mut residual = ax.clone();
        for j in 0..b {
            let lj = C64::new(lambda[j], 0.0);
            let xj = column(&x, j).to_vec();
            let rj = &mut residual.as_mut_slice()[j * n..(j + 1) * n];
            linalg::axpy(-lj, &xj, rj);
        }
        let norms: Vec<f64> = (0..b).map(|j| linalg::norm_sqr(column(&residual, j)).sqrt()).collect();
        last_max = norms[..nev].iter().cloned().fold(0.0, f64::max);
        if last_max <= tol {
            // Confirm with freshly applied products.
            let ax_fresh = apply_block(op, &x);
            let max_fresh = (0..nev)
                .map(|j| {
                    let mut r = column(&ax_fresh, j).to_vec();
                    linalg::axpy(C64::new(-lambda[j], 0.0), column(&x, j), &mut r);
                    linalg::norm_sqr(&r).sqrt()
                })
                .fold(0.0, f64::max);
            if max_fresh <= 2.0 * tol {
                return Ok(EigenPairs {
                    values: lambda[..nev].to_vec(),
                    vectors: (0..nev).map(|j| column(&x, j).to_vec()).collect(),
                    max_residual: max_fresh,
                });
            }
            ax = ax_fresh;
            continue;
        }
        let active: Vec<usize> = (0..b).filter(|&j| norms[j] > tol).collect();
        let w = precondition_block(op, &residual, &active);
        let dirs = match &p {
            Some(pm) => hstack(&w, pm),
            None => w,
        };
        let s_new = orthonormalize(Some(&x), &dirs);
        if s_new.ncols() == 0 {
            break;
        }
        let as_new = apply_block(op, &s_new);
        let s = hstack(&x, &s_new);
        let as_ = hstack(&ax, &as_new);
        let (l, c) = rayleigh_ritz(&s, &as_, b);
        let c_top = c.rows(0, b).into_owned();
        let c_low = c.rows(b, s_new.ncols()).into_owned();
        p = Some(&s_new * &c_low);
        x = &x * &c_top + &s_new * &c_low;
        ax = &ax * &c_top + &as_new * &c_low;
        lambda = l;
    }
    Err(Error::Solver(format!(
        "LOBPCG did not reach eigen-residual {tol:.3e} after {} iterations (last {last_max:.3e})",
        opts.eig_max_iter
    )))
}

/// Assembles the operator densely and returns its `count` smallest eigenpairs.
pub fn dense_eigen<O: HermitianOperator + ?Sized>(op: &O, count: usize) -> EigenPairs {
    let n = op.dim();
    let cols: Vec<Vec<C64>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let mut e = vec![C64::new(0.0, 0.0); n];
            e[j] = C64::new(1.0, 0.0);
            let mut y = vec![C64::new(0.0, 0.0); n];
            op.apply(&e, &mut y);
            y
        })
        .collect();
    let m = CMat::from_vec(n, n, cols.concat());
    let (values, vectors) = linalg::hermitian_eigen(&m);
    let count = count.min(n);
    let vecs: Vec<Vec<C64>> = (0..count).map(|j| column(&vectors, j).to_vec()).collect();
    let max_residual = vecs
        .iter()
        .zip(&values)
        .map(|(v, &l)| {
            let mut y = vec![C64::new(0.0, 0.0); n];
            op.apply(v, &mut y);
            linalg::axpy(C64::new(-l, 0.0), v, &mut y);
            linalg::norm_sqr(&y).sqrt()
        })
        .fold(0.0, f64::max);
    EigenPairs { values: values[..count].to_vec(), vectors: vecs, max_residual }
}

/// Smallest eigenpairs: dense for small operators, LOBPCG otherwise.
pub fn smallest_eigenpairs<O: HermitianOperator + ?Sized>(op: &O, nev: usize, opts: &SolverOptions) -> Result<EigenPairs> {
    if op.dim() <= opts.dense_max_dim {
        Ok(dense_eigen(op, nev))
    } else {
        lobpcg(op, nev, opts)
    }
}

fn project_out(v: &mut [C64], deflation: &[Vec<C64>]) {
    for _pass in 0..2 {
        for q in deflation {
            let c = linalg::dot(v, q);
            linalg::axpy(-c, q, v);
        }
    }
}

/// Outcome of a Green solve.
#[derive(Clone, Debug)]
pub struct CgOutcome {
    pub solution: Vec<C64>,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Solves `A x = P b`, `x` orthogonal to `deflation`, where `P` projects onto
/// the orthogonal complement of the (Euclidean-orthonormal) deflation vectors.
pub fn deflated_cg<O: HermitianOperator + ?Sized>(
    op: &O,
    b: &[C64],
    deflation: &[Vec<C64>],
    tol: f64,
    max_iter: usize,
) -> Result<CgOutcome> {
    let n = op.dim();
    if b.len() != n {
        return Err(Error::ShapeMismatch(format!("right-hand side has {} entries, operator {n}", b.len())));
    }
    let mut rhs = b.to_vec();
    project_out(&mut rhs, deflation);
    let rhs_norm = linalg::norm_sqr(&rhs).sqrt();
    let zero = C64::new(0.0, 0.0);
    if rhs_norm == 0.0 {
        return Ok(CgOutcome { solution: vec![zero; n], iterations: 0, relative_residual: 0.0 });
    }
    let mut x = vec![zero; n];
    let mut r = rhs.clone();
    let mut z = vec![zero; n];
    let precondition = |r: &[C64], z: &mut [C64]| {
        op.precondition(r, z);
        project_out(z, deflation);
    };
    precondition(&r, &mut z);
    let mut p = z.clone();
    let mut ap = vec![zero; n];
    let mut rz = linalg::dot(&r, &z).re;
    let mut rs = linalg::norm_sqr(&r);
    let target = tol * rhs_norm;
    let mut iterations = 0;
    let mut restarts = 0;
    loop {
        while iterations < max_iter && rs.sqrt() > target {
            ap.iter_mut().for_each(|v| *v = zero);
            op.apply(&p, &mut ap);
            project_out(&mut ap, deflation);
            let pap = linalg::dot(&p, &ap).re;
            if pap <= 0.0 {
                return Err(Error::Solver(format!("non-positive curvature p^H A p = {pap:.3e} in Green solve")));
            }
            let alpha = rz / pap;
            linalg::axpy(C64::new(alpha, 0.0), &p, &mut x);
            linalg::axpy(C64::new(-alpha, 0.0), &ap, &mut r);
            rs = linalg::norm_sqr(&r);
            precondition(&r, &mut z);
            let rz_new = linalg::dot(&r, &z).re;
            let beta = rz_new / rz;
            rz = rz_new;
            for (pi, zi) in p.iter_mut().zip(&z) {
                *pi = zi + *pi * beta;
            }
            iterations += 1;
        }
        project_out(&mut x, deflation);
        // True residual check guards against drift of the recursive residual.
        let mut ax = vec![zero; n];
        op.apply(&x, &mut ax);
        project_out(&mut ax, deflation);
        r = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
        rs = linalg::norm_sqr(&r);
        let rel = rs.sqrt() / rhs_norm;
        if rel <= tol {
            return Ok(CgOutcome { solution: x, iterations, relative_residual: rel });
        }
        if iterations >= max_iter || restarts >= 5 {
            return Err(Error::Solver(format!(
                "Green solve reached relative residual {rel:.3e} after {iterations} iterations (target {tol:.1e})"
            )));
        }
        restarts += 1;
        precondition(&r, &mut z);
        rz = linalg::dot(&r, &z).re;
        p = z.clone();
    }
}
