//! The discrete Dolbeault complex of one fiber `X x {s}`.
//!
//! Bundle-valued fields are stored in the unitary frame
//! `psi = u exp(-w/2) exp(i chi)`, `chi = pi d Re(tau) b^2`, where `u` is the
//! holomorphic-frame representative. In this frame the wrap rule is
//! [`WrapRule::Landau`] (unit-modulus multipliers), the pointwise metric is
//! `exp(-phi(s))`, and the Cauchy-Riemann operator reads
//!
//! `D psi = d/dzbar psi + (pi d b tau / t + alpha(s)) psi`.
//!
//! The `(0,1)`-form norm uses `|dzbar|^2 = 1`. The adjoint `D^*` is the exact
//! conjugate transpose of the assembled stencil, so all discrete
//! integration-by-parts identities hold to rounding.
//!
//! A centered first-derivative stencil annihilates the highest lattice
//! frequency, which would double the discrete kernel. The Laplacians therefore
//! carry the penalty `W = gamma N^2 ((L_a/4)^p + (L_b/4)^p)`, with `L` the
//! twisted lattice second difference. `W` is of size `gamma N^2` on doubler
//! modes and `O(N^{2 - 2p})` on smooth ones.

use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use faer::complex_native::c64;
use faer::prelude::SpSolver;
use faer::sparse::linalg::solvers::Cholesky;
use faer::sparse::SparseColMat;
use faer::Side;
use nalgebra_sparse::{CooMatrix, CsrMatrix};

use crate::error::{Error, Result};
use crate::family::FamilySpec;
use crate::fields::{EndField, Field, FormKind};
use crate::grid::{dzbar_coefficients, Shifter, TorusGrid, WrapRule};
use crate::linalg;
use crate::solver::{self, EigenPairs, HermitianOperator, SolverOptions};
use crate::C64;

/// One fiber of the family, or a synthetic twisted bundle of any rank.
#[derive(Clone, Debug)]
pub struct Fiber {
    grid: TorusGrid,
    degree: i64,
    alpha: C64,
    phi: f64,
    rank: usize,
    options: SolverOptions,
    ops: Arc<OnceLock<FiberOps>>,
}

/// Shift of the factored operator `laplacian + shift` used as the
/// preconditioner of the eigen and Green solvers.
const PRECONDITIONER_SHIFT: f64 = 1.0;

/// Assembled scalar operators of a fiber, shared by all components.
struct FiberOps {
    d: CsrMatrix<C64>,
    d_adjoint: CsrMatrix<C64>,
    laplacian_sections: CsrMatrix<C64>,
    laplacian_forms: CsrMatrix<C64>,
    inverse_sections: OnceLock<Option<ShiftedInverse>>,
    inverse_forms: OnceLock<Option<ShiftedInverse>>,
}

impl std::fmt::Debug for FiberOps {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FiberOps").field("nnz_d", &self.d.nnz()).finish_non_exhaustive()
    }
}

/// Sparse Cholesky factor of `laplacian + shift`.
struct ShiftedInverse {
    factor: Cholesky<usize, c64>,
    n: usize,
}

impl ShiftedInverse {
    fn new(m: &CsrMatrix<C64>, shift: f64) -> Option<Self> {
        let n = m.nrows();
        let (offsets, cols, vals) = m.csr_data();
        let mut triplets = Vec::with_capacity(vals.len() / 2 + n);
        for i in 0..n {
            for p in offsets[i]..offsets[i + 1] {
                let j = cols[p];
                if i >= j {
                    let v = if i == j { vals[p] + shift } else { vals[p] };
                    triplets.push((i, j, c64::new(v.re, v.im)));
                }
            }
        }
        let a = SparseColMat::<usize, c64>::try_new_from_triplets(n, n, &triplets).ok()?;
        let factor = a.as_ref().sp_cholesky(Side::Lower).ok()?;
        Some(Self { factor, n })
    }

    fn solve(&self, r: &[C64], z: &mut [C64]) {
        let mut buf: Vec<c64> = r.iter().map(|v| c64::new(v.re, v.im)).collect();
        self.factor.solve_in_place(faer::mat::from_column_major_slice_mut(&mut buf, self.n, 1));
        for (o, v) in z.iter_mut().zip(buf) {
            *o = C64::new(v.re, v.im);
        }
    }
}

fn conjugate_transpose(m: &CsrMatrix<C64>) -> CsrMatrix<C64> {
    let mut t = m.transpose();
    t.values_mut().iter_mut().for_each(|v| *v = v.conj());
    t
}

fn spmv(m: &CsrMatrix<C64>, x: &[C64], out: &mut [C64]) {
    let (offsets, cols, vals) = m.csr_data();
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = C64::new(0.0, 0.0);
        for p in offsets[i]..offsets[i + 1] {
            acc += vals[p] * x[cols[p]];
        }
        *o += acc;
    }
}

impl FiberOps {
    fn assemble(grid: &TorusGrid, degree: i64, alpha: C64, options: &SolverOptions) -> Self {
        let n = grid.len();
        let wrap = WrapRule::Landau { degree };
        let shifter = Shifter::new(grid, &wrap, grid.stencil_order().radius().max(1));
        let side = grid.n_side() as f64;
        let (ca, cb) = dzbar_coefficients(grid.tau());
        let tau = grid.tau();
        let t = grid.t();

        let mut coo = CooMatrix::new(n, n);
        for &(o, w) in grid.stencil_order().coefficients() {
            for (along_a, c) in [(true, ca), (false, cb)] {
                let (src, factor) = shifter.shift_entries(along_a, o);
                for (i, (&j, &f)) in src.iter().zip(factor).enumerate() {
                    coo.push(i, j, c * (w * side) * f);
                }
            }
        }
        for i in 0..n {
            let (_, b) = grid.ab(i);
            coo.push(i, i, tau * (PI * degree as f64 * b / t) + alpha);
        }
        let d = CsrMatrix::from(&coo);
        let d_adjoint = conjugate_transpose(&d);

        let mut laplacian_sections = &d_adjoint * &d;
        let mut laplacian_forms = &d * &d_adjoint;
        let gamma = options.penalty_strength;
        if gamma != 0.0 && options.penalty_power > 0 {
            let scale = C64::new(gamma * side * side, 0.0);
            for along_a in [true, false] {
                let mut quarter = CooMatrix::new(n, n);
                let (src, factor) = shifter.shift_entries(along_a, 1);
                for (i, (&j, &f)) in src.iter().zip(factor).enumerate() {
                    quarter.push(i, i, C64::new(0.5, 0.0));
                    quarter.push(i, j, f * -0.25);
                    quarter.push(j, i, f.conj() * -0.25);
                }
                let quarter = CsrMatrix::from(&quarter);
                let mut power = quarter.clone();
                for _ in 1..options.penalty_power {
                    power = &power * &quarter;
                }
                let penalty = power * scale;
                laplacian_sections = &laplacian_sections + &penalty;
                laplacian_forms = &laplacian_forms + &penalty;
            }
        }
        Self {
            d,
            d_adjoint,
            laplacian_sections,
            laplacian_forms,
            inverse_sections: OnceLock::new(),
            inverse_forms: OnceLock::new(),
        }
    }

    fn shifted_inverse(&self, kind: FormKind) -> Option<&ShiftedInverse> {
        match kind {
            FormKind::Section => self
                .inverse_sections
                .get_or_init(|| ShiftedInverse::new(&self.laplacian_sections, PRECONDITIONER_SHIFT)),
            FormKind::Form01 => {
                self.inverse_forms.get_or_init(|| ShiftedInverse::new(&self.laplacian_forms, PRECONDITIONER_SHIFT))
            }
        }
        .as_ref()
    }
}

impl Fiber {
    /// Fiber of `spec` over the base point `s`.
    pub fn new(spec: &FamilySpec, s: &[C64], options: &SolverOptions) -> Result<Self> {
        spec.check_point(s)?;
        Ok(Self::synthetic(spec.grid(), spec.degree(), spec.alpha(s), spec.phi(s), 1, options))
    }

    /// Degree-`degree` bundle of the given rank (componentwise direct sum),
    /// twisted by the constant `alpha`, with metric weight `exp(-phi)`.
    pub fn synthetic(grid: &TorusGrid, degree: i64, alpha: C64, phi: f64, rank: usize, options: &SolverOptions) -> Self {
        Self {
            grid: grid.clone(),
            degree,
            alpha,
            phi,
            rank: rank.max(1),
            options: options.clone(),
            ops: Arc::new(OnceLock::new()),
        }
    }

    /// The untwisted fiber carrying `End(F)` for a rank-`rank` bundle:
    /// degree 0, no twist, trivial metric.
    pub fn endomorphism(grid: &TorusGrid, rank: usize, options: &SolverOptions) -> Self {
        Self::synthetic(grid, 0, C64::new(0.0, 0.0), 0.0, rank * rank, options)
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn degree(&self) -> i64 {
        self.degree
    }

    pub fn alpha(&self) -> C64 {
        self.alpha
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn options(&self) -> &SolverOptions {
        &self.options
    }

    /// Wrap rule of the stored (unitary-frame) values.
    pub fn wrap(&self) -> WrapRule {
        WrapRule::Landau { degree: self.degree }
    }

    /// Constant density of the fiber inner product per grid point.
    pub fn weight(&self) -> f64 {
        (-self.phi).exp() * self.grid.weight()
    }

    /// Zero field of the given kind on this fiber.
    pub fn zeros(&self, kind: FormKind) -> Field {
        Field::zeros(kind, self.rank, self.grid.len())
    }

    /// Field from unitary-frame values.
    pub fn field(&self, kind: FormKind, values: Vec<C64>) -> Result<Field> {
        if values.len() != self.rank * self.grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} values, got {}",
                self.rank * self.grid.len(),
                values.len()
            )));
        }
        Field::new(kind, self.rank, values)
    }

    /// Factor `exp(-i pi d tau b^2)` converting unitary-frame values to the
    /// holomorphic frame at grid index `idx`.
    pub fn frame_factor(&self, idx: usize) -> C64 {
        let (_, b) = self.grid.ab(idx);
        (self.grid.tau() * C64::new(0.0, -PI * self.degree as f64 * b * b)).exp()
    }

    /// Holomorphic-frame values (wrap rule [`WrapRule::Theta`]).
    pub fn to_holomorphic_frame(&self, x: &Field) -> Vec<C64> {
        let n = self.grid.len();
        x.values().iter().enumerate().map(|(i, v)| v * self.frame_factor(i % n)).collect()
    }

    /// Inverse of [`Fiber::to_holomorphic_frame`].
    pub fn from_holomorphic_frame(&self, kind: FormKind, u: &[C64]) -> Result<Field> {
        let n = self.grid.len();
        let values = u.iter().enumerate().map(|(i, v)| v / self.frame_factor(i % n)).collect();
        self.field(kind, values)
    }

    fn check(&self, x: &Field) -> Result<()> {
        if x.rank() != self.rank || x.values().len() != self.rank * self.grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "field of rank {} with {} values on a rank-{} fiber of {} points",
                x.rank(),
                x.values().len(),
                self.rank,
                self.grid.len()
            )));
        }
        Ok(())
    }

    fn ops(&self) -> &FiberOps {
        self.ops.get_or_init(|| FiberOps::assemble(&self.grid, self.degree, self.alpha, &self.options))
    }

    fn apply_d(&self, x: &[C64], out: &mut [C64]) {
        spmv(&self.ops().d, x, out);
    }

    fn apply_d_adjoint(&self, y: &[C64], out: &mut [C64]) {
        spmv(&self.ops().d_adjoint, y, out);
    }

    fn apply_laplacian(&self, kind: FormKind, x: &[C64], out: &mut [C64]) {
        let ops = self.ops();
        match kind {
            FormKind::Section => spmv(&ops.laplacian_sections, x, out),
            FormKind::Form01 => spmv(&ops.laplacian_forms, x, out),
        }
    }

    fn componentwise<F: Fn(&[C64], &mut [C64])>(&self, x: &Field, kind: FormKind, f: F) -> Field {
        let mut out = Field::zeros(kind, self.rank, self.grid.len());
        for c in 0..self.rank {
            f(x.component(c), out.component_mut(c));
        }
        out
    }

    /// `dbar` on sections: `(0,0) -> (0,1)`.
    pub fn dbar(&self, u: &Field) -> Result<Field> {
        self.check(u)?;
        if u.kind() != FormKind::Section {
            return Err(Error::KindMismatch("dbar expects a section; (0,2)-forms vanish on a curve".into()));
        }
        Ok(self.componentwise(u, FormKind::Form01, |x, o| self.apply_d(x, o)))
    }

    /// Exact discrete adjoint of [`Fiber::dbar`]: `(0,1) -> (0,0)`.
    pub fn dbar_star(&self, xi: &Field) -> Result<Field> {
        self.check(xi)?;
        if xi.kind() != FormKind::Form01 {
            return Err(Error::KindMismatch("dbar_star expects a (0,1)-form".into()));
        }
        Ok(self.componentwise(xi, FormKind::Section, |x, o| self.apply_d_adjoint(x, o)))
    }

    /// Hodge Laplacian including the doubler penalty.
    pub fn laplacian(&self, x: &Field) -> Result<Field> {
        self.check(x)?;
        let kind = x.kind();
        Ok(self.componentwise(x, kind, |v, o| self.apply_laplacian(kind, v, o)))
    }

    /// Fiber `L^2` inner product, conjugate-linear in the second slot.
    pub fn inner(&self, x: &Field, y: &Field) -> Result<C64> {
        self.check(x)?;
        x.same_shape(y)?;
        Ok(linalg::dot(x.values(), y.values()) * self.weight())
    }

    pub fn norm(&self, x: &Field) -> Result<f64> {
        Ok(self.inner(x, x)?.re.max(0.0).sqrt())
    }

    /// Complex-bilinear pairing `int u v dz ^ dzbar`-style used for Serre
    /// duality between this fiber's `(0,1)`-forms and sections of the dual
    /// fiber; metric-free (quadrature weight only).
    pub fn serre_pairing(&self, v: &Field, eta: &Field) -> Result<C64> {
        if v.values().len() != eta.values().len() {
            return Err(Error::ShapeMismatch("pairing operands differ in size".into()));
        }
        Ok(linalg::dot_bilinear(v.values(), eta.values()) * self.grid.weight())
    }

    /// Laplacian of the given kind as a Euclidean Hermitian operator.
    pub fn operator(&self, kind: FormKind) -> LaplacianOperator<'_> {
        LaplacianOperator { fiber: self, kind }
    }

    /// Smallest `count` eigenpairs of the Laplacian of the given kind.
    pub fn spectrum(&self, kind: FormKind, count: usize) -> Result<EigenPairs> {
        solver::smallest_eigenpairs(&self.operator(kind), count, &self.options)
    }

    /// Orthonormal basis of the numerical kernel of the Laplacian.
    pub fn harmonic_basis(&self, kind: FormKind) -> Result<HarmonicBasis> {
        let op = self.operator(kind);
        let dim = op.dim();
        let mut nev = self.options.nev.max(1).min(dim);
        loop {
            let pairs = solver::smallest_eigenpairs(&op, nev, &self.options)?;
            let k = pairs.values.iter().filter(|&&v| v <= self.options.zero_tol).count();
            if k == pairs.values.len() && nev < dim {
                nev = (2 * nev).min(dim);
                continue;
            }
            if k > 0 && k < pairs.values.len() {
                let ratio = pairs.values[k] / pairs.values[k - 1].abs().max(f64::MIN_POSITIVE);
                if ratio < self.options.gap_ratio {
                    return Err(Error::NotLocallyFree(format!(
                        "no spectral gap after {k} small eigenvalues (ratio {ratio:.3e})"
                    )));
                }
            }
            let mut order: Vec<usize> = (0..k).collect();
            let mag = |j: usize| pairs.vectors[j][0].norm();
            order.sort_by(|&a, &b| mag(b).total_cmp(&mag(a)).then(a.cmp(&b)));
            let mut vectors: Vec<Field> = Vec::with_capacity(k);
            for j in order {
                let mut v = self.field(kind, pairs.vectors[j].clone())?;
                for _pass in 0..2 {
                    for q in &vectors {
                        let c = self.inner(&v, q)?;
                        v = v.plus_scaled(-c, q)?;
                    }
                }
                let nv = self.norm(&v)?;
                vectors.push(v.scaled(C64::new(1.0 / nv, 0.0)));
            }
            return Ok(HarmonicBasis { kind, vectors, spectrum: pairs.values, max_residual: pairs.max_residual });
        }
    }

    /// Orthogonal projection onto the span of `basis`.
    pub fn project(&self, basis: &HarmonicBasis, v: &Field) -> Result<Field> {
        self.check(v)?;
        if v.kind() != basis.kind {
            return Err(Error::KindMismatch(format!("{:?} field against {:?} basis", v.kind(), basis.kind)));
        }
        let mut out = self.zeros(v.kind());
        for b in &basis.vectors {
            let c = self.inner(v, b)?;
            out = out.plus_scaled(c, b)?;
        }
        Ok(out)
    }

    /// Green operator: `laplacian(G v) = v - H v`, `H G v = 0`.
    pub fn green(&self, basis: &HarmonicBasis, v: &Field) -> Result<Field> {
        self.check(v)?;
        if v.kind() != basis.kind {
            return Err(Error::KindMismatch(format!("{:?} field against {:?} basis", v.kind(), basis.kind)));
        }
        let scale = C64::new(self.weight().sqrt(), 0.0);
        let deflation: Vec<Vec<C64>> = basis.vectors.iter().map(|b| b.values().iter().map(|x| x * scale).collect()).collect();
        let max_iter = self.options.cg_max_iter.unwrap_or(10 * self.grid.len());
        let out = solver::deflated_cg(&self.operator(v.kind()), v.values(), &deflation, self.options.cg_tol, max_iter)?;
        self.field(v.kind(), out.solution)
    }

    /// Green operator on endomorphism-valued data (this fiber must be the
    /// endomorphism fiber of matching rank).
    pub fn green_end(&self, basis: &HarmonicBasis, a: &EndField) -> Result<EndField> {
        if a.is_zero() {
            return Ok(a.clone());
        }
        EndField::from_field(&self.green(basis, &a.as_field())?)
    }

    /// Harmonic projection of endomorphism-valued data.
    pub fn project_end(&self, basis: &HarmonicBasis, a: &EndField) -> Result<EndField> {
        EndField::from_field(&self.project(basis, &a.as_field())?)
    }
}

/// Laplacian of one form degree, viewed as a Euclidean Hermitian operator.
pub struct LaplacianOperator<'a> {
    fiber: &'a Fiber,
    kind: FormKind,
}

impl HermitianOperator for LaplacianOperator<'_> {
    fn dim(&self) -> usize {
        self.fiber.rank * self.fiber.grid.len()
    }

    fn apply(&self, x: &[C64], y: &mut [C64]) {
        let n = self.fiber.grid.len();
        for c in 0..self.fiber.rank {
            self.fiber.apply_laplacian(self.kind, &x[c * n..(c + 1) * n], &mut y[c * n..(c + 1) * n]);
        }
    }

    fn precondition(&self, r: &[C64], z: &mut [C64]) {
        let n = self.fiber.grid.len();
        match self.fiber.ops().shifted_inverse(self.kind) {
            Some(inv) => {
                for c in 0..self.fiber.rank {
                    inv.solve(&r[c * n..(c + 1) * n], &mut z[c * n..(c + 1) * n]);
                }
            }
            None => z.copy_from_slice(r),
        }
    }
}

/// Orthonormal harmonic basis with the spectrum it was extracted from.
#[derive(Clone, Debug)]
pub struct HarmonicBasis {
    pub kind: FormKind,
    pub vectors: Vec<Field>,
    /// Smallest computed eigenvalues of the Laplacian, ascending.
    pub spectrum: Vec<f64>,
    pub max_residual: f64,
}

impl HarmonicBasis {
    pub fn dimension(&self) -> usize {
        self.vectors.len()
    }

    /// First eigenvalue above the kernel, if computed.
    pub fn first_nonzero(&self) -> Option<f64> {
        self.spectrum.get(self.vectors.len()).copied()
    }
}

fn end_times(a: &EndField, x: &Field, kind: FormKind, adjoint: bool) -> Result<Field> {
    let r = a.rank();
    if x.rank() != r || a.n_points() != x.n_points() {
        return Err(Error::ShapeMismatch(format!("rank-{r} endomorphism on rank-{} field", x.rank())));
    }
    let mut out = Field::zeros(kind, r, x.n_points());
    for i in 0..r {
        for j in 0..r {
            let (entry, conj) = if adjoint { (a.entry(j, i), true) } else { (a.entry(i, j), false) };
            let src = x.component(j);
            let dst = out.component_mut(i);
            for ((d, e), s) in dst.iter_mut().zip(entry).zip(src) {
                *d += if conj { e.conj() } else { *e } * s;
            }
        }
    }
    Ok(out)
}

/// Cup product `A ∪ x`.
///
/// A `(0,0)` endomorphism acts by multiplication. A `(0,1)` endomorphism maps
/// sections to `(0,1)`-forms and `(0,1)`-forms to zero, returned as `None`.
pub fn cup(a: &EndField, x: &Field) -> Result<Option<Field>> {
    match (a.kind(), x.kind()) {
        (FormKind::Section, kind) => end_times(a, x, kind, false).map(Some),
        (FormKind::Form01, FormKind::Section) => end_times(a, x, FormKind::Form01, false).map(Some),
        (FormKind::Form01, FormKind::Form01) => {
            end_times(a, x, FormKind::Form01, false)?;
            Ok(None)
        }
    }
}

/// Cap product `A^* ∩ x`, the pointwise formal adjoint of `cup(A, ·)`.
///
/// Maps `(0,1)`-forms to sections via `g^{zbar z} A^H x`; sections go to zero,
/// returned as `None`.
pub fn cap(a: &EndField, x: &Field) -> Result<Option<Field>> {
    if a.kind() != FormKind::Form01 {
        return Err(Error::KindMismatch("cap expects an endomorphism-valued (0,1)-form".into()));
    }
    match x.kind() {
        FormKind::Form01 => end_times(a, x, FormKind::Section, true).map(Some),
        FormKind::Section => {
            end_times(a, x, FormKind::Section, true)?;
            Ok(None)
        }
    }
}

/// `sqrt(-1) Lambda [A, B^*]` for endomorphism-valued `(0,1)`-forms, where
/// `B^* = -B^H dz` is the `(1,0)`-companion. Pointwise `2 (A B^H - B^H A)`.
pub fn endo_commutator_lambda(a: &EndField, b: &EndField) -> Result<EndField> {
    if a.kind() != FormKind::Form01 || b.kind() != FormKind::Form01 {
        return Err(Error::KindMismatch("commutator expects two endomorphism-valued (0,1)-forms".into()));
    }
    if a.rank() != b.rank() || a.n_points() != b.n_points() {
        return Err(Error::ShapeMismatch("commutator operands differ in shape".into()));
    }
    if a.rank() == 1 {
        return Ok(EndField::scalar(FormKind::Section, C64::new(0.0, 0.0), a.n_points()));
    }
    EndField::from_fn(FormKind::Section, a.rank(), a.n_points(), |p| {
        let am = a.at(p);
        let bh = b.at(p).adjoint();
        (&am * &bh - &bh * &am) * C64::new(2.0, 0.0)
    })
}
