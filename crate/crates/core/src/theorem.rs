//! Right-hand side of the curvature formula and its comparison with the
//! finite-difference curvature of the L2 metric.
//!
//! For an orthonormal harmonic basis `xi` at `s_0`:
//!
//! * `T1 = <G(rho_l^* ∩ xi_rho), rho_k^* ∩ xi_sigma>` (Green on sections),
//! * `T2 = <G(Psi_{k lbar}) xi_rho, xi_sigma>` with `Psi` the Laplacian of
//!   `rho_{k lbar}` predicted by the commutator, `1/2 sqrt(-1) Lambda [rho_k, rho_l^*]`
//!   in this crate's normalisation,
//! * `T3 = -<G(rho_k ∪ xi_rho), rho_l ∪ xi_sigma>` (Green on `(0,1)`-forms),
//! * `T4 = <H(rho_{k lbar}) xi_rho, xi_sigma>`.

use std::time::Instant;

use rayon::prelude::*;

use crate::direct_image::{chern_curvature_fd, FrameBuilder, FrameMode, Offset, SStencil};
use crate::error::{Error, Result};
use crate::family::FamilySpec;
use crate::fields::{EndField, Field, FormKind};
use crate::hodge::{cap, cup, endo_commutator_lambda, Fiber, HarmonicBasis};
use crate::linalg::{self, CMat};
use crate::solver::SolverOptions;
use crate::C64;

/// Tensor `R_{rho sigmabar k lbar}` of shape `rank x rank x m x m`.
#[derive(Clone, Debug, PartialEq)]
pub struct CurvatureTensor {
    rank: usize,
    base_dim: usize,
    data: Vec<C64>,
}

impl CurvatureTensor {
    pub fn zeros(rank: usize, base_dim: usize) -> Self {
        Self { rank, base_dim, data: vec![C64::new(0.0, 0.0); rank * rank * base_dim * base_dim] }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn base_dim(&self) -> usize {
        self.base_dim
    }

    fn idx(&self, rho: usize, sigma: usize, k: usize, l: usize) -> usize {
        ((k * self.base_dim + l) * self.rank + rho) * self.rank + sigma
    }

    pub fn get(&self, rho: usize, sigma: usize, k: usize, l: usize) -> C64 {
        self.data[self.idx(rho, sigma, k, l)]
    }

    pub fn set(&mut self, rho: usize, sigma: usize, k: usize, l: usize, v: C64) {
        let i = self.idx(rho, sigma, k, l);
        self.data[i] = v;
    }

    /// `rank x rank` block for fixed `(k, l)`.
    pub fn block(&self, k: usize, l: usize) -> CMat {
        CMat::from_fn(self.rank, self.rank, |r, s| self.get(r, s, k, l))
    }

    pub fn set_block(&mut self, k: usize, l: usize, b: &CMat) {
        for r in 0..self.rank {
            for s in 0..self.rank {
                self.set(r, s, k, l, b[(r, s)]);
            }
        }
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        linalg::norm_sqr(&self.data).sqrt()
    }

    /// Largest entry magnitude.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, z| m.max(z.norm()))
    }

    fn zip(&self, other: &Self, f: impl Fn(C64, C64) -> C64) -> Result<Self> {
        if self.rank != other.rank || self.base_dim != other.base_dim {
            return Err(Error::ShapeMismatch("curvature tensors differ in shape".into()));
        }
        Ok(Self {
            rank: self.rank,
            base_dim: self.base_dim,
            data: self.data.iter().zip(&other.data).map(|(a, b)| f(*a, *b)).collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip(other, |a, b| a - b)
    }

    pub fn scaled(&self, a: C64) -> Self {
        Self { rank: self.rank, base_dim: self.base_dim, data: self.data.iter().map(|v| v * a).collect() }
    }

    /// Largest `|R_{rho sigma k l} - conj(R_{sigma rho l k})|`.
    pub fn hermitian_defect(&self) -> f64 {
        let mut d: f64 = 0.0;
        for k in 0..self.base_dim {
            for l in 0..self.base_dim {
                for r in 0..self.rank {
                    for s in 0..self.rank {
                        d = d.max((self.get(r, s, k, l) - self.get(s, r, l, k).conj()).norm());
                    }
                }
            }
        }
        d
    }

    /// `T'_{rho sigma k lbar} = conj(T_{sigma rho l kbar})`, the image of a
    /// tensor under complex conjugation of both index pairs.
    pub fn conj_mirrored(&self) -> Self {
        let mut out = Self::zeros(self.rank, self.base_dim);
        for k in 0..self.base_dim {
            for l in 0..self.base_dim {
                for r in 0..self.rank {
                    for s in 0..self.rank {
                        out.set(r, s, k, l, self.get(s, r, l, k).conj());
                    }
                }
            }
        }
        out
    }

    /// Nested `[rho][sigma][k][l] -> [re, im]` arrays.
    pub fn to_nested(&self) -> Vec<Vec<Vec<Vec<[f64; 2]>>>> {
        (0..self.rank)
            .map(|r| {
                (0..self.rank)
                    .map(|s| {
                        (0..self.base_dim)
                            .map(|k| (0..self.base_dim).map(|l| {
                                let v = self.get(r, s, k, l);
                                [v.re, v.im]
                            }).collect())
                            .collect()
                    })
                    .collect()
            })
            .collect()
    }
}

/// The four right-hand side terms.
#[derive(Clone, Debug, PartialEq)]
pub struct Terms {
    pub t1: CurvatureTensor,
    pub t2: CurvatureTensor,
    pub t3: CurvatureTensor,
    pub t4: CurvatureTensor,
}

impl Terms {
    pub fn sum(&self) -> CurvatureTensor {
        self.t1.add(&self.t2).and_then(|x| x.add(&self.t3)).and_then(|x| x.add(&self.t4)).expect("terms share a shape")
    }

    pub fn as_array(&self) -> [&CurvatureTensor; 4] {
        [&self.t1, &self.t2, &self.t3, &self.t4]
    }
}

/// Harmonic bases of one fiber, computed on demand.
struct FiberBases<'a> {
    fiber: &'a Fiber,
    sections: Option<HarmonicBasis>,
    forms: Option<HarmonicBasis>,
}

impl<'a> FiberBases<'a> {
    fn new(fiber: &'a Fiber) -> Self {
        Self { fiber, sections: None, forms: None }
    }

    fn get(&mut self, kind: FormKind) -> Result<&HarmonicBasis> {
        let slot = match kind {
            FormKind::Section => &mut self.sections,
            FormKind::Form01 => &mut self.forms,
        };
        if slot.is_none() {
            *slot = Some(self.fiber.harmonic_basis(kind)?);
        }
        Ok(slot.as_ref().expect("basis just computed"))
    }
}

/// `G(x)` for every `Some` input (in parallel), keeping `None` as the zero form.
fn green_all(fiber: &Fiber, basis: Option<&HarmonicBasis>, inputs: &[Option<Field>]) -> Result<Vec<Option<Field>>> {
    inputs
        .par_iter()
        .map(|x| match (x, basis) {
            (Some(x), Some(b)) => fiber.green(b, x).map(Some),
            (Some(_), None) => Err(Error::Solver("missing harmonic basis for Green solve".into())),
            (None, _) => Ok(None),
        })
        .collect()
}

fn pair(fiber: &Fiber, a: &Option<Field>, b: &Option<Field>) -> Result<C64> {
    match (a, b) {
        (Some(a), Some(b)) => fiber.inner(a, b),
        _ => Ok(C64::new(0.0, 0.0)),
    }
}

/// Evaluates `T1..T4` at `s0` for an orthonormal harmonic basis of degree `q`.
pub fn theorem_terms(spec: &FamilySpec, s0: &[C64], q: usize, basis: &[Field], options: &SolverOptions) -> Result<Terms> {
    let kind = FormKind::from_q(q)?;
    if basis.iter().any(|b| b.kind() != kind) {
        return Err(Error::KindMismatch(format!("basis is not of degree {q}")));
    }
    let fiber = Fiber::new(spec, s0, options)?;
    let r = basis.len();
    let m = spec.base_dim();
    let rho: Vec<EndField> = (0..m).map(|k| spec.kodaira_spencer(s0, k)).collect::<Result<_>>()?;
    let mut bases = FiberBases::new(&fiber);

    // T1: cap products are sections; they vanish for q = 0.
    let caps: Vec<Option<Field>> = (0..m)
        .flat_map(|l| basis.iter().map(move |x| (l, x)))
        .map(|(l, x)| cap(&rho[l], x))
        .collect::<Result<_>>()?;
    let section_basis = if caps.iter().any(Option::is_some) { Some(bases.get(FormKind::Section)?.clone()) } else { None };
    let g_caps = green_all(&fiber, section_basis.as_ref(), &caps)?;

    // T3: cup products are (0,1)-forms; they vanish for q = 1.
    let cups: Vec<Option<Field>> = (0..m)
        .flat_map(|k| basis.iter().map(move |x| (k, x)))
        .map(|(k, x)| cup(&rho[k], x))
        .collect::<Result<_>>()?;
    let form_basis = if cups.iter().any(Option::is_some) { Some(bases.get(FormKind::Form01)?.clone()) } else { None };
    let g_cups = green_all(&fiber, form_basis.as_ref(), &cups)?;

    // T2 and T4 act through the endomorphism fiber.
    let end_rank = 1;
    let end_fiber = Fiber::endomorphism(spec.grid(), end_rank, options);
    let end_basis = end_fiber.harmonic_basis(FormKind::Section)?;

    let mut terms = Terms {
        t1: CurvatureTensor::zeros(r, m),
        t2: CurvatureTensor::zeros(r, m),
        t3: CurvatureTensor::zeros(r, m),
        t4: CurvatureTensor::zeros(r, m),
    };
    for k in 0..m {
        for l in 0..m {
            let psi = endo_commutator_lambda(&rho[k], &rho[l])?.scaled(C64::new(0.5, 0.0));
            let g_psi = end_fiber.green_end(&end_basis, &psi)?;
            let h_rho = end_fiber.project_end(&end_basis, &spec.rho_klbar(s0, k, l)?)?;
            for a in 0..r {
                for b in 0..r {
                    let t1 = pair(&fiber, &g_caps[l * r + a], &caps[k * r + b])?;
                    let t3 = -pair(&fiber, &g_cups[k * r + a], &cups[l * r + b])?;
                    let t2 = pair(&fiber, &cup(&g_psi, &basis[a])?, &Some(basis[b].clone()))?;
                    let t4 = pair(&fiber, &cup(&h_rho, &basis[a])?, &Some(basis[b].clone()))?;
                    terms.t1.set(a, b, k, l, t1);
                    terms.t2.set(a, b, k, l, t2);
                    terms.t3.set(a, b, k, l, t3);
                    terms.t4.set(a, b, k, l, t4);
                }
            }
        }
    }
    Ok(terms)
}

/// Result of comparing both sides of the curvature formula at `s_0`.
#[derive(Clone, Debug)]
pub struct CurvatureReport {
    pub q: usize,
    pub rank: usize,
    pub base_dim: usize,
    pub degree: i64,
    pub n_side: usize,
    pub stencil_order: usize,
    pub s0: Vec<C64>,
    pub eta: f64,
    pub lhs: CurvatureTensor,
    pub terms: Terms,
    pub residual_abs: f64,
    pub residual_rel: f64,
    /// Frobenius norms of `T1..T4`.
    pub term_norms: [f64; 4],
    /// Largest entry magnitude of `T1..T4`.
    pub term_max: [f64; 4],
    pub lhs_norm: f64,
    /// Largest Hermitian-symmetry defect over all reported tensors.
    pub hermitian_defect: f64,
    /// `Phi_{k lbar}(s_0)`.
    pub phi: CMat,
    /// Largest relative `|d/d sbar xi|` of the frame at the center (its
    /// harmonic part for `q = 1`).
    pub holomorphy_residual: f64,
    /// Largest relative `|laplacian xi|` at the stencil points used.
    pub harmonic_residual: f64,
    /// Largest deviation of the frame normalisation from the identity.
    pub normalization_residual: f64,
    /// Smallest nonzero eigenvalue of the Laplacian in degree `q` at `s_0`.
    pub spectral_gap: Option<f64>,
    pub wall_time_s: f64,
}

impl CurvatureReport {
    pub fn rhs(&self) -> CurvatureTensor {
        self.terms.sum()
    }
}

fn frame_holomorphy(builder: &FrameBuilder) -> Result<f64> {
    let st = builder.stencil();
    let center = builder.point(&st.origin())?;
    let mut worst: f64 = 0.0;
    for k in 0..st.base_dim() {
        let xp = builder.point(&st.unit(2 * k, 1))?;
        let xm = builder.point(&st.unit(2 * k, -1))?;
        let yp = builder.point(&st.unit(2 * k + 1, 1))?;
        let ym = builder.point(&st.unit(2 * k + 1, -1))?;
        let scale = C64::new(0.25 / st.eta, 0.0);
        for rho in 0..builder.rank() {
            let dx = xp.reps[rho].sub(&xm.reps[rho])?;
            let dy = yp.reps[rho].sub(&ym.reps[rho])?;
            let mut dsbar = dx.plus_scaled(C64::new(0.0, 1.0), &dy)?.scaled(scale);
            if builder.q() == 1 {
                // Only the class is holomorphic; the representative moves by
                // dbar-exact forms.
                dsbar = center.fiber.project(&center.basis, &dsbar)?;
            }
            let norm = center.fiber.norm(&center.reps[rho])?;
            worst = worst.max(center.fiber.norm(&dsbar)? / norm);
        }
    }
    Ok(worst)
}

/// Builds the frame, evaluates both sides at `s0` and compares them.
pub fn verify_theorem(spec: &FamilySpec, s0: &[C64], q: usize, eta: f64, options: &SolverOptions) -> Result<CurvatureReport> {
    let start = Instant::now();
    let stencil = SStencil::new(s0.to_vec(), eta)?;
    let builder = FrameBuilder::with_mode(spec, q, &stencil, options, FrameMode::CenterProjection)?;
    let offsets: Vec<Offset> = stencil.curvature_offsets();
    let points = builder.points(&offsets)?;

    let frame = builder.frame(&offsets)?;
    let grams = frame.gram_field();
    let c = grams.orthonormalizer()?;
    let lhs = chern_curvature_fd(&grams.transformed(&c).normal_gauged()?)?;

    let center = &points[0];
    let r = builder.rank();
    let basis: Vec<Field> = (0..r)
        .map(|rho| {
            let coeffs: Vec<C64> = (0..r).map(|a| c[(a, rho)]).collect();
            Field::combination(&coeffs, &center.reps)
        })
        .collect::<Result<_>>()?;

    let terms = theorem_terms(spec, s0, q, &basis, options)?;
    let rhs = terms.sum();
    let residual_abs = lhs.sub(&rhs)?.norm();
    let lhs_norm = lhs.norm();
    let residual_rel = residual_abs / lhs_norm.max(f64::MIN_POSITIVE);

    let mut harmonic_residual: f64 = 0.0;
    for p in &points {
        for rep in &p.reps {
            let lap = p.fiber.laplacian(rep)?;
            harmonic_residual = harmonic_residual.max(p.fiber.norm(&lap)? / p.fiber.norm(rep)?);
        }
    }
    let holomorphy_residual = frame_holomorphy(&builder)?;
    let m = spec.base_dim();
    let phi = CMat::from_fn(m, m, |k, l| spec.phi_klbar(s0, k, l).unwrap_or_default());
    let arr = terms.as_array();
    let term_norms = [arr[0].norm(), arr[1].norm(), arr[2].norm(), arr[3].norm()];
    let term_max = [arr[0].max_abs(), arr[1].max_abs(), arr[2].max_abs(), arr[3].max_abs()];
    let hermitian_defect = std::iter::once(&lhs).chain(arr).map(|t| t.hermitian_defect()).fold(0.0, f64::max);

    Ok(CurvatureReport {
        q,
        rank: r,
        base_dim: m,
        degree: spec.degree(),
        n_side: spec.grid().n_side(),
        stencil_order: spec.grid().stencil_order().as_int(),
        s0: s0.to_vec(),
        eta,
        lhs,
        terms,
        residual_abs,
        residual_rel,
        term_norms,
        term_max,
        lhs_norm,
        hermitian_defect,
        phi,
        holomorphy_residual,
        harmonic_residual,
        normalization_residual: frame.normalization_residual,
        spectral_gap: center.basis.first_nonzero(),
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}
