//! Residual checks of the identities that lead up to the curvature formula.
//!
//! Every check works on a holomorphic frame `xi(s)` orthonormalised at `s_0`
//! and takes parameter derivatives by centered differences,
//! `d_k = (d_x - i d_y) / 2`, `d_lbar = (d_x + i d_y) / 2`. In the stored
//! unitary-frame variables the Chern connection along `S` is
//! `nabla_k = d_k - d_k phi(s)` and `nabla_lbar = d_lbar`.
//!
//! Residuals are made dimensionless with `S1 = max(1, max_k |c_k|)` for
//! quantities linear in the twist and `S2 = S1^2` for quadratic ones, and are
//! compared against `tol_fd = max(10 eta^2, 50 N^-order)`.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::direct_image::{FrameBuilder, FrameMode, Offset, SStencil};
use crate::error::{Error, Result};
use crate::family::FamilySpec;
use crate::fields::{Field, FormKind};
use crate::hodge::{cap, cup, Fiber, HarmonicBasis};
use crate::linalg::{self, CMat};
use crate::solver::SolverOptions;
use crate::C64;

/// Residual of one identity; `None` when it does not apply to this degree.
pub type Residual = Option<f64>;

/// Scaled residuals of all checks at one base point.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LemmaResiduals {
    /// `|dbar_star(nabla_k Xi)|` (degree 1).
    pub nabla_dbar_star: Residual,
    /// `|dbar(nabla_k xi) - rho_k cup xi|` (degree 0).
    pub nabla_dbar: Residual,
    /// `max(|dbar(d_lbar xi)|, |H(d_lbar xi)|)`.
    pub conjugate_exact: Residual,
    /// `|dbar_star(d_lbar Xi) - rho_l^* cap Xi|` (degree 1).
    pub conjugate_dbar_star: Residual,
    /// `|[nabla_k, nabla_lbar] xi - rho_{k lbar} cup xi|`.
    pub commutator: Residual,
    /// `| |(1 - H) nabla_k xi|^2 - <G(rho_k cup xi), rho_k cup xi> |`.
    pub s1_identity: Residual,
    /// `max |tr ad(R_{k lbar})|`, unscaled.
    pub endo_trace: Residual,
    /// `max |<mu, d_kbar xi>|` over harmonic `mu`.
    pub holomorphic_pairing: Residual,
    /// Second derivatives of the Gram matrix, differences of inner products
    /// against `<nabla_k xi, nabla_l xi> + <nabla_lbar nabla_k xi, xi>` (degree 0).
    pub second_derivative: Residual,
}

impl LemmaResiduals {
    /// `(name, value)` pairs in a fixed order.
    pub fn entries(&self) -> [(&'static str, Residual); 9] {
        [
            ("nabla_dbar_star", self.nabla_dbar_star),
            ("nabla_dbar", self.nabla_dbar),
            ("conjugate_exact", self.conjugate_exact),
            ("conjugate_dbar_star", self.conjugate_dbar_star),
            ("commutator", self.commutator),
            ("s1_identity", self.s1_identity),
            ("endo_trace", self.endo_trace),
            ("holomorphic_pairing", self.holomorphic_pairing),
            ("second_derivative", self.second_derivative),
        ]
    }

    /// Largest applicable residual.
    pub fn max(&self) -> f64 {
        self.entries().iter().filter_map(|(_, v)| *v).fold(0.0, f64::max)
    }
}

/// Output of [`lemma_suite`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LemmaReport {
    pub q: usize,
    pub rank: usize,
    pub n_side: usize,
    pub eta: f64,
    pub tol_fd: f64,
    pub residuals: LemmaResiduals,
}

impl LemmaReport {
    /// Whether every applicable residual is within `tol_fd`.
    pub fn pass(&self) -> bool {
        self.residuals.max() <= self.tol_fd
    }
}

/// `max(10 eta^2, 50 N^-order)`.
pub fn tol_fd(eta: f64, n_side: usize, stencil_order: usize) -> f64 {
    (10.0 * eta * eta).max(50.0 * (n_side as f64).powi(-(stencil_order as i32)))
}

/// Frame values on a stencil, keyed by offset.
type FrameMap = BTreeMap<Offset, Vec<Field>>;

fn add_offsets(a: &[i8], b: &[i8]) -> Offset {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// The center plus unit steps along every real coordinate.
fn first_order(stencil: &SStencil) -> Vec<Offset> {
    let mut out = vec![stencil.origin()];
    for r in 0..2 * stencil.base_dim() {
        out.push(stencil.unit(r, 1));
        out.push(stencil.unit(r, -1));
    }
    out
}

/// Centered `d_k` (or `d_kbar` when `conjugate`) of `values` at `at`.
fn fd<F>(values: &F, stencil: &SStencil, at: &[i8], k: usize, conjugate: bool) -> Result<Field>
where
    F: Fn(&[i8]) -> Result<Field>,
{
    let step = |r: usize, sign: i8| values(&add_offsets(at, &stencil.unit(r, sign)));
    let dx = step(2 * k, 1)?.sub(&step(2 * k, -1)?)?;
    let dy = step(2 * k + 1, 1)?.sub(&step(2 * k + 1, -1)?)?;
    let i = if conjugate { C64::new(0.0, 1.0) } else { C64::new(0.0, -1.0) };
    Ok(dx.plus_scaled(i, &dy)?.scaled(C64::new(0.25 / stencil.eta, 0.0)))
}

struct Context<'a> {
    spec: &'a FamilySpec,
    stencil: SStencil,
    frame: FrameMap,
    fiber: Fiber,
    basis: HarmonicBasis,
    rank: usize,
    m: usize,
}

impl Context<'_> {
    fn xi(&self, o: &[i8], rho: usize) -> Result<Field> {
        self.frame
            .get(o)
            .map(|v| v[rho].clone())
            .ok_or_else(|| Error::ShapeMismatch(format!("frame missing at offset {o:?}")))
    }

    fn dphi(&self, o: &[i8], k: usize) -> C64 {
        self.spec.dphi(&self.stencil.point(o), k)
    }

    /// `nabla_k xi_rho` at offset `o`.
    fn nabla(&self, o: &[i8], k: usize, rho: usize) -> Result<Field> {
        let d = fd(&|p: &[i8]| self.xi(p, rho), &self.stencil, o, k, false)?;
        d.plus_scaled(-self.dphi(o, k), &self.xi(o, rho)?)
    }

    /// `d_lbar xi_rho` at offset `o`.
    fn dbar_s(&self, o: &[i8], l: usize, rho: usize) -> Result<Field> {
        fd(&|p: &[i8]| self.xi(p, rho), &self.stencil, o, l, true)
    }
}

/// Evaluates all residual checks at `s0` for the degree-`q` direct image.
pub fn lemma_suite(spec: &FamilySpec, s0: &[C64], q: usize, eta: f64, options: &SolverOptions) -> Result<LemmaReport> {
    let kind = FormKind::from_q(q)?;
    let stencil = SStencil::new(s0.to_vec(), eta)?;
    let builder = FrameBuilder::with_mode(spec, q, &stencil, options, FrameMode::CenterProjection)?;
    let first = first_order(&stencil);
    let mut offsets: Vec<Offset> = Vec::new();
    for a in &first {
        for b in &first {
            offsets.push(add_offsets(a, b));
        }
    }
    offsets.sort();
    offsets.dedup();
    let points = builder.points(&offsets)?;
    let origin = stencil.origin();
    let center = points[offsets.iter().position(|o| *o == origin).expect("origin is in the stencil")].clone();

    // Constant change of frame making the center Gram matrix the identity.
    let h0 = &center.gram;
    let c = linalg::inv_sqrt_hermitian(h0)
        .ok_or_else(|| Error::Solver("center Gram matrix is not positive definite".into()))?
        .map(|z| z.conj());
    let rank = builder.rank();
    let mut frame = FrameMap::new();
    for (o, p) in offsets.iter().zip(&points) {
        let reps = (0..rank)
            .map(|rho| {
                let coeffs: Vec<C64> = (0..rank).map(|a| c[(a, rho)]).collect();
                Field::combination(&coeffs, &p.reps)
            })
            .collect::<Result<Vec<_>>>()?;
        frame.insert(o.clone(), reps);
    }
    let ctx = Context {
        spec,
        stencil: stencil.clone(),
        frame,
        fiber: center.fiber.clone(),
        basis: center.basis.clone(),
        rank,
        m: spec.base_dim(),
    };

    let s1 = spec.twist().iter().map(|c| c.norm()).fold(1.0, f64::max);
    let s2 = s1 * s1;
    let fiber = &ctx.fiber;
    let rho: Vec<_> = (0..ctx.m).map(|k| spec.kodaira_spencer(s0, k)).collect::<Result<_>>()?;

    let mut nabla_dbar_star: f64 = 0.0;
    let mut nabla_dbar: f64 = 0.0;
    let mut conjugate_exact: f64 = 0.0;
    let mut conjugate_dbar_star: f64 = 0.0;
    let mut commutator: f64 = 0.0;
    let mut s1_identity: f64 = 0.0;
    let mut holomorphic_pairing: f64 = 0.0;
    let mut second_derivative: f64 = 0.0;

    let form_basis = match kind {
        FormKind::Form01 => ctx.basis.clone(),
        FormKind::Section => fiber.harmonic_basis(FormKind::Form01)?,
    };

    for rho_i in 0..ctx.rank {
        let xi = ctx.xi(&origin, rho_i)?;
        for k in 0..ctx.m {
            let nabla = ctx.nabla(&origin, k, rho_i)?;
            let cup_k = cup(&rho[k], &xi)?;
            match kind {
                FormKind::Form01 => {
                    nabla_dbar_star = nabla_dbar_star.max(fiber.norm(&fiber.dbar_star(&nabla)?)? / s1);
                }
                FormKind::Section => {
                    let target = cup_k.clone().ok_or_else(|| Error::KindMismatch("cup of a section".into()))?;
                    nabla_dbar = nabla_dbar.max(fiber.norm(&fiber.dbar(&nabla)?.sub(&target)?)? / s1);
                }
            }

            // (1 - H) nabla_k xi against the Green pairing of the cup product.
            let exact = nabla.sub(&fiber.project(&ctx.basis, &nabla)?)?;
            let lhs = fiber.inner(&exact, &exact)?.re;
            let rhs = match &cup_k {
                Some(v) => fiber.inner(&fiber.green(&form_basis, v)?, v)?.re,
                None => 0.0,
            };
            s1_identity = s1_identity.max((lhs - rhs).abs() / s2);

            let dbar_k = ctx.dbar_s(&origin, k, rho_i)?;
            for mu in &ctx.basis.vectors {
                holomorphic_pairing = holomorphic_pairing.max(fiber.inner(mu, &dbar_k)?.norm() / s1);
            }

            for l in 0..ctx.m {
                let dbar_l = ctx.dbar_s(&origin, l, rho_i)?;
                let harmonic_part = fiber.norm(&fiber.project(&ctx.basis, &dbar_l)?)?;
                let closed = match kind {
                    FormKind::Section => fiber.norm(&fiber.dbar(&dbar_l)?)?,
                    FormKind::Form01 => 0.0,
                };
                conjugate_exact = conjugate_exact.max(harmonic_part.max(closed) / s1);
                if kind == FormKind::Form01 {
                    let target = cap(&rho[l], &xi)?.ok_or_else(|| Error::KindMismatch("cap of a form".into()))?;
                    let v = fiber.dbar_star(&dbar_l)?.sub(&target)?;
                    conjugate_dbar_star = conjugate_dbar_star.max(fiber.norm(&v)? / s1);
                }

                // Nested differences: nabla_k nabla_lbar xi - nabla_lbar nabla_k xi.
                let nabla_of_dbar = {
                    let inner = |p: &[i8]| ctx.dbar_s(p, l, rho_i);
                    fd(&inner, &ctx.stencil, &origin, k, false)?.plus_scaled(-ctx.dphi(&origin, k), &inner(&origin)?)?
                };
                let dbar_of_nabla = fd(&|p: &[i8]| ctx.nabla(p, k, rho_i), &ctx.stencil, &origin, l, true)?;
                let rho_kl = spec.rho_klbar(s0, k, l)?;
                let target = cup(&rho_kl, &xi)?.ok_or_else(|| Error::KindMismatch("cup of a section endomorphism".into()))?;
                let v = nabla_of_dbar.sub(&dbar_of_nabla)?.sub(&target)?;
                commutator = commutator.max(fiber.norm(&v)? / s2);
            }
        }
    }

    if kind == FormKind::Section {
        second_derivative = product_rule_second_derivative(&ctx, &points_gram(&offsets, &points, &c))? / s2;
    }

    let mut endo_trace: f64 = 0.0;
    for k in 0..ctx.m {
        for l in 0..ctx.m {
            endo_trace = endo_trace.max(spec.endo_trace_curvature(s0, k, l)?.norm());
        }
    }

    let applies = |flag: bool, v: f64| if flag { Some(v) } else { None };
    let is_forms = kind == FormKind::Form01;
    Ok(LemmaReport {
        q,
        rank,
        n_side: spec.grid().n_side(),
        eta,
        tol_fd: tol_fd(eta, spec.grid().n_side(), spec.grid().stencil_order().as_int()),
        residuals: LemmaResiduals {
            nabla_dbar_star: applies(is_forms, nabla_dbar_star),
            nabla_dbar: applies(!is_forms, nabla_dbar),
            conjugate_exact: Some(conjugate_exact),
            conjugate_dbar_star: applies(is_forms, conjugate_dbar_star),
            commutator: Some(commutator),
            s1_identity: Some(s1_identity),
            endo_trace: Some(endo_trace),
            holomorphic_pairing: Some(holomorphic_pairing),
            second_derivative: applies(!is_forms, second_derivative),
        },
    })
}

/// Gram matrices `C^T H conj(C)` of the orthonormalised frame at each offset.
fn points_gram(
    offsets: &[Offset],
    points: &[std::sync::Arc<crate::direct_image::FramePoint>],
    c: &CMat,
) -> BTreeMap<Offset, CMat> {
    let ct = c.transpose();
    let cc = c.map(|z| z.conj());
    offsets.iter().zip(points).map(|(o, p)| (o.clone(), &ct * &p.gram * &cc)).collect()
}

/// Largest deviation between `d_lbar d_k H_{ab}` by differences of inner
/// products and `<nabla_k xi_a, nabla_l xi_b> + <nabla_lbar nabla_k xi_a, xi_b>`.
fn product_rule_second_derivative(ctx: &Context<'_>, grams: &BTreeMap<Offset, CMat>) -> Result<f64> {
    let origin = ctx.stencil.origin();
    let gram = |o: &[i8], a: usize, b: usize| -> Result<C64> {
        grams
            .get(o)
            .map(|h| h[(a, b)])
            .ok_or_else(|| Error::ShapeMismatch(format!("Gram matrix missing at offset {o:?}")))
    };
    let eta = ctx.stencil.eta;
    let scalar_fd = |f: &dyn Fn(&[i8]) -> Result<C64>, at: &[i8], k: usize, conjugate: bool| -> Result<C64> {
        let step = |r: usize, sign: i8| f(&add_offsets(at, &ctx.stencil.unit(r, sign)));
        let dx = step(2 * k, 1)? - step(2 * k, -1)?;
        let dy = step(2 * k + 1, 1)? - step(2 * k + 1, -1)?;
        let i = if conjugate { C64::new(0.0, 1.0) } else { C64::new(0.0, -1.0) };
        Ok((dx + i * dy) * (0.25 / eta))
    };
    let mut worst: f64 = 0.0;
    for k in 0..ctx.m {
        for l in 0..ctx.m {
            for a in 0..ctx.rank {
                for b in 0..ctx.rank {
                    let dk = |o: &[i8]| scalar_fd(&|p: &[i8]| gram(p, a, b), o, k, false);
                    let fd_value = scalar_fd(&dk, &origin, l, true)?;

                    let nabla_a = ctx.nabla(&origin, k, a)?;
                    let nabla_b = ctx.nabla(&origin, l, b)?;
                    let mixed = fd(&|p: &[i8]| ctx.nabla(p, k, a), &ctx.stencil, &origin, l, true)?;
                    let xi_b = ctx.xi(&origin, b)?;
                    let formula = ctx.fiber.inner(&nabla_a, &nabla_b)? + ctx.fiber.inner(&mixed, &xi_b)?;
                    worst = worst.max((fd_value - formula).norm());
                }
            }
        }
    }
    Ok(worst)
}

/// One residual evaluated at `eta` and `eta / 2`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HalvingEntry {
    pub name: String,
    pub coarse: f64,
    pub fine: f64,
    /// `coarse / fine`.
    pub ratio: f64,
    /// Richardson estimate of the `eta -> 0` limit, `(4 fine - coarse) / 3`.
    pub limit: f64,
    /// Whether the residual is dominated by the parameter differences, i.e.
    /// the extrapolated limit is below half of the coarse value.
    pub s_dominated: bool,
}

/// Both suites and the per-residual comparison.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HalvingReport {
    pub coarse: LemmaReport,
    pub fine: LemmaReport,
    pub entries: Vec<HalvingEntry>,
}

impl HalvingReport {
    /// Smallest ratio over the parameter-dominated residuals.
    pub fn min_s_dominated_ratio(&self) -> Option<f64> {
        self.entries.iter().filter(|e| e.s_dominated).map(|e| e.ratio).reduce(f64::min)
    }
}

/// Values below this are treated as exact zeros and never classified.
const NEGLIGIBLE: f64 = 1e-12;

/// Runs [`lemma_suite`] at `eta` and `eta / 2` and compares the residuals.
pub fn eta_halving(spec: &FamilySpec, s0: &[C64], q: usize, eta: f64, options: &SolverOptions) -> Result<HalvingReport> {
    let coarse = lemma_suite(spec, s0, q, eta, options)?;
    let fine = lemma_suite(spec, s0, q, 0.5 * eta, options)?;
    let entries = coarse
        .residuals
        .entries()
        .iter()
        .zip(fine.residuals.entries().iter())
        .filter_map(|((name, a), (_, b))| {
            let (a, b) = ((*a)?, (*b)?);
            let limit = (4.0 * b - a) / 3.0;
            Some(HalvingEntry {
                name: name.to_string(),
                coarse: a,
                fine: b,
                ratio: if b > 0.0 { a / b } else { f64::INFINITY },
                limit,
                s_dominated: a > NEGLIGIBLE && limit.abs() < 0.5 * a,
            })
        })
        .collect();
    Ok(HalvingReport { coarse, fine, entries })
}
