//! Holomorphic frames of the direct images `R^q p_* F` over a parameter
//! stencil, their Gram matrices and the finite-difference Chern curvature.
//!
//! * `q = 0`: fiberwise kernel sections normalised by point evaluation at
//!   fixed nodes, `u_rho(z_j, s) = delta_{j rho}`.
//! * `q = 1`: harmonic `(0,1)`-forms dual, under the fiberwise Serre pairing,
//!   to a `q = 0` frame of the dual family.
//!
//! Instead of node evaluation, either construction can normalise against the
//! orthonormal basis at the stencil center, `<u_rho(s), b_sigma> = delta`.
//! That frame is normal at the center and varies much less across the
//! stencil, which keeps the finite-difference curvature accurate.
//!
//! All of these are holomorphic in `s` because the normalising data depend
//! holomorphically on `s`.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::family::FamilySpec;
use crate::fields::{Field, FormKind};
use crate::hodge::{Fiber, HarmonicBasis};
use crate::linalg::{self, CMat};
use crate::solver::SolverOptions;
use crate::theorem::CurvatureTensor;
use crate::C64;

/// Integer offset of a stencil point: entries `2k` and `2k+1` are the steps
/// along `Re s^k` and `Im s^k` in units of `eta`.
pub type Offset = Vec<i8>;

/// Number of candidate node sets tried for point-evaluation normalisation.
pub const NODE_CANDIDATES: usize = 32;

/// Largest admissible condition number of the evaluation matrix.
pub const MAX_NODE_CONDITION: f64 = 1e8;

/// Parameter stencil `s_0 + eta * offset`.
#[derive(Clone, Debug, PartialEq)]
pub struct SStencil {
    pub center: Vec<C64>,
    pub eta: f64,
}

impl SStencil {
    pub fn new(center: Vec<C64>, eta: f64) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::Config(format!("stencil step must be positive, got {eta}")));
        }
        if center.is_empty() || center.len() > 2 {
            return Err(Error::Config(format!("stencil center must have 1 or 2 coordinates, got {}", center.len())));
        }
        Ok(Self { center, eta })
    }

    pub fn base_dim(&self) -> usize {
        self.center.len()
    }

    /// The zero offset.
    pub fn origin(&self) -> Offset {
        vec![0; 2 * self.base_dim()]
    }

    /// Unit offset along real coordinate `r` (`2k` real part, `2k+1` imaginary part).
    pub fn unit(&self, r: usize, sign: i8) -> Offset {
        let mut o = self.origin();
        o[r] = sign;
        o
    }

    /// Base point of an offset.
    pub fn point(&self, offset: &[i8]) -> Vec<C64> {
        self.center
            .iter()
            .enumerate()
            .map(|(k, c)| c + C64::new(offset[2 * k] as f64, offset[2 * k + 1] as f64) * self.eta)
            .collect()
    }

    /// All `3^{2m}` points with entries in `{-1, 0, 1}`.
    pub fn full_offsets(&self) -> Vec<Offset> {
        let dims = 2 * self.base_dim();
        let mut out = vec![Vec::new()];
        for _ in 0..dims {
            out = out
                .into_iter()
                .flat_map(|o: Offset| {
                    [-1i8, 0, 1].into_iter().map(move |v| {
                        let mut n = o.clone();
                        n.push(v);
                        n
                    })
                })
                .collect();
        }
        out
    }

    /// Points needed by [`chern_curvature_fd`]: center, axis neighbours, and
    /// the corners of every plane spanned by coordinates of different `s^k`.
    pub fn curvature_offsets(&self) -> Vec<Offset> {
        let dims = 2 * self.base_dim();
        let mut out = vec![self.origin()];
        for r in 0..dims {
            out.push(self.unit(r, 1));
            out.push(self.unit(r, -1));
        }
        for r in 0..dims {
            for u in (r + 1)..dims {
                if r / 2 == u / 2 {
                    continue;
                }
                for (a, b) in [(1, 1), (1, -1), (-1, 1), (-1, -1)] {
                    let mut o = self.origin();
                    o[r] = a;
                    o[u] = b;
                    out.push(o);
                }
            }
        }
        out
    }
}

/// How the frame was normalised.
#[derive(Clone, Debug, PartialEq)]
pub enum Normalization {
    /// Point evaluation (holomorphic frame) at these grid indices.
    PointEvaluation { nodes: Vec<usize> },
    /// Serre duality against a point-evaluation frame of the dual family.
    SerreDual { dual_nodes: Vec<usize> },
    /// Projection onto the orthonormal kernel basis at the stencil center.
    CenterProjection,
    /// Serre duality against a center-projection frame of the dual family.
    SerreDualProjection,
}

/// Which normalising functionals a [`FrameBuilder`] uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FrameMode {
    /// `u_rho(z_j, s) = delta_{j rho}` at seeded evaluation nodes.
    #[default]
    PointEvaluation,
    /// `<u_rho(s), b_sigma> = delta_{sigma rho}` for the center basis `b`,
    /// with the inner product frozen at the center.
    CenterProjection,
}

enum Anchors {
    Nodes(Vec<usize>),
    Basis { vectors: Vec<Field>, weight: f64 },
}

/// Frame data at one stencil point.
#[derive(Clone, Debug)]
pub struct FramePoint {
    pub s: Vec<C64>,
    pub fiber: Fiber,
    pub basis: HarmonicBasis,
    pub reps: Vec<Field>,
    pub gram: CMat,
    /// `max |N(s) - I|` for the normalising functionals `N`.
    pub normalization_residual: f64,
    /// Condition number of the evaluation (`q = 0`) or pairing (`q = 1`) matrix.
    pub condition: f64,
}

/// Lazily evaluated frame of `R^q p_* F` around a stencil center.
pub struct FrameBuilder {
    spec: FamilySpec,
    dual: FamilySpec,
    q: usize,
    stencil: SStencil,
    options: SolverOptions,
    rank: usize,
    anchors: Anchors,
    cache: Mutex<BTreeMap<Offset, Arc<FramePoint>>>,
}

fn evaluation_matrix(fiber: &Fiber, basis: &HarmonicBasis, nodes: &[usize]) -> CMat {
    CMat::from_fn(nodes.len(), basis.dimension(), |j, a| {
        basis.vectors[a].values()[nodes[j]] * fiber.frame_factor(nodes[j])
    })
}

/// Chooses evaluation nodes maximising the smallest singular value of the
/// evaluation matrix over seeded random candidates.
fn select_nodes(fiber: &Fiber, basis: &HarmonicBasis, seed: u64) -> Result<Vec<usize>> {
    let r = basis.dimension();
    let n = fiber.grid().len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..NODE_CANDIDATES {
        let mut nodes = sample(&mut rng, n, r).into_vec();
        nodes.sort_unstable();
        let m = evaluation_matrix(fiber, basis, &nodes);
        let smin = linalg::singular_values(&m).last().copied().unwrap_or(0.0);
        if best.as_ref().map_or(true, |(b, _)| smin > *b) {
            best = Some((smin, nodes));
        }
    }
    let (_, nodes) = best.ok_or_else(|| Error::NodesDegenerate(f64::INFINITY))?;
    let cond = linalg::condition_number(&evaluation_matrix(fiber, basis, &nodes));
    if cond > MAX_NODE_CONDITION {
        return Err(Error::NodesDegenerate(cond));
    }
    Ok(nodes)
}

fn gram_matrix(fiber: &Fiber, reps: &[Field]) -> Result<CMat> {
    let r = reps.len();
    let mut h = CMat::zeros(r, r);
    for a in 0..r {
        for b in a..r {
            let v = fiber.inner(&reps[a], &reps[b])?;
            h[(a, b)] = v;
            h[(b, a)] = v.conj();
        }
        h[(a, a)] = C64::new(h[(a, a)].re, 0.0);
    }
    Ok(h)
}

fn point_evaluation_frame(fiber: &Fiber, basis: &HarmonicBasis, nodes: &[usize]) -> Result<(Vec<Field>, f64, f64)> {
    let m = evaluation_matrix(fiber, basis, nodes);
    let cond = linalg::condition_number(&m);
    if cond > MAX_NODE_CONDITION {
        return Err(Error::NodesDegenerate(cond));
    }
    let minv = linalg::inverse(&m).ok_or(Error::NodesDegenerate(f64::INFINITY))?;
    let r = nodes.len();
    let mut reps = Vec::with_capacity(r);
    for rho in 0..r {
        let coeffs: Vec<C64> = (0..r).map(|a| minv[(a, rho)]).collect();
        reps.push(Field::combination(&coeffs, &basis.vectors)?);
    }
    let check = CMat::from_fn(r, r, |j, rho| reps[rho].values()[nodes[j]] * fiber.frame_factor(nodes[j]));
    let residual = linalg::max_abs(&(check - CMat::identity(r, r)));
    Ok((reps, residual, cond))
}

/// `u_rho = sum_a basis_a (M^{-1})_{a rho}` with `M_{sigma a} = <basis_a, anchor_sigma>`.
fn projection_frame(basis: &HarmonicBasis, anchors: &[Field], weight: f64) -> Result<(Vec<Field>, f64, f64)> {
    let r = anchors.len();
    let pair = |u: &Field, b: &Field| linalg::dot(u.values(), b.values()) * weight;
    let m = CMat::from_fn(r, r, |sigma, a| pair(&basis.vectors[a], &anchors[sigma]));
    let cond = linalg::condition_number(&m);
    if cond > MAX_NODE_CONDITION {
        return Err(Error::NodesDegenerate(cond));
    }
    let minv = linalg::inverse(&m).ok_or(Error::NodesDegenerate(f64::INFINITY))?;
    let reps = (0..r)
        .map(|rho| {
            let coeffs: Vec<C64> = (0..r).map(|a| minv[(a, rho)]).collect();
            Field::combination(&coeffs, &basis.vectors)
        })
        .collect::<Result<Vec<_>>>()?;
    let check = CMat::from_fn(r, r, |sigma, rho| pair(&reps[rho], &anchors[sigma]));
    let residual = linalg::max_abs(&(check - CMat::identity(r, r)));
    Ok((reps, residual, cond))
}

impl FrameBuilder {
    /// Prepares a frame of `R^q p_* F` around `stencil.center`; computes the
    /// center fiber, the rank and (for `q = 0`, or the dual family for
    /// `q = 1`) the evaluation nodes.
    pub fn new(spec: &FamilySpec, q: usize, stencil: &SStencil, options: &SolverOptions) -> Result<Self> {
        Self::with_mode(spec, q, stencil, options, FrameMode::PointEvaluation)
    }

    /// Like [`FrameBuilder::new`] with an explicit normalisation.
    pub fn with_mode(
        spec: &FamilySpec,
        q: usize,
        stencil: &SStencil,
        options: &SolverOptions,
        mode: FrameMode,
    ) -> Result<Self> {
        let kind = FormKind::from_q(q)?;
        spec.check_point(&stencil.center)?;
        let dual = spec.dual();
        let center_fiber = Fiber::new(spec, &stencil.center, options)?;
        let center_basis = center_fiber.harmonic_basis(kind)?;
        let rank = center_basis.dimension();
        if rank == 0 {
            return Err(Error::InvalidFamily(format!(
                "the degree-{q} direct image vanishes for degree {}",
                spec.degree()
            )));
        }
        let (anchor_fiber, anchor_basis) = if q == 0 {
            (center_fiber.clone(), center_basis.clone())
        } else {
            let dual_fiber = Fiber::new(&dual, &stencil.center, options)?;
            let dual_basis = dual_fiber.harmonic_basis(FormKind::Section)?;
            if dual_basis.dimension() != rank {
                return Err(Error::NotLocallyFree(format!(
                    "dual kernel dimension {} differs from h^1 = {rank}",
                    dual_basis.dimension()
                )));
            }
            (dual_fiber, dual_basis)
        };
        let anchors = match mode {
            FrameMode::PointEvaluation => Anchors::Nodes(select_nodes(&anchor_fiber, &anchor_basis, options.seed)?),
            FrameMode::CenterProjection => {
                Anchors::Basis { weight: anchor_fiber.weight(), vectors: anchor_basis.vectors.clone() }
            }
        };
        let dual_center = (q == 1).then_some((anchor_fiber, anchor_basis));
        let builder = Self {
            spec: spec.clone(),
            dual,
            q,
            stencil: stencil.clone(),
            options: options.clone(),
            rank,
            anchors,
            cache: Mutex::new(BTreeMap::new()),
        };
        let origin = stencil.origin();
        let center = builder.assemble(&origin, center_fiber, center_basis, dual_center)?;
        builder.cache.lock().expect("frame cache poisoned").insert(origin, Arc::new(center));
        Ok(builder)
    }

    pub fn spec(&self) -> &FamilySpec {
        &self.spec
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Evaluation nodes; empty for center-projection frames.
    pub fn nodes(&self) -> &[usize] {
        match &self.anchors {
            Anchors::Nodes(n) => n,
            Anchors::Basis { .. } => &[],
        }
    }

    pub fn mode(&self) -> FrameMode {
        match self.anchors {
            Anchors::Nodes(_) => FrameMode::PointEvaluation,
            Anchors::Basis { .. } => FrameMode::CenterProjection,
        }
    }

    pub fn stencil(&self) -> &SStencil {
        &self.stencil
    }

    pub fn options(&self) -> &SolverOptions {
        &self.options
    }

    pub fn normalization(&self) -> Normalization {
        match (&self.anchors, self.q) {
            (Anchors::Nodes(n), 0) => Normalization::PointEvaluation { nodes: n.clone() },
            (Anchors::Nodes(n), _) => Normalization::SerreDual { dual_nodes: n.clone() },
            (Anchors::Basis { .. }, 0) => Normalization::CenterProjection,
            (Anchors::Basis { .. }, _) => Normalization::SerreDualProjection,
        }
    }

    fn normalized(&self, fiber: &Fiber, basis: &HarmonicBasis) -> Result<(Vec<Field>, f64, f64)> {
        match &self.anchors {
            Anchors::Nodes(nodes) => point_evaluation_frame(fiber, basis, nodes),
            Anchors::Basis { vectors, weight } => projection_frame(basis, vectors, *weight),
        }
    }

    fn compute(&self, offset: &[i8]) -> Result<FramePoint> {
        let s = self.stencil.point(offset);
        let fiber = Fiber::new(&self.spec, &s, &self.options)?;
        let basis = fiber.harmonic_basis(FormKind::from_q(self.q)?)?;
        let dual = if self.q == 1 {
            let dual_fiber = Fiber::new(&self.dual, &s, &self.options)?;
            let dual_basis = dual_fiber.harmonic_basis(FormKind::Section)?;
            Some((dual_fiber, dual_basis))
        } else {
            None
        };
        self.assemble(offset, fiber, basis, dual)
    }

    fn assemble(
        &self,
        offset: &[i8],
        fiber: Fiber,
        basis: HarmonicBasis,
        dual: Option<(Fiber, HarmonicBasis)>,
    ) -> Result<FramePoint> {
        if basis.dimension() != self.rank {
            return Err(Error::NotLocallyFree(format!(
                "h^{} = {} at offset {:?} but {} at the center",
                self.q,
                basis.dimension(),
                offset,
                self.rank
            )));
        }
        let (reps, residual, condition) = match dual {
            None => self.normalized(&fiber, &basis)?,
            Some((dual_fiber, dual_basis)) => {
                if dual_basis.dimension() != self.rank {
                    return Err(Error::NotLocallyFree(format!(
                        "dual kernel dimension {} at offset {:?}, expected {}",
                        dual_basis.dimension(),
                        offset,
                        self.rank
                    )));
                }
                let (dual_reps, _, _) = self.normalized(&dual_fiber, &dual_basis)?;
                serre_dual_frame(&fiber, &dual_reps, &basis.vectors)?
            }
        };
        let gram = gram_matrix(&fiber, &reps)?;
        Ok(FramePoint { s: self.stencil.point(offset), fiber, basis, reps, gram, normalization_residual: residual, condition })
    }

    /// Frame data at the given offsets, computed in parallel where missing.
    pub fn points(&self, offsets: &[Offset]) -> Result<Vec<Arc<FramePoint>>> {
        let missing: Vec<Offset> = {
            let cache = self.cache.lock().expect("frame cache poisoned");
            let mut m: Vec<Offset> = offsets.iter().filter(|o| !cache.contains_key(*o)).cloned().collect();
            m.sort();
            m.dedup();
            m
        };
        let computed: Vec<(Offset, Result<FramePoint>)> =
            missing.into_par_iter().map(|o| {
                let r = self.compute(&o);
                (o, r)
            }).collect();
        let mut cache = self.cache.lock().expect("frame cache poisoned");
        let mut first_err = None;
        for (o, r) in computed {
            match r {
                Ok(p) => {
                    cache.insert(o, Arc::new(p));
                }
                Err(e) => {
                    if first_err.is_none() {
                        first_err = Some(e);
                    }
                }
            }
        }
        if let Some(e) = first_err {
            return Err(e);
        }
        Ok(offsets.iter().map(|o| cache[o].clone()).collect())
    }

    /// Frame data at one offset.
    pub fn point(&self, offset: &[i8]) -> Result<Arc<FramePoint>> {
        Ok(self.points(&[offset.to_vec()])?.remove(0))
    }

    /// Materialises the frame on the given offsets.
    pub fn frame(&self, offsets: &[Offset]) -> Result<HoloFrame> {
        let pts = self.points(offsets)?;
        let mut reps = BTreeMap::new();
        let mut grams = BTreeMap::new();
        let mut normalization_residual: f64 = 0.0;
        for (o, p) in offsets.iter().zip(pts) {
            reps.insert(o.clone(), p.reps.clone());
            grams.insert(o.clone(), p.gram.clone());
            normalization_residual = normalization_residual.max(p.normalization_residual);
        }
        Ok(HoloFrame {
            q: self.q,
            rank: self.rank,
            stencil: self.stencil.clone(),
            normalization: self.normalization(),
            normalization_residual,
            reps,
            grams,
        })
    }
}

/// `Xi_rho = sum_a eta_a (P^{-1})_{a rho}` with `P_{rho a} = B(v_rho, eta_a)`.
fn serre_dual_frame(fiber: &Fiber, dual_reps: &[Field], forms: &[Field]) -> Result<(Vec<Field>, f64, f64)> {
    let r = forms.len();
    let mut p = CMat::zeros(r, r);
    let mut scale = 1.0;
    for rho in 0..r {
        for a in 0..r {
            p[(rho, a)] = fiber.serre_pairing(&dual_reps[rho], &forms[a])?;
        }
        let nv = linalg::norm_sqr(dual_reps[rho].values()).sqrt();
        let ne = linalg::norm_sqr(forms[rho].values()).sqrt();
        scale *= nv * ne * fiber.grid().weight();
    }
    let det = linalg::determinant(&p).norm();
    let threshold = 1e-10 * scale;
    if det < threshold {
        return Err(Error::PairingSingular { det, threshold });
    }
    let pinv = linalg::inverse(&p).ok_or(Error::PairingSingular { det, threshold })?;
    let mut reps = Vec::with_capacity(r);
    for rho in 0..r {
        let coeffs: Vec<C64> = (0..r).map(|a| pinv[(a, rho)]).collect();
        reps.push(Field::combination(&coeffs, forms)?);
    }
    let check = CMat::from_fn(r, r, |s, rho| fiber.serre_pairing(&dual_reps[s], &reps[rho]).unwrap_or_default());
    let residual = linalg::max_abs(&(check - CMat::identity(r, r)));
    Ok((reps, residual, linalg::condition_number(&p)))
}

/// Frame representatives over (part of) a stencil.
#[derive(Clone, Debug)]
pub struct HoloFrame {
    pub q: usize,
    pub rank: usize,
    pub stencil: SStencil,
    pub normalization: Normalization,
    /// Largest deviation of the normalising functionals from the identity.
    pub normalization_residual: f64,
    pub reps: BTreeMap<Offset, Vec<Field>>,
    pub grams: BTreeMap<Offset, CMat>,
}

impl HoloFrame {
    /// Gram matrices of this frame as a [`GramField`].
    pub fn gram_field(&self) -> GramField {
        GramField { eta: self.stencil.eta, base_dim: self.stencil.base_dim(), grams: self.grams.clone() }
    }
}

/// Holomorphic frame of `R^0 p_* F` on the full `3^{2m}` stencil.
pub fn holo_frame_q0(spec: &FamilySpec, stencil: &SStencil, options: &SolverOptions) -> Result<HoloFrame> {
    let b = FrameBuilder::new(spec, 0, stencil, options)?;
    b.frame(&stencil.full_offsets())
}

/// Holomorphic frame of `R^1 p_* F` on the full `3^{2m}` stencil.
pub fn holo_frame_q1(spec: &FamilySpec, stencil: &SStencil, options: &SolverOptions) -> Result<HoloFrame> {
    let b = FrameBuilder::new(spec, 1, stencil, options)?;
    b.frame(&stencil.full_offsets())
}

/// Gram matrix `H_{rho sigma} = <xi_rho, xi_sigma>` of a frame at one offset.
pub fn gram(frame: &HoloFrame, offset: &[i8]) -> Result<CMat> {
    frame
        .grams
        .get(offset)
        .cloned()
        .ok_or_else(|| Error::ShapeMismatch(format!("offset {offset:?} not in frame")))
}

/// Gram matrices on stencil offsets.
#[derive(Clone, Debug, PartialEq)]
pub struct GramField {
    pub eta: f64,
    pub base_dim: usize,
    pub grams: BTreeMap<Offset, CMat>,
}

impl GramField {
    /// Builds a field by sampling a Gram function at the curvature offsets.
    pub fn from_fn<F: Fn(&[C64]) -> CMat>(stencil: &SStencil, f: F) -> Self {
        let grams = stencil.curvature_offsets().into_iter().map(|o| {
            let g = f(&stencil.point(&o));
            (o, g)
        }).collect();
        Self { eta: stencil.eta, base_dim: stencil.base_dim(), grams }
    }

    fn get(&self, o: &[i8]) -> Result<&CMat> {
        self.grams.get(o).ok_or_else(|| Error::ShapeMismatch(format!("Gram matrix missing at offset {o:?}")))
    }

    fn origin(&self) -> Offset {
        vec![0; 2 * self.base_dim]
    }

    /// Centered Gram matrix.
    pub fn center(&self) -> Result<&CMat> {
        self.get(&self.origin())
    }

    /// `H -> C^T H conj(C)`, i.e. the frame `xi'_rho = sum_a xi_a C_{a rho}`.
    pub fn transformed(&self, c: &CMat) -> GramField {
        let ct = c.transpose();
        let cc = c.map(|z| z.conj());
        GramField {
            eta: self.eta,
            base_dim: self.base_dim,
            grams: self.grams.iter().map(|(o, h)| (o.clone(), &ct * h * &cc)).collect(),
        }
    }

    /// Constant change of frame making the center Gram the identity,
    /// `C = conj(H_0^{-1/2})`.
    pub fn orthonormalizer(&self) -> Result<CMat> {
        let h0 = self.center()?;
        let r = linalg::inv_sqrt_hermitian(h0)
            .ok_or_else(|| Error::Solver("center Gram matrix is not positive definite".into()))?;
        Ok(r.map(|z| z.conj()))
    }

    /// Applies the holomorphic gauge `g(s) = exp(-sum_k (s_k - s0_k) B_k)`
    /// with `B_k` chosen so the gauged Gram has vanishing `d_k` at the
    /// center. The curvature is unchanged, but the exponential growth a
    /// normalised frame picks up across the stencil no longer feeds the
    /// truncation error of the second differences.
    pub fn normal_gauged(&self) -> Result<GramField> {
        let h0 = self.center()?;
        let hinv = linalg::inverse(h0).ok_or_else(|| Error::Solver("singular center Gram matrix".into()))?;
        let b: Vec<CMat> = (0..self.base_dim)
            .map(|k| Ok((self.d_k(k)? * &hinv).transpose()))
            .collect::<Result<_>>()?;
        let mut grams = BTreeMap::new();
        for (o, h) in &self.grams {
            let mut exponent = CMat::zeros(h.nrows(), h.ncols());
            for (k, bk) in b.iter().enumerate() {
                let ds = C64::new(f64::from(o[2 * k]), f64::from(o[2 * k + 1])) * self.eta;
                exponent -= bk * ds;
            }
            let g = exponent.exp();
            let gc = g.map(|z| z.conj());
            grams.insert(o.clone(), g.transpose() * h * gc);
        }
        Ok(GramField { eta: self.eta, base_dim: self.base_dim, grams })
    }

    fn real_first(&self, r: usize) -> Result<CMat> {
        let mut p = self.origin();
        p[r] = 1;
        let mut m = self.origin();
        m[r] = -1;
        Ok((self.get(&p)? - self.get(&m)?) * C64::new(0.5 / self.eta, 0.0))
    }

    fn real_second(&self, r: usize, u: usize) -> Result<CMat> {
        let h2 = self.eta * self.eta;
        if r == u {
            let mut p = self.origin();
            p[r] = 1;
            let mut m = self.origin();
            m[r] = -1;
            let c = self.center()?;
            return Ok((self.get(&p)? + self.get(&m)? - c * C64::new(2.0, 0.0)) * C64::new(1.0 / h2, 0.0));
        }
        if r / 2 == u / 2 {
            // Mixed derivative in the same complex coordinate cancels in d d-bar.
            let r0 = self.center()?;
            return Ok(CMat::zeros(r0.nrows(), r0.ncols()));
        }
        let corner = |a: i8, b: i8| {
            let mut o = self.origin();
            o[r] = a;
            o[u] = b;
            o
        };
        Ok((self.get(&corner(1, 1))? - self.get(&corner(1, -1))? - self.get(&corner(-1, 1))? + self.get(&corner(-1, -1))?)
            * C64::new(0.25 / h2, 0.0))
    }

    /// `d_k H` at the center.
    pub fn d_k(&self, k: usize) -> Result<CMat> {
        Ok((self.real_first(2 * k)? - self.real_first(2 * k + 1)? * C64::new(0.0, 1.0)) * C64::new(0.5, 0.0))
    }

    /// `d_lbar H` at the center.
    pub fn d_lbar(&self, l: usize) -> Result<CMat> {
        Ok((self.real_first(2 * l)? + self.real_first(2 * l + 1)? * C64::new(0.0, 1.0)) * C64::new(0.5, 0.0))
    }

    /// `d_k d_lbar H` at the center.
    pub fn d_k_d_lbar(&self, k: usize, l: usize) -> Result<CMat> {
        let (xk, yk, xl, yl) = (2 * k, 2 * k + 1, 2 * l, 2 * l + 1);
        let i = C64::new(0.0, 1.0);
        let v = self.real_second(xk, xl)? + self.real_second(yk, yl)? + (self.real_second(xk, yl)? - self.real_second(yk, xl)?) * i;
        Ok(v * C64::new(0.25, 0.0))
    }
}

/// Chern curvature `R = -d_k d_lbar H + (d_k H) H^{-1} (d_lbar H)` of a Gram
/// field at the stencil center, by centered finite differences.
pub fn chern_curvature_fd(gram_field: &GramField) -> Result<CurvatureTensor> {
    let h0 = gram_field.center()?;
    let rank = h0.nrows();
    let m = gram_field.base_dim;
    let hinv = linalg::inverse(h0).ok_or_else(|| Error::Solver("singular center Gram matrix".into()))?;
    let mut out = CurvatureTensor::zeros(rank, m);
    for k in 0..m {
        let dk = gram_field.d_k(k)?;
        for l in 0..m {
            let dl = gram_field.d_lbar(l)?;
            let block = -gram_field.d_k_d_lbar(k, l)? + &dk * &hinv * &dl;
            out.set_block(k, l, &block);
        }
    }
    Ok(out)
}

/// Result of [`harmonize_family`].
#[derive(Clone, Debug)]
pub struct Harmonized {
    /// Fiberwise harmonic projections, keyed like the input.
    pub outputs: BTreeMap<Offset, Field>,
    /// Largest `|H(input - output)| / |input|`.
    pub class_defect: f64,
    /// Largest change of the Serre pairing with the dual frame (`q = 1` only).
    pub pairing_defect: f64,
}

/// Replaces each fiberwise `dbar`-closed input by its harmonic projection.
///
/// Sections are closed when they lie in the numerical kernel; the check is
/// `|(1 - H) u| <= 1e-8 |u|`. `(0,1)`-forms are always closed on a curve.
pub fn harmonize_family(
    spec: &FamilySpec,
    stencil: &SStencil,
    closed_family: &BTreeMap<Offset, Field>,
    options: &SolverOptions,
) -> Result<Harmonized> {
    let entries: Vec<(&Offset, &Field)> = closed_family.iter().collect();
    let dual = spec.dual();
    let results: Vec<Result<(Offset, Field, f64, f64)>> = entries
        .par_iter()
        .map(|(o, input)| {
            let s = stencil.point(o);
            let fiber = Fiber::new(spec, &s, options)?;
            let basis = fiber.harmonic_basis(input.kind())?;
            let output = fiber.project(&basis, input)?;
            let norm = fiber.norm(input)?.max(f64::MIN_POSITIVE);
            let rest = input.sub(&output)?;
            if input.kind() == FormKind::Section {
                let defect = fiber.norm(&rest)? / norm;
                if defect > 1e-8 {
                    return Err(Error::ClosednessViolation(defect));
                }
            }
            let class_defect = fiber.norm(&fiber.project(&basis, &rest)?)? / norm;
            let mut pairing_defect: f64 = 0.0;
            if input.kind() == FormKind::Form01 {
                let dual_fiber = Fiber::new(&dual, &s, options)?;
                let dual_basis = dual_fiber.harmonic_basis(FormKind::Section)?;
                for v in &dual_basis.vectors {
                    let before = fiber.serre_pairing(v, input)?;
                    let after = fiber.serre_pairing(v, &output)?;
                    pairing_defect = pairing_defect.max((before - after).norm());
                }
            }
            Ok(((*o).clone(), output, class_defect, pairing_defect))
        })
        .collect();
    let mut outputs = BTreeMap::new();
    let mut class_defect: f64 = 0.0;
    let mut pairing_defect: f64 = 0.0;
    for r in results {
        let (o, f, c, p) = r?;
        outputs.insert(o, f);
        class_defect = class_defect.max(c);
        pairing_defect = pairing_defect.max(p);
    }
    Ok(Harmonized { outputs, class_defect, pairing_defect })
}

/// Harmonic dimensions over the full stencil.
#[derive(Clone, Debug, PartialEq)]
pub struct RankReport {
    pub constant: bool,
    /// `None` where no admissible spectral gap exists.
    pub dimensions: Vec<(Offset, Option<usize>)>,
    pub offending: Vec<Offset>,
}

/// Checks that the harmonic dimension in degree `q` is the same at every
/// point of the `3^{2m}` stencil.
pub fn rank_constancy_check(spec: &FamilySpec, stencil: &SStencil, q: usize, options: &SolverOptions) -> Result<RankReport> {
    rank_constancy_on(spec, stencil, q, &stencil.full_offsets(), options)
}

/// [`rank_constancy_check`] restricted to the given offsets.
pub fn rank_constancy_on(
    spec: &FamilySpec,
    stencil: &SStencil,
    q: usize,
    offsets: &[Offset],
    options: &SolverOptions,
) -> Result<RankReport> {
    let kind = FormKind::from_q(q)?;
    let dims: Vec<Result<Option<usize>>> = offsets
        .par_iter()
        .map(|o| {
            let fiber = Fiber::new(spec, &stencil.point(o), options)?;
            match fiber.harmonic_basis(kind) {
                Ok(b) => Ok(Some(b.dimension())),
                Err(Error::NotLocallyFree(_)) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect();
    let dimensions: Vec<(Offset, Option<usize>)> =
        offsets.iter().cloned().zip(dims).map(|(o, d)| d.map(|d| (o, d))).collect::<Result<_>>()?;
    let origin = stencil.origin();
    let reference = dimensions.iter().find(|(o, _)| *o == origin).map(|(_, d)| *d).unwrap_or(dimensions[0].1);
    let offending: Vec<Offset> = dimensions
        .iter()
        .filter(|(_, d)| d.is_none() || *d != reference)
        .map(|(o, _)| o.clone())
        .collect();
    Ok(RankReport { constant: offending.is_empty() && reference.is_some(), dimensions, offending })
}
