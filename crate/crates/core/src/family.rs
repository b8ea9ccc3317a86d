//! The model family: degree-`d` hermitian line bundles on `X = C/(Z + tau Z)`
//! deformed by flat twists over a parameter domain `S` in `C^m`.
//!
//! * metric `h = exp(-w(z) - phi(s))`, `w = 2 pi d (Im z)^2 / t`;
//! * holomorphic multipliers `1` and `exp(-pi i d (2z + tau))`;
//! * deformation `dbar_s = dbar + alpha(s)`, `alpha(s) = sum_k c_k s^k dzbar`;
//! * rescale weight `phi(s) = sum A_{k lbar} s^k conj(s^l) + beta |s|^4`.
//!
//! With `theta = (-d_z w - conj(alpha)) dz - d_k phi ds^k + alpha dzbar` the
//! total curvature is
//! `(pi d / t) dz^dzbar + c_k ds^k^dzbar + conj(c_l) dz^ds^lbar + phi_{k lbar} ds^k^ds^lbar`.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::fields::{EndField, FormKind};
use crate::grid::{self, TorusGrid, WrapRule};
use crate::linalg::CMat;
use crate::C64;

/// Closed-form blocks of the total curvature at one base point.
#[derive(Clone, Debug, PartialEq)]
pub struct CurvatureBlocks {
    /// `dz ^ dzbar` coefficient, `pi d / t`.
    pub f_zzbar: f64,
    /// `ds^k ^ dzbar` coefficients, `c_k`.
    pub f_k_zbar: Vec<C64>,
    /// `dz ^ ds^lbar` coefficients, `conj(c_l)`.
    pub f_z_lbar: Vec<C64>,
    /// `ds^k ^ ds^lbar` coefficients, `d_k d_lbar phi`.
    pub f_klbar: CMat,
}

/// Components of the Chern connection form at a point of `X x S`.
#[derive(Clone, Debug, PartialEq)]
pub struct Connection {
    pub dz: C64,
    pub dzbar: C64,
    pub ds: Vec<C64>,
}

/// Full description of a holomorphic family of hermitian line bundles.
#[derive(Clone, Debug, PartialEq)]
pub struct FamilySpec {
    grid: TorusGrid,
    degree: i64,
    twist: Vec<C64>,
    rescale: CMat,
    rescale_quartic: f64,
}

impl FamilySpec {
    /// Validates and builds a family. `rescale` is the Hermitian `m x m`
    /// matrix `A`; `m` must be 1 or 2.
    pub fn new(grid: TorusGrid, degree: i64, twist: Vec<C64>, rescale: CMat) -> Result<Self> {
        let m = twist.len();
        if !(1..=2).contains(&m) {
            return Err(Error::InvalidFamily(format!("base dimension must be 1 or 2, got {m}")));
        }
        if rescale.nrows() != m || rescale.ncols() != m {
            return Err(Error::InvalidFamily(format!(
                "rescale must be {m}x{m}, got {}x{}",
                rescale.nrows(),
                rescale.ncols()
            )));
        }
        if twist.iter().chain(rescale.iter()).any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidFamily("non-finite twist or rescale entry".into()));
        }
        let defect = (&rescale - rescale.adjoint()).norm();
        if defect > 1e-12 * (1.0 + rescale.norm()) {
            return Err(Error::InvalidFamily(format!("rescale matrix is not Hermitian (defect {defect:.3e})")));
        }
        let rescale = (&rescale + rescale.adjoint()) * C64::new(0.5, 0.0);
        Ok(Self { grid, degree, twist, rescale, rescale_quartic: 0.0 })
    }

    /// Adds the quartic term `beta |s|^4` to the rescale weight.
    pub fn with_quartic(mut self, beta: f64) -> Result<Self> {
        if !beta.is_finite() {
            return Err(Error::InvalidFamily("non-finite quartic rescale coefficient".into()));
        }
        self.rescale_quartic = beta;
        Ok(self)
    }

    pub fn with_degree(&self, degree: i64) -> Self {
        Self { degree, ..self.clone() }
    }

    pub fn with_grid(&self, grid: TorusGrid) -> Self {
        Self { grid, ..self.clone() }
    }

    pub fn with_twist(&self, twist: Vec<C64>) -> Result<Self> {
        Self::new(self.grid.clone(), self.degree, twist, self.rescale.clone())?.with_quartic(self.rescale_quartic)
    }

    pub fn with_rescale(&self, rescale: CMat, quartic: f64) -> Result<Self> {
        Self::new(self.grid.clone(), self.degree, self.twist.clone(), rescale)?.with_quartic(quartic)
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn degree(&self) -> i64 {
        self.degree
    }

    pub fn twist(&self) -> &[C64] {
        &self.twist
    }

    pub fn rescale(&self) -> &CMat {
        &self.rescale
    }

    pub fn rescale_quartic(&self) -> f64 {
        self.rescale_quartic
    }

    /// Base dimension `m`.
    pub fn base_dim(&self) -> usize {
        self.twist.len()
    }

    pub(crate) fn check_point(&self, s: &[C64]) -> Result<()> {
        if s.len() != self.base_dim() {
            return Err(Error::ShapeMismatch(format!("base point has {} coordinates, family has {}", s.len(), self.base_dim())));
        }
        Ok(())
    }

    fn check_index(&self, k: usize) -> Result<()> {
        if k >= self.base_dim() {
            return Err(Error::ShapeMismatch(format!("base index {k} out of range for m = {}", self.base_dim())));
        }
        Ok(())
    }

    /// Twist `alpha(s) = sum_k c_k s^k` (the `dzbar` coefficient).
    pub fn alpha(&self, s: &[C64]) -> C64 {
        self.twist.iter().zip(s).map(|(c, x)| c * x).sum()
    }

    fn s_norm_sqr(s: &[C64]) -> f64 {
        s.iter().map(|x| x.norm_sqr()).sum()
    }

    /// Rescale weight `phi(s)`.
    pub fn phi(&self, s: &[C64]) -> f64 {
        let m = self.base_dim();
        let mut acc = C64::new(0.0, 0.0);
        for k in 0..m {
            for l in 0..m {
                acc += self.rescale[(k, l)] * s[k] * s[l].conj();
            }
        }
        acc.re + self.rescale_quartic * Self::s_norm_sqr(s).powi(2)
    }

    /// `d phi / d s^k`.
    pub fn dphi(&self, s: &[C64], k: usize) -> C64 {
        let m = self.base_dim();
        let quad: C64 = (0..m).map(|l| self.rescale[(k, l)] * s[l].conj()).sum();
        quad + s[k].conj() * (2.0 * self.rescale_quartic * Self::s_norm_sqr(s))
    }

    /// `d_k d_lbar phi`.
    pub fn phi_hessian(&self, s: &[C64], k: usize, l: usize) -> C64 {
        let beta = self.rescale_quartic;
        let mut v = self.rescale[(k, l)] + s[k].conj() * s[l] * (2.0 * beta);
        if k == l {
            v += C64::new(2.0 * beta * Self::s_norm_sqr(s), 0.0);
        }
        v
    }

    /// Metric weight `w(z) = 2 pi d (Im z)^2 / t`.
    pub fn weight_at(&self, z: C64) -> f64 {
        2.0 * PI * self.degree as f64 * z.im * z.im / self.grid.t()
    }

    /// Holomorphic factor of automorphy of each fiber.
    pub fn theta_wrap(&self) -> WrapRule {
        WrapRule::Theta { degree: self.degree }
    }

    /// Chern connection form at `(z, s)` in the holomorphic frame.
    pub fn connection(&self, z: C64, s: &[C64]) -> Connection {
        // d_z w = -2 pi i d y / t
        let dzw = C64::new(0.0, -2.0 * PI * self.degree as f64 * z.im / self.grid.t());
        let alpha = self.alpha(s);
        Connection {
            dz: -dzw - alpha.conj(),
            dzbar: alpha,
            ds: (0..self.base_dim()).map(|k| -self.dphi(s, k)).collect(),
        }
    }

    /// Closed-form curvature blocks at `s`.
    pub fn curvature_blocks(&self, s: &[C64]) -> Result<CurvatureBlocks> {
        self.check_point(s)?;
        let m = self.base_dim();
        Ok(CurvatureBlocks {
            f_zzbar: PI * self.degree as f64 / self.grid.t(),
            f_k_zbar: self.twist.clone(),
            f_z_lbar: self.twist.iter().map(|c| c.conj()).collect(),
            f_klbar: CMat::from_fn(m, m, |k, l| self.phi_hessian(s, k, l)),
        })
    }

    /// `(i / 2 pi) int F`, with `dz ^ dzbar = -2i dx ^ dy`.
    pub fn chern_degree(&self) -> f64 {
        let f = PI * self.degree as f64 / self.grid.t();
        let integral = C64::new(f * self.grid.t(), 0.0) * C64::new(0.0, -2.0);
        (C64::new(0.0, 1.0 / (2.0 * PI)) * integral).re
    }

    /// Kodaira-Spencer representative `rho_k = -c_k dzbar ⊗ id`.
    pub fn kodaira_spencer(&self, s: &[C64], k: usize) -> Result<EndField> {
        self.check_point(s)?;
        self.check_index(k)?;
        Ok(EndField::scalar(FormKind::Form01, -self.twist[k], self.grid.len()))
    }

    /// `rho_{k lbar} = d_k d_lbar phi(s) ⊗ id`.
    pub fn rho_klbar(&self, s: &[C64], k: usize, l: usize) -> Result<EndField> {
        self.check_point(s)?;
        self.check_index(k)?;
        self.check_index(l)?;
        Ok(EndField::scalar(FormKind::Section, self.phi_hessian(s, k, l), self.grid.len()))
    }

    /// `Phi_{k lbar}(s)`: fiber average of `(1/r) tr R_{k lbar}`, by quadrature.
    pub fn phi_klbar(&self, s: &[C64], k: usize, l: usize) -> Result<C64> {
        let rho = self.rho_klbar(s, k, l)?;
        let rank = rho.rank() as f64;
        let total = grid::integrate(&self.grid, &rho.trace())?;
        Ok(total / (rank * self.grid.t()))
    }

    /// Family with the rescale weight replaced by `phi + phi_0`, where
    /// `phi_0(s)` is the fiber average of `chi = -phi(s)`, so that every
    /// `Phi_{k lbar}` of the result vanishes.
    pub fn rescale_to_kill_h(&self) -> FamilySpec {
        let m = self.base_dim();
        let avg = |value: C64| {
            let field = vec![value; self.grid.len()];
            grid::integrate(&self.grid, &field).map(|v| v / self.grid.t()).unwrap_or(value)
        };
        let correction = CMat::from_fn(m, m, |k, l| avg(-self.rescale[(k, l)]));
        let quartic = avg(C64::new(-self.rescale_quartic, 0.0)).re;
        let mut out = self.clone();
        let summed = &self.rescale + correction;
        out.rescale = (&summed + summed.adjoint()) * C64::new(0.5, 0.0);
        out.rescale_quartic = self.rescale_quartic + quartic;
        out
    }

    /// Weil-Petersson inner product `<rho_k, rho_l>` by quadrature.
    pub fn wp_inner(&self, s: &[C64], k: usize, l: usize) -> Result<C64> {
        let a = self.kodaira_spencer(s, k)?;
        let b = self.kodaira_spencer(s, l)?;
        let density: Vec<C64> = a.values().iter().zip(b.values()).map(|(x, y)| x * y.conj()).collect();
        grid::integrate(&self.grid, &density)
    }

    /// Weil-Petersson Gram matrix at `s`.
    pub fn wp_matrix(&self, s: &[C64]) -> Result<CMat> {
        let m = self.base_dim();
        let mut out = CMat::zeros(m, m);
        for k in 0..m {
            for l in 0..m {
                out[(k, l)] = self.wp_inner(s, k, l)?;
            }
        }
        Ok(out)
    }

    /// Trace of the induced curvature `[R_{k lbar}, ·]` on `End(F)`.
    pub fn endo_trace_curvature(&self, s: &[C64], k: usize, l: usize) -> Result<C64> {
        let r = CMat::from_element(1, 1, self.phi_hessian(s, k, l));
        self.check_index(k)?;
        self.check_index(l)?;
        Ok(endo_trace(&r))
    }

    /// Serre-dual family: degree `-d`, twist `-c`, rescale `-phi`.
    pub fn dual(&self) -> FamilySpec {
        FamilySpec {
            grid: self.grid.clone(),
            degree: -self.degree,
            twist: self.twist.iter().map(|c| -c).collect(),
            rescale: -self.rescale.clone(),
            rescale_quartic: -self.rescale_quartic,
        }
    }
}

/// Trace of the linear map `X -> [R, X]` on `r x r` matrices.
pub fn endo_trace(r: &CMat) -> C64 {
    let n = r.nrows();
    let mut trace = C64::new(0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            let mut e = CMat::zeros(n, n);
            e[(i, j)] = C64::new(1.0, 0.0);
            let ad = r * &e - &e * r;
            trace += ad[(i, j)];
        }
    }
    trace
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(d: i64) -> FamilySpec {
        let g = TorusGrid::new(C64::new(0.0, 1.0), 16, 4).unwrap();
        FamilySpec::new(g, d, vec![C64::new(PI, 0.0)], CMat::from_element(1, 1, C64::new(0.3, 0.0))).unwrap()
    }

    #[test]
    fn blocks_of_default_family() {
        let b = spec(2).curvature_blocks(&[C64::new(0.1, 0.2)]).unwrap();
        assert!((b.f_zzbar - 2.0 * PI).abs() < 1e-15);
        assert_eq!(b.f_k_zbar[0], C64::new(PI, 0.0));
        assert!((b.f_klbar[(0, 0)] - C64::new(0.3, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn rescale_kills_phi() {
        let s = spec(2).with_quartic(0.7).unwrap();
        let r = s.rescale_to_kill_h();
        let p = [C64::new(0.3, -0.2)];
        assert!(r.phi_klbar(&p, 0, 0).unwrap().norm() < 1e-12);
        assert!(r.phi(&p).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_hermitian_rescale() {
        let g = TorusGrid::new(C64::new(0.0, 1.0), 16, 4).unwrap();
        let a = CMat::from_row_slice(2, 2, &[C64::new(1.0, 0.0), C64::new(0.0, 1.0), C64::new(0.0, 1.0), C64::new(1.0, 0.0)]);
        assert!(FamilySpec::new(g, 1, vec![C64::new(1.0, 0.0); 2], a).is_err());
    }
}
