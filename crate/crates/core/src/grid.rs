//! Flat elliptic curve `X = C / (Z + tau Z)`: lattice, sample grid, twisted
//! finite differences, quadrature and the `Lambda` contraction.
//!
//! Grid points are `z_{jk} = j/N + (k/N) tau` with `j` running along the real
//! lattice direction (coordinate `a`) and `k` along `tau` (coordinate `b`).
//! Flat storage index is `j * N + k`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::C64;

/// Accuracy order of the centered first-derivative stencil.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StencilOrder {
    Two,
    Four,
}

impl StencilOrder {
    pub fn from_int(order: usize) -> Result<Self> {
        match order {
            2 => Ok(StencilOrder::Two),
            4 => Ok(StencilOrder::Four),
            other => Err(Error::InvalidGrid(format!("stencil_order must be 2 or 4, got {other}"))),
        }
    }

    pub fn as_int(self) -> usize {
        match self {
            StencilOrder::Two => 2,
            StencilOrder::Four => 4,
        }
    }

    /// Offsets and weights of the first derivative in units of the grid spacing.
    pub fn coefficients(self) -> &'static [(i64, f64)] {
        const TWO: [(i64, f64); 2] = [(-1, -0.5), (1, 0.5)];
        const FOUR: [(i64, f64); 4] =
            [(-2, 1.0 / 12.0), (-1, -8.0 / 12.0), (1, 8.0 / 12.0), (2, -1.0 / 12.0)];
        match self {
            StencilOrder::Two => &TWO,
            StencilOrder::Four => &FOUR,
        }
    }

    /// Largest offset used by the stencil.
    pub fn radius(self) -> usize {
        match self {
            StencilOrder::Two => 1,
            StencilOrder::Four => 2,
        }
    }
}

/// Uniform `N x N` sample grid on the torus with lattice generator `tau`.
#[derive(Clone, Debug, PartialEq)]
pub struct TorusGrid {
    tau: C64,
    n_side: usize,
    stencil_order: StencilOrder,
}

impl TorusGrid {
    /// Builds a grid; rejects `Im tau <= 0`, odd `N` and `N < 8`.
    pub fn new(tau: C64, n_side: usize, stencil_order: usize) -> Result<Self> {
        if !(tau.im > 0.0) || !tau.re.is_finite() || !tau.im.is_finite() {
            return Err(Error::LatticeOrientation(tau.im));
        }
        if n_side < 8 || n_side % 2 != 0 {
            return Err(Error::InvalidGrid(format!("n_side must be even and at least 8, got {n_side}")));
        }
        let stencil_order = StencilOrder::from_int(stencil_order)?;
        Ok(Self { tau, n_side, stencil_order })
    }

    pub fn tau(&self) -> C64 {
        self.tau
    }

    pub fn n_side(&self) -> usize {
        self.n_side
    }

    /// Number of grid points `N^2`.
    pub fn len(&self) -> usize {
        self.n_side * self.n_side
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Fiber volume `t = Im tau`.
    pub fn t(&self) -> f64 {
        self.tau.im
    }

    pub fn stencil_order(&self) -> StencilOrder {
        self.stencil_order
    }

    /// Uniform quadrature weight `t / N^2`.
    pub fn weight(&self) -> f64 {
        self.t() / self.len() as f64
    }

    #[inline]
    pub fn index(&self, j: usize, k: usize) -> usize {
        j * self.n_side + k
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx / self.n_side, idx % self.n_side)
    }

    /// Lattice coordinates `(a, b)` of a grid point.
    pub fn ab(&self, idx: usize) -> (f64, f64) {
        let (j, k) = self.coords(idx);
        let n = self.n_side as f64;
        (j as f64 / n, k as f64 / n)
    }

    /// Complex coordinate of a grid point.
    pub fn point(&self, idx: usize) -> C64 {
        let (a, b) = self.ab(idx);
        C64::new(a, 0.0) + self.tau * b
    }

    /// Samples a function of `z` on the grid.
    pub fn sample<F: Fn(C64) -> C64>(&self, f: F) -> Vec<C64> {
        (0..self.len()).map(|i| f(self.point(i))).collect()
    }

    /// Samples a function of the lattice coordinates `(a, b)` on the grid.
    pub fn sample_ab<F: Fn(f64, f64) -> C64>(&self, f: F) -> Vec<C64> {
        (0..self.len())
            .map(|i| {
                let (a, b) = self.ab(i);
                f(a, b)
            })
            .collect()
    }

    pub(crate) fn check_len(&self, len: usize) -> Result<()> {
        if len != self.len() {
            return Err(Error::ShapeMismatch(format!("expected {} samples, got {len}", self.len())));
        }
        Ok(())
    }
}

/// Multipliers applied when a stencil wraps across the fundamental domain.
///
/// `factor(p, q)` is the total multiplier relating `f(z + p + q tau)` to `f(z)`.
#[derive(Clone, Debug, PartialEq)]
pub enum WrapRule {
    /// Doubly periodic data.
    Periodic,
    /// Constant multipliers (a flat unitary twist).
    Flat { mult_a: C64, mult_b: C64 },
    /// Holomorphic factor of automorphy of a degree-`d` line bundle:
    /// `f(z + 1) = f(z)`, `f(z + tau) = exp(-pi i d (2z + tau)) f(z)`.
    Theta { degree: i64 },
    /// Unitary gauge of the same bundle in lattice coordinates:
    /// `f(a + 1, b) = f(a, b)`, `f(a, b + 1) = exp(-2 pi i d a) f(a, b)`.
    Landau { degree: i64 },
}

impl WrapRule {
    /// Multiplier relating `f(z + p + q tau)` to `f(z)` at the point `z = a + b tau`.
    pub fn factor_at(&self, tau: C64, a: f64, b: f64, p: i64, q: i64) -> C64 {
        match *self {
            WrapRule::Periodic => C64::new(1.0, 0.0),
            WrapRule::Flat { mult_a, mult_b } => mult_a.powi(p as i32) * mult_b.powi(q as i32),
            WrapRule::Theta { degree } => {
                let z = C64::new(a, 0.0) + tau * b;
                let qf = q as f64;
                let arg = (z * (2.0 * qf) + tau * (qf * qf)) * C64::new(0.0, -PI * degree as f64);
                arg.exp()
            }
            WrapRule::Landau { degree } => {
                let phase = -2.0 * PI * (degree as f64) * (q as f64) * a;
                C64::from_polar(1.0, phase)
            }
        }
    }

    /// Multiplier for a single wrap in the `1` direction at grid index `idx`.
    pub fn mult_a(&self, grid: &TorusGrid, idx: usize) -> C64 {
        let (a, b) = grid.ab(idx);
        self.factor_at(grid.tau(), a, b, 1, 0)
    }

    /// Multiplier for a single wrap in the `tau` direction at grid index `idx`.
    pub fn mult_b(&self, grid: &TorusGrid, idx: usize) -> C64 {
        let (a, b) = grid.ab(idx);
        self.factor_at(grid.tau(), a, b, 0, 1)
    }

    /// Largest deviation between the two orders of composing one wrap in each
    /// direction, over all grid points.
    pub fn cocycle_defect(&self, grid: &TorusGrid) -> f64 {
        let tau = grid.tau();
        (0..grid.len())
            .map(|i| {
                let (a, b) = grid.ab(i);
                let a_then_b = self.factor_at(tau, a, b, 1, 0) * self.factor_at(tau, a + 1.0, b, 0, 1);
                let b_then_a = self.factor_at(tau, a, b, 0, 1) * self.factor_at(tau, a, b + 1.0, 1, 0);
                (a_then_b - b_then_a).norm()
            })
            .fold(0.0, f64::max)
    }
}

/// Gather table realising a lattice shift: `out[i] = factor[i] * f[src[i]]`.
#[derive(Clone, Debug)]
struct ShiftTable {
    src: Vec<usize>,
    factor: Vec<C64>,
}

/// Precomputed shifts along both lattice directions for a fixed wrap rule.
#[derive(Clone, Debug)]
pub struct Shifter {
    grid: TorusGrid,
    radius: usize,
    along_a: Vec<ShiftTable>,
    along_b: Vec<ShiftTable>,
}

impl Shifter {
    /// Tables for all offsets in `-radius..=radius` in both directions.
    pub fn new(grid: &TorusGrid, wrap: &WrapRule, radius: usize) -> Self {
        let n = grid.n_side() as i64;
        let tau = grid.tau();
        let build = |offset: i64, along_a: bool| {
            let mut src = Vec::with_capacity(grid.len());
            let mut factor = Vec::with_capacity(grid.len());
            for idx in 0..grid.len() {
                let (j, k) = grid.coords(idx);
                let (jj, kk) = if along_a { (j as i64 + offset, k as i64) } else { (j as i64, k as i64 + offset) };
                let (p, j0) = (jj.div_euclid(n), jj.rem_euclid(n));
                let (q, k0) = (kk.div_euclid(n), kk.rem_euclid(n));
                let base = grid.index(j0 as usize, k0 as usize);
                let (a, b) = grid.ab(base);
                src.push(base);
                factor.push(wrap.factor_at(tau, a, b, p, q));
            }
            ShiftTable { src, factor }
        };
        let r = radius as i64;
        let along_a = (-r..=r).map(|o| build(o, true)).collect();
        let along_b = (-r..=r).map(|o| build(o, false)).collect();
        Self { grid: grid.clone(), radius, along_a, along_b }
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    fn table(&self, along_a: bool, offset: i64) -> &ShiftTable {
        assert!(offset.unsigned_abs() as usize <= self.radius, "shift offset exceeds table radius");
        let slot = (offset + self.radius as i64) as usize;
        if along_a {
            &self.along_a[slot]
        } else {
            &self.along_b[slot]
        }
    }

    /// Gather table of one shift: row `i` of the shift reads
    /// `factor[i] * f[src[i]]`.
    pub fn shift_entries(&self, along_a: bool, offset: i64) -> (&[usize], &[C64]) {
        let t = self.table(along_a, offset);
        (&t.src, &t.factor)
    }

    /// `out += coef * f(shifted by offset along a or b)`.
    #[inline]
    pub fn accumulate(&self, along_a: bool, offset: i64, coef: C64, f: &[C64], out: &mut [C64]) {
        let t = self.table(along_a, offset);
        for ((o, &s), &fac) in out.iter_mut().zip(&t.src).zip(&t.factor) {
            *o += coef * fac * f[s];
        }
    }

    /// Adjoint of [`Shifter::accumulate`]: `out += (coef * S)^H f`.
    #[inline]
    pub fn accumulate_adjoint(&self, along_a: bool, offset: i64, coef: C64, f: &[C64], out: &mut [C64]) {
        let t = self.table(along_a, offset);
        for ((v, &s), &fac) in f.iter().zip(&t.src).zip(&t.factor) {
            out[s] += (coef * fac).conj() * v;
        }
    }

    /// Shifted copy of `f`.
    pub fn shifted(&self, along_a: bool, offset: i64, f: &[C64]) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); f.len()];
        self.accumulate(along_a, offset, C64::new(1.0, 0.0), f, &mut out);
        out
    }

    /// `out += coef * d/da f` (or `d/db`) with the grid's stencil order.
    pub fn accumulate_derivative(&self, along_a: bool, coef: C64, f: &[C64], out: &mut [C64]) {
        let n = self.grid.n_side() as f64;
        for &(o, w) in self.grid.stencil_order().coefficients() {
            self.accumulate(along_a, o, coef * (w * n), f, out);
        }
    }

    /// `out += coef * d/dzbar f`.
    pub fn accumulate_dzbar(&self, coef: C64, f: &[C64], out: &mut [C64]) {
        let (ca, cb) = dzbar_coefficients(self.grid.tau());
        self.accumulate_derivative(true, coef * ca, f, out);
        self.accumulate_derivative(false, coef * cb, f, out);
    }

    /// `out += coef * d/dz f`.
    pub fn accumulate_dz(&self, coef: C64, f: &[C64], out: &mut [C64]) {
        let (ca, cb) = dz_coefficients(self.grid.tau());
        self.accumulate_derivative(true, coef * ca, f, out);
        self.accumulate_derivative(false, coef * cb, f, out);
    }
}

/// `d/dzbar = ca d/da + cb d/db` with `z = a + b tau`.
pub fn dzbar_coefficients(tau: C64) -> (C64, C64) {
    let den = tau.conj() - tau;
    (-tau / den, C64::new(1.0, 0.0) / den)
}

/// `d/dz = ca d/da + cb d/db` with `z = a + b tau`.
pub fn dz_coefficients(tau: C64) -> (C64, C64) {
    let den = tau.conj() - tau;
    (tau.conj() / den, C64::new(-1.0, 0.0) / den)
}

fn apply<F: Fn(&Shifter, &[C64], &mut [C64])>(grid: &TorusGrid, field: &[C64], wrap: &WrapRule, op: F) -> Result<Vec<C64>> {
    grid.check_len(field.len())?;
    let shifter = Shifter::new(grid, wrap, grid.stencil_order().radius());
    let mut out = vec![C64::new(0.0, 0.0); field.len()];
    op(&shifter, field, &mut out);
    Ok(out)
}

/// Finite-difference derivative along the `1` lattice direction.
pub fn diff_a(grid: &TorusGrid, field: &[C64], wrap: &WrapRule) -> Result<Vec<C64>> {
    apply(grid, field, wrap, |s, f, o| s.accumulate_derivative(true, C64::new(1.0, 0.0), f, o))
}

/// Finite-difference derivative along the `tau` lattice direction.
pub fn diff_b(grid: &TorusGrid, field: &[C64], wrap: &WrapRule) -> Result<Vec<C64>> {
    apply(grid, field, wrap, |s, f, o| s.accumulate_derivative(false, C64::new(1.0, 0.0), f, o))
}

/// Finite-difference `d/dz` with twist-aware wraparound.
pub fn diff_z(grid: &TorusGrid, field: &[C64], wrap: &WrapRule) -> Result<Vec<C64>> {
    apply(grid, field, wrap, |s, f, o| s.accumulate_dz(C64::new(1.0, 0.0), f, o))
}

/// Finite-difference `d/dzbar` with twist-aware wraparound.
pub fn diff_zbar(grid: &TorusGrid, field: &[C64], wrap: &WrapRule) -> Result<Vec<C64>> {
    apply(grid, field, wrap, |s, f, o| s.accumulate_dzbar(C64::new(1.0, 0.0), f, o))
}

/// Uniform quadrature of a density over the fundamental domain.
pub fn integrate(grid: &TorusGrid, density: &[C64]) -> Result<C64> {
    grid.check_len(density.len())?;
    Ok(linalg::sum(density) * grid.weight())
}

/// `sqrt(-1) Lambda` applied to the `dz ^ dzbar` coefficient of a (1,1)-form.
///
/// With `g_{z zbar} = 1` and `omega = (i/2) dz ^ dzbar` this is `c -> 2c`.
pub fn lambda_contract(coef_zzbar: &[C64]) -> Vec<C64> {
    coef_zzbar.iter().map(|c| c * 2.0).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(matches!(TorusGrid::new(c(0.0, -1.0), 16, 4), Err(Error::LatticeOrientation(_))));
        assert!(TorusGrid::new(c(0.0, 1.0), 15, 4).is_err());
        assert!(TorusGrid::new(c(0.0, 1.0), 6, 4).is_err());
        assert!(TorusGrid::new(c(0.0, 1.0), 16, 3).is_err());
    }

    #[test]
    fn area_is_im_tau() {
        let g = TorusGrid::new(c(0.0, 1.0), 16, 4).unwrap();
        let one = vec![c(1.0, 0.0); g.len()];
        assert_eq!(integrate(&g, &one).unwrap(), c(1.0, 0.0));
        let g = TorusGrid::new(c(0.5, 2.0), 32, 4).unwrap();
        let one = vec![c(1.0, 0.0); g.len()];
        assert!((integrate(&g, &one).unwrap() - c(2.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn lambda_of_model_curvature() {
        let d = 2.0;
        let t = 1.0;
        let out = lambda_contract(&[c(PI * d / t, 0.0)]);
        assert!((out[0] - c(2.0 * PI * d / t, 0.0)).norm() < 1e-15);
        // omega = (i/2) dz ^ dzbar, so its coefficient is i/2 and i Lambda omega... = i.
        // Lambda omega = 1 means sqrt(-1) Lambda omega = i: coefficient i/2 maps to i.
        let w = lambda_contract(&[c(0.0, 0.5)]);
        assert!((w[0] - c(0.0, 1.0)).norm() < 1e-15);
    }

    #[test]
    fn shifts_compose_to_identity() {
        let g = TorusGrid::new(c(0.3, 1.2), 8, 4).unwrap();
        let f: Vec<C64> = (0..g.len()).map(|i| c(i as f64, 1.0 / (1.0 + i as f64))).collect();
        let cases = [
            (WrapRule::Landau { degree: 3 }, vec![true, false]),
            (WrapRule::Flat { mult_a: C64::from_polar(1.0, 0.4), mult_b: C64::from_polar(1.0, -1.1) }, vec![true, false]),
            (WrapRule::Theta { degree: 3 }, vec![true]),
        ];
        for (wrap, dirs) in cases {
            let s = Shifter::new(&g, &wrap, 2);
            for along_a in dirs {
                let back = s.shifted(along_a, -2, &s.shifted(along_a, 2, &f));
                for (x, y) in back.iter().zip(&f) {
                    assert!((x - y).norm() < 1e-12 * (1.0 + y.norm()));
                }
            }
        }
    }
}
