//! Derived experiments built on [`verify_theorem`]: the Weil-Petersson table,
//! the Serre duality cross-check, convergence studies and the rescaling demo.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::family::FamilySpec;
use crate::grid::TorusGrid;
use crate::linalg::{self, CMat};
use crate::solver::SolverOptions;
use crate::theorem::{verify_theorem, CurvatureReport, CurvatureTensor};
use crate::C64;

/// Deviation from the center value above which the Weil-Petersson metric is
/// flagged as non-constant.
pub const WP_CONSTANCY_TOL: f64 = 1e-10;

/// Points `center + h (a + i b)` for `a, b` in `n` equispaced values of
/// `[-1, 1]`, varying only the first coordinate.
pub fn square_grid(center: &[C64], half_width: f64, n: usize) -> Vec<Vec<C64>> {
    let ticks: Vec<f64> = match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64).collect(),
    };
    let mut out = Vec::with_capacity(n * n);
    for &a in &ticks {
        for &b in &ticks {
            let mut s = center.to_vec();
            if let Some(first) = s.first_mut() {
                *first += C64::new(a, b) * half_width;
            }
            out.push(s);
        }
    }
    out
}

/// Weil-Petersson Gram matrix at one parameter point.
#[derive(Clone, Debug, PartialEq)]
pub struct WpEntry {
    pub s: Vec<C64>,
    pub gram: CMat,
}

/// Output of [`wp_report`].
#[derive(Clone, Debug, PartialEq)]
pub struct WpReport {
    pub entries: Vec<WpEntry>,
    /// Largest entrywise deviation from the first point's Gram matrix.
    pub max_deviation: f64,
    pub constant: bool,
    /// Smallest eigenvalue of the Hermitian part over all points.
    pub min_eigenvalue: f64,
    pub positive_semidefinite: bool,
}

/// Weil-Petersson metric on a list of parameter points.
pub fn wp_report(spec: &FamilySpec, points: &[Vec<C64>]) -> Result<WpReport> {
    let entries = points
        .iter()
        .map(|s| Ok(WpEntry { s: s.clone(), gram: spec.wp_matrix(s)? }))
        .collect::<Result<Vec<_>>>()?;
    let first = entries.first().ok_or_else(|| Error::Config("empty parameter grid".into()))?;
    let max_deviation = entries.iter().map(|e| linalg::max_abs(&(&e.gram - &first.gram))).fold(0.0, f64::max);
    let min_eigenvalue = entries
        .iter()
        .map(|e| {
            let h = (&e.gram + e.gram.adjoint()) * C64::new(0.5, 0.0);
            linalg::hermitian_eigen(&h).0.into_iter().fold(f64::INFINITY, f64::min)
        })
        .fold(f64::INFINITY, f64::min);
    let scale = linalg::max_abs(&first.gram).max(1.0);
    Ok(WpReport {
        max_deviation,
        constant: max_deviation <= WP_CONSTANCY_TOL,
        min_eigenvalue,
        positive_semidefinite: min_eigenvalue >= -1e-12 * scale,
        entries,
    })
}

/// Output of [`serre_cross_check`].
#[derive(Clone, Debug)]
pub struct SerreReport {
    /// Degree-1 curvature of the family with degree `-1`.
    pub forms: CurvatureTensor,
    /// Degree-0 curvature of its Serre-dual family.
    pub sections: CurvatureTensor,
    /// `|forms + conj(sections)^T| / |forms|`, the transpose swapping `k` and `l`.
    pub mismatch: f64,
    pub forms_residual_rel: f64,
    pub sections_residual_rel: f64,
}

/// Compares the degree-1 direct image of the degree `-1` member of the pair
/// `{spec, spec.dual()}` with the negated conjugate of the degree-0 direct
/// image of the other member.
pub fn serre_cross_check(spec: &FamilySpec, s0: &[C64], eta: f64, options: &SolverOptions) -> Result<SerreReport> {
    let (negative, positive) = match spec.degree() {
        -1 => (spec.clone(), spec.dual()),
        1 => (spec.dual(), spec.clone()),
        d => return Err(Error::Config(format!("serre cross-check needs degree 1 or -1, got {d}"))),
    };
    let forms = verify_theorem(&negative, s0, 1, eta, options)?;
    let sections = verify_theorem(&positive, s0, 0, eta, options)?;
    let predicted = sections.lhs.conj_mirrored().scaled(C64::new(-1.0, 0.0));
    let mismatch = forms.lhs.sub(&predicted)?.norm() / forms.lhs.norm().max(f64::MIN_POSITIVE);
    Ok(SerreReport {
        mismatch,
        forms_residual_rel: forms.residual_rel,
        sections_residual_rel: sections.residual_rel,
        forms: forms.lhs,
        sections: sections.lhs,
    })
}

/// One `(N, eta)` sample of a convergence study.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub n_side: usize,
    pub eta: f64,
    pub residual_rel: f64,
    /// Observed order in `eta` against the next larger `eta` at the same `N`.
    pub order_fit: Option<f64>,
}

/// Output of [`convergence_study`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub q: usize,
    pub stencil_order: usize,
    pub rows: Vec<ConvergenceRow>,
    /// Per `N`, the residual of the left side extrapolated to `eta -> 0` from
    /// the two smallest `eta` values (the plain residual if only one exists).
    pub spatial: Vec<(usize, f64)>,
    /// Least-squares slope of `-log residual` against `log N` over `spatial`.
    pub spatial_order: Option<f64>,
    /// Least-squares slope of `log residual` against `log eta` at the largest `N`.
    pub eta_order: Option<f64>,
}

impl ConvergenceReport {
    /// CSV with header `N,eta,residual_rel,order_fit`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("N,eta,residual_rel,order_fit\n");
        for r in &self.rows {
            let fit = r.order_fit.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{},{}\n", r.n_side, r.eta, r.residual_rel, fit));
        }
        out
    }
}

/// Least-squares slope of `y` against `x`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Runs [`verify_theorem`] for every `N` in `n_list` and `eta` in `eta_list`
/// on the grid of `spec` resized to `N`.
pub fn convergence_study(
    spec: &FamilySpec,
    s0: &[C64],
    q: usize,
    n_list: &[usize],
    eta_list: &[f64],
    options: &SolverOptions,
) -> Result<ConvergenceReport> {
    if n_list.is_empty() || eta_list.is_empty() {
        return Err(Error::Config("convergence study needs non-empty N and eta lists".into()));
    }
    let mut ns = n_list.to_vec();
    ns.sort_unstable();
    ns.dedup();
    let mut etas = eta_list.to_vec();
    etas.sort_by(|a, b| b.total_cmp(a));
    etas.dedup();
    let order = spec.grid().stencil_order().as_int();

    let mut rows = Vec::new();
    let mut spatial = Vec::new();
    for &n in &ns {
        let grid = TorusGrid::new(spec.grid().tau(), n, order)?;
        let sized = spec.with_grid(grid);
        let reports = etas
            .iter()
            .map(|&eta| verify_theorem(&sized, s0, q, eta, options))
            .collect::<Result<Vec<CurvatureReport>>>()?;
        for (i, r) in reports.iter().enumerate() {
            let order_fit = (i > 0).then(|| {
                let prev = &reports[i - 1];
                (prev.residual_rel / r.residual_rel).ln() / (prev.eta / r.eta).ln()
            });
            rows.push(ConvergenceRow { n_side: n, eta: r.eta, residual_rel: r.residual_rel, order_fit });
        }
        spatial.push((n, extrapolated_residual(&reports)?));
    }

    let spatial_order = fit_slope(
        &spatial.iter().map(|(n, _)| (*n as f64).ln()).collect::<Vec<_>>(),
        &spatial.iter().map(|(_, r)| -r.ln()).collect::<Vec<_>>(),
    );
    let n_max = *ns.last().expect("non-empty");
    let finest: Vec<&ConvergenceRow> = rows.iter().filter(|r| r.n_side == n_max).collect();
    let eta_order = fit_slope(
        &finest.iter().map(|r| r.eta.ln()).collect::<Vec<_>>(),
        &finest.iter().map(|r| r.residual_rel.ln()).collect::<Vec<_>>(),
    );
    Ok(ConvergenceReport { q, stencil_order: order, rows, spatial, spatial_order, eta_order })
}

/// Relative residual of the Richardson limit `(r^2 L(eta_2) - L(eta_1)) / (r^2 - 1)`,
/// `r = eta_1 / eta_2`, of the left side built from the two smallest `eta`.
fn extrapolated_residual(reports: &[CurvatureReport]) -> Result<f64> {
    let last = reports.last().ok_or_else(|| Error::Config("no samples".into()))?;
    let lhs = if reports.len() >= 2 {
        let prev = &reports[reports.len() - 2];
        let r2 = (prev.eta / last.eta).powi(2);
        last.lhs.scaled(C64::new(r2, 0.0)).sub(&prev.lhs)?.scaled(C64::new(1.0 / (r2 - 1.0), 0.0))
    } else {
        last.lhs.clone()
    };
    Ok(lhs.sub(&last.rhs())?.norm() / lhs.norm().max(f64::MIN_POSITIVE))
}

/// Output of [`rescale_demo`].
#[derive(Clone, Debug)]
pub struct RescaleReport {
    /// `Phi_{k lbar}(s_0)` of the original family.
    pub phi: CMat,
    /// Largest `|Phi_{k lbar}(s_0)|` after rescaling.
    pub rescaled_phi_max: f64,
    /// Largest entry of `T4` after rescaling.
    pub rescaled_t4_max: f64,
    pub original_residual_rel: f64,
    pub rescaled_residual_rel: f64,
    /// `|L - L' - Phi ⊗ id| / |L|` for the left sides `L`, `L'` before and after.
    pub shift_defect: f64,
    pub original: CurvatureTensor,
    pub rescaled: CurvatureTensor,
}

/// Verifies the curvature formula before and after rescaling the weight so
/// that its fiber-averaged curvature vanishes.
pub fn rescale_demo(spec: &FamilySpec, s0: &[C64], q: usize, eta: f64, options: &SolverOptions) -> Result<RescaleReport> {
    let rescaled_spec = spec.rescale_to_kill_h();
    let before = verify_theorem(spec, s0, q, eta, options)?;
    let after = verify_theorem(&rescaled_spec, s0, q, eta, options)?;
    let m = spec.base_dim();
    let mut rescaled_phi_max: f64 = 0.0;
    for k in 0..m {
        for l in 0..m {
            rescaled_phi_max = rescaled_phi_max.max(rescaled_spec.phi_klbar(s0, k, l)?.norm());
        }
    }
    let mut shift = CurvatureTensor::zeros(before.rank, m);
    for k in 0..m {
        for l in 0..m {
            for rho in 0..before.rank {
                shift.set(rho, rho, k, l, before.phi[(k, l)]);
            }
        }
    }
    let shift_defect =
        before.lhs.sub(&after.lhs)?.sub(&shift)?.norm() / before.lhs.norm().max(f64::MIN_POSITIVE);
    Ok(RescaleReport {
        phi: before.phi.clone(),
        rescaled_phi_max,
        rescaled_t4_max: after.term_max[3],
        original_residual_rel: before.residual_rel,
        rescaled_residual_rel: after.residual_rel,
        shift_defect,
        original: before.lhs,
        rescaled: after.lhs,
    })
}
