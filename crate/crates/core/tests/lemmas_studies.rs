use std::f64::consts::PI;

use dolhodge::lemmas::tol_fd;
use dolhodge::studies::{fit_slope, square_grid, WP_CONSTANCY_TOL};
use dolhodge::{convergence_study, lemma_suite, rescale_demo, serre_cross_check, wp_report, RunConfig, C64};

fn config(overrides: &str) -> RunConfig {
    RunConfig::from_json(overrides).unwrap()
}

#[test]
fn tolerance_floor_follows_eta_and_grid() {
    assert_eq!(tol_fd(1e-2, 48, 4), 1e-3);
    assert_eq!(tol_fd(1e-3, 8, 2), 50.0 / 64.0);
}

#[test]
fn lemma_suite_sections() {
    let c = config(r#"{"n_side": 32, "degree": 2}"#);
    let r = lemma_suite(&c.family().unwrap(), &c.s0(), 0, c.eta, &c.solver_options()).unwrap();
    assert_eq!((r.q, r.rank), (0, 2));
    assert!(r.residuals.nabla_dbar_star.is_none());
    assert!(r.residuals.nabla_dbar.is_some());
    assert!(r.residuals.second_derivative.is_some());
    assert!(r.residuals.endo_trace.unwrap() <= 1e-13);
    assert!(r.pass(), "{:?}", r.residuals);
}

#[test]
fn lemma_suite_forms() {
    let c = config(r#"{"n_side": 32, "degree": -1}"#);
    let r = lemma_suite(&c.family().unwrap(), &c.s0(), 1, c.eta, &c.solver_options()).unwrap();
    assert_eq!((r.q, r.rank), (1, 1));
    assert!(r.residuals.nabla_dbar.is_none());
    assert!(r.residuals.second_derivative.is_none());
    assert!(r.residuals.nabla_dbar_star.is_some());
    assert!(r.pass(), "{:?}", r.residuals);
}

#[test]
fn wp_report_over_a_square() {
    let c = config(r#"{"n_side": 16}"#);
    let points = square_grid(&[C64::new(0.0, 0.0)], 0.5, 3);
    assert_eq!(points.len(), 9);
    let r = wp_report(&c.family().unwrap(), &points).unwrap();
    assert!(r.constant && r.positive_semidefinite);
    assert!(r.max_deviation <= WP_CONSTANCY_TOL);
    assert!((r.min_eigenvalue - PI * PI).abs() < 1e-10);
}

#[test]
fn serre_duality_pairs_degree_minus_one_with_its_dual() {
    let c = config(r#"{"n_side": 32, "degree": -1}"#);
    let r = serre_cross_check(&c.family().unwrap(), &c.s0(), c.eta, &c.solver_options()).unwrap();
    assert!(r.mismatch <= 1e-2, "mismatch {}", r.mismatch);
    let c = config(r#"{"n_side": 32, "degree": 2}"#);
    assert!(serre_cross_check(&c.family().unwrap(), &c.s0(), c.eta, &c.solver_options()).is_err());
}

#[test]
fn slope_fit_recovers_a_power_law() {
    let x: Vec<f64> = [16.0f64, 24.0, 32.0].iter().map(|n| n.ln()).collect();
    let y: Vec<f64> = x.iter().map(|l| 4.0 * l + 1.0).collect();
    assert!((fit_slope(&x, &y).unwrap() - 4.0).abs() < 1e-12);
    assert!(fit_slope(&[1.0], &[2.0]).is_none());
    assert!(fit_slope(&[1.0, 1.0], &[2.0, 3.0]).is_none());
}

#[test]
fn convergence_rows_and_csv() {
    let c = config(r#"{"degree": 1}"#);
    let r = convergence_study(&c.family().unwrap(), &c.s0(), 0, &[20, 16], &[1e-2, 2e-2], &c.solver_options()).unwrap();
    let ns: Vec<usize> = r.rows.iter().map(|row| row.n_side).collect();
    assert_eq!(ns, vec![16, 16, 20, 20]);
    assert!(r.rows[0].order_fit.is_none() && r.rows[1].order_fit.is_some());
    assert_eq!(r.spatial.len(), 2);
    assert!(r.spatial[1].1 < r.spatial[0].1);
    assert_eq!(r.to_csv().lines().count(), 5);
}

#[test]
fn rescaling_removes_the_weight_term() {
    let c = config(r#"{"n_side": 32, "degree": 1}"#);
    let r = rescale_demo(&c.family().unwrap(), &c.s0(), 0, c.eta, &c.solver_options()).unwrap();
    assert!((r.phi[(0, 0)].re - 0.3).abs() < 1e-12);
    assert!(r.rescaled_phi_max <= 1e-12);
    assert!(r.rescaled_t4_max <= 1e-12);
    assert!(r.shift_defect <= 10.0 * c.eta * c.eta, "shift {}", r.shift_defect);
    assert!(r.original_residual_rel <= 5e-3 && r.rescaled_residual_rel <= 5e-3);
}
