use std::f64::consts::PI;

use dolhodge::family::endo_trace;
use dolhodge::grid::{diff_a, diff_b, integrate};
use dolhodge::linalg::CMat;
use dolhodge::{FamilySpec, TorusGrid, WrapRule, C64};
use proptest::prelude::*;

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn plane_wave(grid: &TorusGrid, p: f64, q: f64) -> Vec<C64> {
    grid.sample_ab(|a, b| (c(0.0, 2.0 * PI) * (p * a + q * b)).exp())
}

fn max_error(x: &[C64], y: &[C64]) -> f64 {
    x.iter().zip(y).map(|(u, v)| (u - v).norm()).fold(0.0, f64::max)
}

#[test]
fn lattice_derivatives_converge_at_the_stencil_order() {
    for order in [2usize, 4] {
        let errors: Vec<f64> = [16usize, 32]
            .iter()
            .map(|&n| {
                let grid = TorusGrid::new(c(0.2, 1.3), n, order).unwrap();
                let f = plane_wave(&grid, 1.0, 2.0);
                let da = diff_a(&grid, &f, &WrapRule::Periodic).unwrap();
                let db = diff_b(&grid, &f, &WrapRule::Periodic).unwrap();
                let exact_a: Vec<C64> = f.iter().map(|v| v * c(0.0, 2.0 * PI)).collect();
                let exact_b: Vec<C64> = f.iter().map(|v| v * c(0.0, 4.0 * PI)).collect();
                max_error(&da, &exact_a).max(max_error(&db, &exact_b))
            })
            .collect();
        let observed = (errors[0] / errors[1]).log2();
        assert!(observed > order as f64 - 0.3, "order {order}: observed {observed}");
    }
}

#[test]
fn quadrature_of_plane_waves() {
    let grid = TorusGrid::new(c(-0.4, 0.9), 20, 4).unwrap();
    let one = vec![c(1.0, 0.0); grid.len()];
    assert!((integrate(&grid, &one).unwrap() - c(0.9, 0.0)).norm() < 1e-14);
    for (p, q) in [(1.0, 0.0), (0.0, 3.0), (2.0, -1.0)] {
        assert!(integrate(&grid, &plane_wave(&grid, p, q)).unwrap().norm() < 1e-13);
    }
}

#[test]
fn flat_twist_derivative_respects_multipliers() {
    // f(a, b) = exp(2 pi i (a/2 + b/3)) is quasi-periodic with multipliers
    // exp(i pi) and exp(2 pi i / 3).
    let grid = TorusGrid::new(c(0.0, 1.0), 24, 4).unwrap();
    let wrap = WrapRule::Flat { mult_a: (c(0.0, PI)).exp(), mult_b: (c(0.0, 2.0 * PI / 3.0)).exp() };
    let f = plane_wave(&grid, 0.5, 1.0 / 3.0);
    let da = diff_a(&grid, &f, &wrap).unwrap();
    let exact: Vec<C64> = f.iter().map(|v| v * c(0.0, PI)).collect();
    assert!(max_error(&da, &exact) < 1e-4);
}

fn spec(tau: C64, degree: i64, twist: Vec<C64>, a: f64) -> FamilySpec {
    let grid = TorusGrid::new(tau, 12, 4).unwrap();
    let m = twist.len();
    FamilySpec::new(grid, degree, twist, CMat::identity(m, m) * c(a, 0.0)).unwrap()
}

#[test]
fn wp_metric_of_the_default_family_is_pi_squared() {
    let s = spec(c(0.0, 1.0), 2, vec![c(PI, 0.0)], 0.3);
    let v = s.wp_inner(&[c(0.1, -0.2)], 0, 0).unwrap();
    assert!((v - c(PI * PI, 0.0)).norm() < 1e-10);
}

#[test]
fn wp_metric_for_two_parameters() {
    let s = spec(c(0.0, 1.0), 1, vec![c(PI, 0.0), c(2.0 * PI, 0.0)], 0.3);
    let g = s.wp_matrix(&[c(0.0, 0.0), c(0.0, 0.0)]).unwrap();
    let p2 = PI * PI;
    let expected = [[p2, 2.0 * p2], [2.0 * p2, 4.0 * p2]];
    for k in 0..2 {
        for l in 0..2 {
            assert!((g[(k, l)] - c(expected[k][l], 0.0)).norm() < 1e-10);
        }
    }
}

#[test]
fn endo_trace_of_dense_matrices_vanishes() {
    let r = CMat::from_fn(3, 3, |i, j| c(i as f64 - 0.5 * j as f64, (i * j) as f64));
    assert!(endo_trace(&r).norm() < 1e-13);
}

#[test]
fn dual_is_an_involution() {
    let s = spec(c(0.1, 1.2), 3, vec![c(1.0, -2.0)], 0.4);
    assert_eq!(s.dual().dual(), s);
    assert_eq!(s.dual().degree(), -3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn wp_metric_is_constant_and_positive(
        tau_re in -0.5f64..0.5, tau_im in 0.6f64..2.0,
        c0 in -4.0f64..4.0, c1 in -4.0f64..4.0,
        s_re in -1.0f64..1.0, s_im in -1.0f64..1.0,
    ) {
        let s = spec(c(tau_re, tau_im), 1, vec![c(c0, c1)], 0.3);
        let at_origin = s.wp_inner(&[c(0.0, 0.0)], 0, 0).unwrap();
        let elsewhere = s.wp_inner(&[c(s_re, s_im)], 0, 0).unwrap();
        prop_assert!((at_origin - elsewhere).norm() < 1e-10);
        prop_assert!((at_origin.re - (c0 * c0 + c1 * c1) * tau_im).abs() < 1e-9 * (1.0 + at_origin.re));
        prop_assert!(at_origin.im.abs() < 1e-12);
    }

    #[test]
    fn endo_trace_curvature_vanishes(
        degree in -3i64..=3, a in -1.0f64..1.0,
        s_re in -1.0f64..1.0, s_im in -1.0f64..1.0,
    ) {
        let s = spec(c(0.0, 1.0), degree, vec![c(PI, 0.0)], a);
        prop_assert!(s.endo_trace_curvature(&[c(s_re, s_im)], 0, 0).unwrap().norm() <= 1e-13);
    }

    #[test]
    fn rescaling_kills_phi_everywhere(a in -2.0f64..2.0, beta in -0.5f64..0.5, s_re in -1.0f64..1.0, s_im in -1.0f64..1.0) {
        let s = spec(c(0.0, 1.0), 2, vec![c(PI, 0.0)], a).with_quartic(beta).unwrap();
        let r = s.rescale_to_kill_h();
        prop_assert!(r.phi_klbar(&[c(s_re, s_im)], 0, 0).unwrap().norm() <= 1e-12);
    }
}
