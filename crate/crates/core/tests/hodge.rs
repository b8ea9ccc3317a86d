use dolhodge::linalg::CMat;
use dolhodge::{cap, cup, endo_commutator_lambda, EndField, Fiber, Field, FormKind, SolverOptions, TorusGrid, C64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_values(rng: &mut ChaCha8Rng, n: usize) -> Vec<C64> {
    (0..n).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect()
}

fn random_field(rng: &mut ChaCha8Rng, fiber: &Fiber, kind: FormKind) -> Field {
    fiber.field(kind, random_values(rng, fiber.rank() * fiber.grid().len())).unwrap()
}

fn random_end(rng: &mut ChaCha8Rng, kind: FormKind, rank: usize, n: usize) -> EndField {
    EndField::new(kind, rank, random_values(rng, rank * rank * n)).unwrap()
}

fn fibers() -> Vec<Fiber> {
    let opts = SolverOptions::default();
    let grid = TorusGrid::new(C64::new(0.3, 1.1), 24, 4).unwrap();
    vec![
        Fiber::synthetic(&grid, 2, C64::new(0.4, -0.2), 0.1, 1, &opts),
        Fiber::synthetic(&grid, -1, C64::new(-0.3, 0.5), -0.2, 1, &opts),
        Fiber::synthetic(&grid, 1, C64::new(0.2, 0.1), 0.0, 2, &opts),
    ]
}

#[test]
fn dbar_and_dbar_star_are_adjoint() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for fiber in fibers() {
        for _ in 0..20 {
            let u = random_field(&mut rng, &fiber, FormKind::Section);
            let xi = random_field(&mut rng, &fiber, FormKind::Form01);
            let lhs = fiber.inner(&fiber.dbar(&u).unwrap(), &xi).unwrap();
            let rhs = fiber.inner(&u, &fiber.dbar_star(&xi).unwrap()).unwrap();
            let scale = fiber.norm(&fiber.dbar(&u).unwrap()).unwrap() * fiber.norm(&xi).unwrap();
            assert!((lhs - rhs).norm() <= 1e-12 * scale, "defect {:e}", (lhs - rhs).norm() / scale);
        }
    }
}

#[test]
fn cup_and_cap_are_adjoint() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for fiber in fibers() {
        let n = fiber.grid().len();
        for _ in 0..20 {
            let a = random_end(&mut rng, FormKind::Form01, fiber.rank(), n);
            let u = random_field(&mut rng, &fiber, FormKind::Section);
            let xi = random_field(&mut rng, &fiber, FormKind::Form01);
            let au = cup(&a, &u).unwrap().unwrap();
            let a_xi = cap(&a, &xi).unwrap().unwrap();
            let lhs = fiber.inner(&au, &xi).unwrap();
            let rhs = fiber.inner(&u, &a_xi).unwrap();
            let scale = fiber.norm(&au).unwrap() * fiber.norm(&xi).unwrap();
            assert!((lhs - rhs).norm() <= 1e-12 * scale);
        }
    }
}

#[test]
fn top_degree_products_vanish() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let fiber = &fibers()[0];
    let n = fiber.grid().len();
    let a = random_end(&mut rng, FormKind::Form01, 1, n);
    let xi = random_field(&mut rng, fiber, FormKind::Form01);
    let u = random_field(&mut rng, fiber, FormKind::Section);
    assert!(cup(&a, &xi).unwrap().is_none());
    assert!(cap(&a, &u).unwrap().is_none());
    let section_end = random_end(&mut rng, FormKind::Section, 1, n);
    assert!(cap(&section_end, &xi).is_err());
}

#[test]
fn hodge_reconstruction_and_green_kernel() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for fiber in fibers() {
        for kind in [FormKind::Section, FormKind::Form01] {
            let basis = fiber.harmonic_basis(kind).unwrap();
            for b in &basis.vectors {
                let g = fiber.green(&basis, b).unwrap();
                assert!(fiber.norm(&g).unwrap() <= 1e-10);
            }
            for _ in 0..20 {
                let v = random_field(&mut rng, &fiber, kind);
                let h = fiber.project(&basis, &v).unwrap();
                let g = fiber.green(&basis, &v).unwrap();
                let rebuilt = h.add(&fiber.laplacian(&g).unwrap()).unwrap();
                let defect = fiber.norm(&rebuilt.sub(&v).unwrap()).unwrap() / fiber.norm(&v).unwrap();
                assert!(defect <= 1e-8, "{kind:?}: {defect:e}");
                assert!(fiber.norm(&fiber.project(&basis, &g).unwrap()).unwrap() <= 1e-10 * fiber.norm(&g).unwrap());
            }
        }
    }
}

#[test]
fn harmonic_dimensions_follow_the_degree() {
    for fiber in fibers() {
        let r = fiber.rank() as i64;
        let d = fiber.degree();
        let h0 = fiber.harmonic_basis(FormKind::Section).unwrap().dimension() as i64;
        let h1 = fiber.harmonic_basis(FormKind::Form01).unwrap().dimension() as i64;
        assert_eq!((h0, h1), (r * d.max(0), r * (-d).max(0)), "degree {d} rank {r}");
    }
}

#[test]
fn harmonic_basis_is_orthonormal_and_harmonic() {
    let fiber = &fibers()[2];
    let basis = fiber.harmonic_basis(FormKind::Section).unwrap();
    for (i, a) in basis.vectors.iter().enumerate() {
        for (j, b) in basis.vectors.iter().enumerate() {
            let expected = if i == j { 1.0 } else { 0.0 };
            assert!((fiber.inner(a, b).unwrap() - expected).norm() < 1e-12);
        }
        assert!(fiber.norm(&fiber.laplacian(a).unwrap()).unwrap() < 1e-3);
    }
}

#[test]
fn commutator_of_rank_one_forms_vanishes() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let n = 64;
    let a = random_end(&mut rng, FormKind::Form01, 1, n);
    let b = random_end(&mut rng, FormKind::Form01, 1, n);
    assert!(endo_commutator_lambda(&a, &b).unwrap().is_zero());
}

#[test]
fn commutator_matches_dense_matrices() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let n = 8;
    let a = random_end(&mut rng, FormKind::Form01, 2, n);
    let b = random_end(&mut rng, FormKind::Form01, 2, n);
    let c = endo_commutator_lambda(&a, &b).unwrap();
    for p in 0..n {
        let (am, bm) = (a.at(p), b.at(p));
        let expected: CMat = (&am * bm.adjoint() - bm.adjoint() * &am) * C64::new(2.0, 0.0);
        assert!((c.at(p) - expected).norm() < 1e-13);
    }
}
