use std::f64::consts::PI;
use std::panic::{self, AssertUnwindSafe};
use std::process::Command;
use std::time::Instant;

use dolhodge::family::endo_trace;
use dolhodge::lemmas::eta_halving;
use dolhodge::studies::square_grid;
use dolhodge::{
    cap, convergence_study, cup, endo_commutator_lambda, lemma_suite, rescale_demo, serre_cross_check, verify_theorem,
    wp_report, CurvatureReport, EndField, Fiber, Field, FormKind, RunConfig, SolverOptions, TorusGrid, C64,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn config(overrides: &str) -> RunConfig {
    RunConfig::from_json(overrides).expect("valid configuration")
}

fn run(c: &RunConfig) -> CurvatureReport {
    verify_theorem(&c.family().unwrap(), &c.s0(), c.q(), c.eta, &c.solver_options()).expect("verify_theorem")
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

struct Runs {
    sections: CurvatureReport,
    sections_time: f64,
    forms: CurvatureReport,
}

fn criterion_1(runs: &Runs) -> Outcome {
    let r = &runs.sections;
    check(
        r.residual_rel <= 5e-3 && runs.sections_time <= 60.0,
        format!("residual_rel {:.3e}, wall time {:.1} s", r.residual_rel, runs.sections_time),
    )
}

fn criterion_2(runs: &Runs) -> Outcome {
    let r = &runs.forms;
    let t3 = r.term_max[2];
    check(r.q == 1 && r.residual_rel <= 5e-3 && t3 <= 1e-14, format!("residual_rel {:.3e}, max |T3| {t3:.1e}", r.residual_rel))
}

fn criterion_3(runs: &Runs) -> Outcome {
    let t1 = runs.sections.term_max[0];
    let t2 = runs.sections.term_max[1].max(runs.forms.term_max[1]);
    check(
        t1 <= 1e-14 && t2 <= 1e-14,
        format!("max |T1| (q=0) {t1:.1e}, max |T2| (line bundle, q=0 and q=1) {t2:.1e}"),
    )
}

fn criterion_4() -> Outcome {
    let c = config("{}");
    let r = rescale_demo(&c.family().unwrap(), &c.s0(), 0, c.eta, &c.solver_options()).map_err(|e| e.to_string())?;
    let bound = 10.0 * c.eta * c.eta;
    check(
        r.rescaled_phi_max <= 1e-12
            && r.rescaled_t4_max <= 1e-12
            && r.rescaled_residual_rel <= 5e-3
            && r.shift_defect <= bound,
        format!(
            "Phi {:.1e}, T4 {:.1e}, residual_rel {:.3e}, shift defect {:.2e} (bound {bound:.0e})",
            r.rescaled_phi_max, r.rescaled_t4_max, r.rescaled_residual_rel, r.shift_defect
        ),
    )
}

fn random_values(rng: &mut ChaCha8Rng, n: usize) -> Vec<C64> {
    (0..n).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect()
}

fn random_field(rng: &mut ChaCha8Rng, fiber: &Fiber, kind: FormKind) -> Field {
    fiber.field(kind, random_values(rng, fiber.rank() * fiber.grid().len())).unwrap()
}

fn criterion_5() -> Outcome {
    let opts = SolverOptions::default();
    let mut fibers = Vec::new();
    for degree in [2, -2] {
        let c = config(&format!(r#"{{"n_side": 32, "degree": {degree}}}"#));
        fibers.push(Fiber::new(&c.family().unwrap(), &[C64::new(0.2, -0.1)], &opts).map_err(|e| e.to_string())?);
    }
    let grid = TorusGrid::new(C64::new(0.3, 1.1), 32, 4).unwrap();
    fibers.push(Fiber::synthetic(&grid, 1, C64::new(0.2, 0.1), 0.0, 2, &opts));

    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED);
    let (mut adj, mut cupcap, mut rebuild, mut kernel) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for fiber in &fibers {
        let n = fiber.grid().len();
        for _ in 0..20 {
            let u = random_field(&mut rng, fiber, FormKind::Section);
            let xi = random_field(&mut rng, fiber, FormKind::Form01);
            let du = fiber.dbar(&u).unwrap();
            let lhs = fiber.inner(&du, &xi).unwrap();
            let rhs = fiber.inner(&u, &fiber.dbar_star(&xi).unwrap()).unwrap();
            adj = adj.max((lhs - rhs).norm() / (fiber.norm(&du).unwrap() * fiber.norm(&xi).unwrap()));

            let a = EndField::new(FormKind::Form01, fiber.rank(), random_values(&mut rng, fiber.rank().pow(2) * n)).unwrap();
            let au = cup(&a, &u).unwrap().unwrap();
            let lhs = fiber.inner(&au, &xi).unwrap();
            let rhs = fiber.inner(&u, &cap(&a, &xi).unwrap().unwrap()).unwrap();
            cupcap = cupcap.max((lhs - rhs).norm() / (fiber.norm(&au).unwrap() * fiber.norm(&xi).unwrap()));
        }
        for kind in [FormKind::Section, FormKind::Form01] {
            let basis = fiber.harmonic_basis(kind).map_err(|e| e.to_string())?;
            for b in &basis.vectors {
                kernel = kernel.max(fiber.norm(&fiber.green(&basis, b).unwrap()).unwrap());
            }
            for _ in 0..20 {
                let v = random_field(&mut rng, fiber, kind);
                let h = fiber.project(&basis, &v).unwrap();
                let g = fiber.green(&basis, &v).unwrap();
                let rebuilt = h.add(&fiber.laplacian(&g).unwrap()).unwrap();
                rebuild = rebuild.max(fiber.norm(&rebuilt.sub(&v).unwrap()).unwrap() / fiber.norm(&v).unwrap());
            }
        }
    }
    check(
        adj <= 1e-12 && cupcap <= 1e-12 && rebuild <= 1e-8 && kernel <= 1e-10,
        format!("dbar adjoint {adj:.1e}, cup/cap adjoint {cupcap:.1e}, reconstruction {rebuild:.1e}, G(harmonic) {kernel:.1e}"),
    )
}

fn criterion_6() -> Outcome {
    let opts = SolverOptions::default();
    let mut wrong = Vec::new();
    for n in [32usize, 48] {
        for degree in [-3i64, -2, -1, 1, 2, 3] {
            let c = config(&format!(r#"{{"n_side": {n}, "degree": {degree}}}"#));
            let fiber = Fiber::new(&c.family().unwrap(), &c.s0(), &opts).map_err(|e| e.to_string())?;
            let h0 = fiber.harmonic_basis(FormKind::Section).map_err(|e| e.to_string())?.dimension() as i64;
            let h1 = fiber.harmonic_basis(FormKind::Form01).map_err(|e| e.to_string())?.dimension() as i64;
            if (h0, h1) != (degree.max(0), (-degree).max(0)) {
                wrong.push(format!("N={n} d={degree}: ({h0}, {h1})"));
            }
        }
    }
    let c = config(r#"{"degree": 0, "q": 0}"#);
    let code = match verify_theorem(&c.family().unwrap(), &c.s0(), 0, c.eta, &c.solver_options()) {
        Ok(_) => 0,
        Err(e) => e.exit_code(),
    };
    check(
        wrong.is_empty() && code == 3,
        format!("12 dimension pairs, mismatches {wrong:?}; degree 0 exit code {code}"),
    )
}

fn criterion_7() -> Outcome {
    let c = config("{}");
    let (spec, s0, opts) = (c.family().unwrap(), c.s0(), c.solver_options());
    let suite = lemma_suite(&spec, &s0, 0, c.eta, &opts).map_err(|e| e.to_string())?;
    let halving = eta_halving(&spec, &s0, 0, c.eta, &opts).map_err(|e| e.to_string())?;
    let ratio = halving.min_s_dominated_ratio();
    check(
        suite.pass() && ratio.map_or(true, |r| r >= 3.0),
        format!("max residual {:.2e} (tol_fd {:.0e}), smallest s-dominated halving ratio {ratio:.2?}", suite.residuals.max(), suite.tol_fd),
    )
}

fn criterion_8() -> Outcome {
    let c = config("{}");
    let opts = c.solver_options();
    let spec = c.family().unwrap();
    let etas = [2e-2, 1e-2];
    let fourth = convergence_study(&spec, &c.s0(), 0, &[16, 24, 32, 48], &etas, &opts).map_err(|e| e.to_string())?;
    let order = fourth.spatial_order.unwrap_or(f64::NAN);
    let second_spec = spec.with_grid(TorusGrid::new(spec.grid().tau(), 32, 2).unwrap());
    let second = convergence_study(&second_spec, &c.s0(), 0, &[32], &etas, &opts).map_err(|e| e.to_string())?;
    let at32 = |r: &dolhodge::studies::ConvergenceReport| r.spatial.iter().find(|(n, _)| *n == 32).map(|(_, v)| *v).unwrap();
    let (e2, e4) = (at32(&second), at32(&fourth));
    check(order >= 3.5 && e4 < e2, format!("spatial order {order:.2}; N=32 residual order 2 {e2:.2e} > order 4 {e4:.2e}"))
}

fn criterion_9() -> Outcome {
    let c = config("{}");
    let points = square_grid(&c.s0(), c.wp_half_width, 5);
    let r = wp_report(&c.family().unwrap(), &points).map_err(|e| e.to_string())?;
    let value = r.entries[0].gram[(0, 0)];
    check(
        points.len() == 25 && (value - C64::new(PI * PI, 0.0)).norm() <= 1e-10 && r.max_deviation <= 1e-12,
        format!("value {:.14}, max deviation {:.1e} over 25 points", value.re, r.max_deviation),
    )
}

fn criterion_10() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (degree, n) in [(-1, 32), (1, 48)] {
        let c = config(&format!(r#"{{"n_side": {n}, "degree": {degree}}}"#));
        let r = serre_cross_check(&c.family().unwrap(), &c.s0(), c.eta, &c.solver_options()).map_err(|e| e.to_string())?;
        worst = worst.max(r.mismatch);
        parts.push(format!("d={degree}: {:.2e}", r.mismatch));
    }
    check(worst <= 1e-2, format!("mismatch {}", parts.join(", ")))
}

fn criterion_11() -> Outcome {
    let mut worst: f64 = 0.0;
    for degree in [-2i64, 2] {
        let c = config(&format!(r#"{{"degree": {degree}, "twist": [[3.0, -1.0], [0.5, 2.0]], "rescale": [[[0.3, 0.0], [0.1, 0.05]], [[0.1, -0.05], [-0.2, 0.0]]]}}"#));
        let spec = c.family().unwrap();
        for s in square_grid(&[C64::new(0.0, 0.0), C64::new(0.0, 0.0)], 0.5, 3) {
            for k in 0..2 {
                for l in 0..2 {
                    worst = worst.max(spec.endo_trace_curvature(&s, k, l).map_err(|e| e.to_string())?.norm());
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 64;
    let a = EndField::new(FormKind::Form01, 2, random_values(&mut rng, 4 * n)).unwrap();
    let b = EndField::new(FormKind::Form01, 2, random_values(&mut rng, 4 * n)).unwrap();
    let r = endo_commutator_lambda(&a, &b).unwrap();
    for p in 0..n {
        worst = worst.max(endo_trace(&r.at(p)).norm());
    }
    check(worst <= 1e-13, format!("max |endo trace| {worst:.1e} over family points and rank-2 data"))
}

fn criterion_12() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("report.json");
    let mut outputs = Vec::new();
    for command in ["verify-theorem", "wp-metric"] {
        let mut reports = Vec::new();
        for threads in ["1", "4"] {
            let status = Command::new(env!("CARGO_BIN_EXE_dolhodge"))
                .args([command, "--set", "n_side=16", "--set", "degree=1", "--set"])
                .arg(format!("output_path={}", path.display()))
                .env("DOLHODGE_THREADS", threads)
                .status()
                .map_err(|e| e.to_string())?;
            if status.code() != Some(0) {
                return Err(format!("{command} exited with {status}"));
            }
            reports.push(std::fs::read(&path).map_err(|e| e.to_string())?);
        }
        outputs.push((command, reports[0] == reports[1]));
    }
    check(outputs.iter().all(|(_, same)| *same), format!("byte-identical at 1 and 4 threads: {outputs:?}"))
}

fn main() {
    let start = Instant::now();
    let sections = run(&config("{}"));
    let sections_time = start.elapsed().as_secs_f64();
    let forms = run(&config(r#"{"degree": -2}"#));
    let runs = Runs { sections, sections_time, forms };

    let criteria: Vec<Box<dyn Fn() -> Outcome + '_>> = vec![
        Box::new(|| criterion_1(&runs)),
        Box::new(|| criterion_2(&runs)),
        Box::new(|| criterion_3(&runs)),
        Box::new(criterion_4),
        Box::new(criterion_5),
        Box::new(criterion_6),
        Box::new(criterion_7),
        Box::new(criterion_8),
        Box::new(criterion_9),
        Box::new(criterion_10),
        Box::new(criterion_11),
        Box::new(criterion_12),
    ];
    let mut failures = 0;
    for (i, criterion) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(criterion)).unwrap_or_else(|_| Err("panicked".into()));
        let (label, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failures += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {}: {label}: {detail} [{:.1} s]", i + 1, started.elapsed().as_secs_f64());
    }
    println!("{} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
