use std::path::Path;
use std::process::{Command, Output};

use dolhodge::config::{Command as Experiment, RunConfig};
use dolhodge::Error;
use serde_json::Value;

fn dolhodge(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_dolhodge"));
    cmd.args(args).env_remove("DOLHODGE_THREADS");
    if let Some(t) = threads {
        cmd.env("DOLHODGE_THREADS", t);
    }
    cmd.output().expect("run dolhodge")
}

fn json(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).expect("JSON output")
}

#[test]
fn defaults_are_documented_values() {
    let c = RunConfig::load(None, None, &[]).unwrap();
    assert_eq!(c, RunConfig::default());
    assert_eq!(c.command, Experiment::VerifyTheorem);
    assert_eq!((c.tau, c.degree, c.n_side, c.stencil_order, c.seed), ([0.0, 1.0], 2, 48, 4, 0x5EED));
    assert_eq!(c.eta, 1e-2);
    assert_eq!(c.q(), 0);
    let spec = c.family().unwrap();
    assert!((spec.twist()[0].re - std::f64::consts::PI).abs() < 1e-15);
    assert_eq!(c.solver_options().seed, 0x5EED);
}

#[test]
fn file_then_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.json");
    std::fs::write(&path, r#"{"command": "spectrum", "degree": -2, "n_side": 32, "tolerances": {"residual_rel": 1e-3}}"#)
        .unwrap();
    let sets = vec!["n_side=24".to_string(), "solver.cg_tol=1e-12".to_string(), "output_path=out/report.json".to_string()];
    let c = RunConfig::load(None, Some(&path), &sets).unwrap();
    assert_eq!(c.command, Experiment::Spectrum);
    assert_eq!(c.degree, -2);
    assert_eq!(c.q(), 1);
    assert_eq!(c.n_side, 24);
    assert_eq!(c.tolerances.residual_rel, 1e-3);
    assert_eq!(c.tolerances.wp_constancy, 1e-10);
    assert_eq!(c.solver.cg_tol, 1e-12);
    assert_eq!(c.output_path.as_deref(), Some(Path::new("out/report.json")));

    let c = RunConfig::load(Some(Experiment::WpMetric), Some(&path), &[]).unwrap();
    assert_eq!(c.command, Experiment::WpMetric);
}

#[test]
fn unknown_and_malformed_keys_are_rejected() {
    let err = RunConfig::load(None, None, &["nsides=3".into()]).unwrap_err();
    assert!(matches!(&err, Error::Config(m) if m.contains("nsides")));
    assert_eq!(err.exit_code(), 2);
    let err = RunConfig::load(None, None, &["solver.tolerance=3".into()]).unwrap_err();
    assert!(matches!(&err, Error::Config(m) if m.contains("solver.tolerance")));
    assert!(RunConfig::load(None, None, &["degree".into()]).is_err());
    assert!(RunConfig::load(None, None, &["degree=two".into()]).is_err());
    assert!(RunConfig::load(None, None, &["eta=0".into()]).is_err());
    assert!(RunConfig::load(None, None, &["q=2".into()]).is_err());
    assert!(RunConfig::from_json("[1, 2]").is_err());
    assert!(RunConfig::from_json(r#"{"tolerances": {"bogus": 1}}"#).is_err());
}

#[test]
fn wp_metric_command_reports_pi_squared() {
    let out = dolhodge(&["wp-metric", "--set", "n_side=16"], None);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out.stdout);
    let value = v["gram"][0][0][0].as_f64().unwrap();
    assert!((value - std::f64::consts::PI.powi(2)).abs() < 1e-10);
    assert_eq!(v["constant"], true);
    assert_eq!(v["config"]["command"], "wp-metric");
    assert_eq!(v["library_version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(v["entries"].as_array().unwrap().len(), 25);
}

#[test]
fn exit_codes_follow_the_contract() {
    let out = dolhodge(&["spectrum", "--set", "bogus_key=1"], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus_key"));
    let v = json(&out.stdout);
    assert_eq!(v["error"]["exit_code"], 2);
    assert_eq!(v["error"]["kind"], "invalid_config");

    let out = dolhodge(&["spectrum", "--set", "n_side=16"], Some("zero"));
    assert_eq!(out.status.code(), Some(2));
    let out = dolhodge(&["spectrum", "--set", "n_side=16"], Some("0"));
    assert_eq!(out.status.code(), Some(2));

    let out = dolhodge(&["verify-theorem", "--set", "n_side=16", "--set", "degree=0", "--set", "q=0"], None);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(json(&out.stdout)["error"]["kind"], "not_locally_free");

    let out = dolhodge(
        &["verify-theorem", "--set", "n_side=16", "--set", "degree=1", "--set", "tolerances.residual_rel=1e-14"],
        None,
    );
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(json(&out.stdout)["pass"], false);
}

#[test]
fn reports_are_byte_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    let path = dir.path().join("report.json");
    let set = format!("output_path={}", path.display());
    for threads in ["1", "3", "1"] {
        let out = dolhodge(&["verify-theorem", "--set", "n_side=16", "--set", "degree=1", "--set", &set], Some(threads));
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        files.push(std::fs::read(&path).unwrap());
    }
    assert_eq!(files[0], files[1]);
    assert_eq!(files[0], files[2]);
    let v = json(&files[0]);
    assert!(v["wall_time_s"].is_null());
    for key in ["lhs", "terms", "residual_abs", "residual_rel", "pass", "config", "library_version"] {
        assert!(!v[key].is_null(), "missing {key}");
    }
    assert_eq!(v["terms"]["T1"][0][0][0][0].as_array().unwrap().len(), 2);

    let text = String::from_utf8(files[0].clone()).unwrap();
    let keys: Vec<&str> = text
        .lines()
        .filter(|l| l.starts_with("  \"") && l.contains("\":"))
        .map(|l| l.trim().split('"').nth(1).unwrap())
        .collect();
    let mut sorted = keys.clone();
    sorted.sort_unstable();
    assert_eq!(keys, sorted);
}

#[test]
fn timing_is_reported_on_request() {
    let out = dolhodge(&["verify-theorem", "--set", "n_side=16", "--set", "degree=1", "--set", "timing=true"], None);
    assert_eq!(out.status.code(), Some(0));
    assert!(json(&out.stdout)["wall_time_s"].as_f64().unwrap() > 0.0);
}

#[test]
fn convergence_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("conv.json");
    let set = format!("output_path={}", report.display());
    let out = dolhodge(
        &["convergence", "--set", "degree=1", "--set", "n_list=[16,20]", "--set", "eta_list=[0.02,0.01]", "--set", &set],
        None,
    );
    assert!(matches!(out.status.code(), Some(0) | Some(1)), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(report.with_extension("csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "N,eta,residual_rel,order_fit");
    assert_eq!(lines.len(), 2 * 2 + 1);
    let v = json(&std::fs::read(&report).unwrap());
    assert_eq!(v["rows"].as_array().unwrap().len(), 4);
}

#[test]
fn spectrum_reports_harmonic_dimensions() {
    let out = dolhodge(&["spectrum", "--set", "n_side=16", "--set", "degree=-1"], None);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out.stdout);
    assert_eq!(v["sections"]["harmonic_dim"], 0);
    assert_eq!(v["forms"]["harmonic_dim"], 1);
    assert_eq!(v["forms"]["eigenvalues"].as_array().unwrap().len(), 8);
}
