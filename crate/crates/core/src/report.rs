//! Deterministic JSON and CSV reports.
//!
//! Objects are emitted with sorted keys and floats in shortest round-trip
//! form, so identical runs produce byte-identical files. Complex numbers are
//! always `[re, im]` pairs.

use std::path::Path;

use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::config::{Command, RunConfig};
use crate::error::{Error, Result};
use crate::lemmas::{HalvingReport, LemmaReport};
use crate::linalg::CMat;
use crate::studies::{ConvergenceReport, RescaleReport, SerreReport, WpReport};
use crate::theorem::{CurvatureReport, CurvatureTensor};
use crate::{C64, LIBRARY_VERSION};

pub fn complex(z: C64) -> Value {
    json!([z.re, z.im])
}

pub fn complex_vec(v: &[C64]) -> Value {
    Value::Array(v.iter().copied().map(complex).collect())
}

/// Rows of `[re, im]` pairs.
pub fn matrix(m: &CMat) -> Value {
    Value::Array((0..m.nrows()).map(|i| Value::Array((0..m.ncols()).map(|j| complex(m[(i, j)])).collect())).collect())
}

/// Nested `[rho][sigma][k][l]` arrays of `[re, im]` pairs.
pub fn tensor(t: &CurvatureTensor) -> Value {
    json!(t.to_nested())
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

/// Body of a `verify-theorem` report.
pub fn curvature(r: &CurvatureReport, timing: bool) -> Map<String, Value> {
    let names = ["T1", "T2", "T3", "T4"];
    let terms = r.terms.as_array();
    let mut term_map = Map::new();
    let mut norms = Map::new();
    for (i, name) in names.iter().enumerate() {
        term_map.insert(name.to_string(), tensor(terms[i]));
        norms.insert(name.to_string(), json!(r.term_norms[i]));
    }
    let mut out = Map::new();
    out.insert("q".into(), json!(r.q));
    out.insert("rank".into(), json!(r.rank));
    out.insert("base_dim".into(), json!(r.base_dim));
    out.insert("degree".into(), json!(r.degree));
    out.insert("n_side".into(), json!(r.n_side));
    out.insert("stencil_order".into(), json!(r.stencil_order));
    out.insert("s0".into(), complex_vec(&r.s0));
    out.insert("eta".into(), json!(r.eta));
    out.insert("lhs".into(), tensor(&r.lhs));
    out.insert("rhs".into(), tensor(&r.rhs()));
    out.insert("terms".into(), Value::Object(term_map));
    out.insert("term_norms".into(), Value::Object(norms));
    out.insert("lhs_norm".into(), json!(r.lhs_norm));
    out.insert("residual_abs".into(), json!(r.residual_abs));
    out.insert("residual_rel".into(), json!(r.residual_rel));
    out.insert("hermitian_defect".into(), json!(r.hermitian_defect));
    out.insert("phi".into(), matrix(&r.phi));
    out.insert("holomorphy_residual".into(), json!(r.holomorphy_residual));
    out.insert("harmonic_residual".into(), json!(r.harmonic_residual));
    out.insert("normalization_residual".into(), json!(r.normalization_residual));
    out.insert("spectral_gap".into(), json!(r.spectral_gap));
    out.insert("wall_time_s".into(), if timing { json!(r.wall_time_s) } else { Value::Null });
    out
}

pub fn lemmas(r: &LemmaReport, halving: Option<&HalvingReport>) -> Map<String, Value> {
    let mut out = Map::new();
    out.insert("lemmas".into(), to_value(r));
    out.insert("halving".into(), halving.map_or(Value::Null, to_value));
    out
}

pub fn wp(r: &WpReport) -> Map<String, Value> {
    let entries: Vec<Value> = r
        .entries
        .iter()
        .map(|e| json!({ "s": complex_vec(&e.s), "gram": matrix(&e.gram) }))
        .collect();
    let mut out = Map::new();
    out.insert("gram".into(), r.entries.first().map_or(Value::Null, |e| matrix(&e.gram)));
    out.insert("entries".into(), Value::Array(entries));
    out.insert("max_deviation".into(), json!(r.max_deviation));
    out.insert("constant".into(), json!(r.constant));
    out.insert("min_eigenvalue".into(), json!(r.min_eigenvalue));
    out.insert("positive_semidefinite".into(), json!(r.positive_semidefinite));
    out
}

pub fn serre(r: &SerreReport) -> Map<String, Value> {
    let mut out = Map::new();
    out.insert("forms".into(), tensor(&r.forms));
    out.insert("sections".into(), tensor(&r.sections));
    out.insert("mismatch".into(), json!(r.mismatch));
    out.insert("forms_residual_rel".into(), json!(r.forms_residual_rel));
    out.insert("sections_residual_rel".into(), json!(r.sections_residual_rel));
    out
}

pub fn rescale(r: &RescaleReport) -> Map<String, Value> {
    let mut out = Map::new();
    out.insert("phi".into(), matrix(&r.phi));
    out.insert("rescaled_phi_max".into(), json!(r.rescaled_phi_max));
    out.insert("rescaled_t4_max".into(), json!(r.rescaled_t4_max));
    out.insert("original_residual_rel".into(), json!(r.original_residual_rel));
    out.insert("rescaled_residual_rel".into(), json!(r.rescaled_residual_rel));
    out.insert("shift_defect".into(), json!(r.shift_defect));
    out.insert("original_lhs".into(), tensor(&r.original));
    out.insert("rescaled_lhs".into(), tensor(&r.rescaled));
    out
}

pub fn convergence(r: &ConvergenceReport) -> Map<String, Value> {
    match to_value(r) {
        Value::Object(m) => m,
        _ => Map::new(),
    }
}

/// Wraps a command body with the resolved configuration and metadata.
pub fn envelope(config: &RunConfig, pass: bool, body: Map<String, Value>) -> Value {
    let mut out = body;
    out.insert("command".into(), json!(config.command.name()));
    out.insert("config".into(), to_value(config));
    out.insert("library_version".into(), json!(LIBRARY_VERSION));
    out.insert("pass".into(), json!(pass));
    Value::Object(out)
}

/// Machine-readable error object; `config` is absent when it failed to load.
pub fn error(command: Option<Command>, config: Option<&RunConfig>, err: &Error) -> Value {
    json!({
        "command": command.map(Command::name),
        "config": config.map_or(Value::Null, to_value),
        "error": {
            "kind": err.kind(),
            "message": err.to_string(),
            "exit_code": err.exit_code(),
        },
        "library_version": LIBRARY_VERSION,
        "pass": false,
    })
}

/// Pretty-printed JSON followed by a newline.
pub fn render(report: &Value) -> String {
    let mut text = serde_json::to_string_pretty(report).unwrap_or_else(|_| "null".into());
    text.push('\n');
    text
}

/// Writes `report` to `path`, or to standard output when `path` is `None`.
pub fn emit_report(report: &Value, path: Option<&Path>) -> Result<()> {
    let text = render(report);
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::Io(format!("{}: {e}", p.display()))),
        None => {
            use std::io::Write;
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes()).and_then(|_| out.flush()).map_err(Error::from)
        }
    }
}

pub fn write_csv(text: &str, path: &Path) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}
