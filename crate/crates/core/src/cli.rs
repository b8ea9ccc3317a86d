//! Command-line orchestration shared by the `dolhodge` binary and tests.

use std::path::PathBuf;

use clap::Parser;
use serde_json::{json, Map, Value};

use crate::config::{Command, RunConfig};
use crate::error::{Error, Result};
use crate::fields::FormKind;
use crate::hodge::Fiber;
use crate::{lemmas, report, studies, theorem};

/// Environment variable capping the worker count.
pub const THREADS_ENV: &str = "DOLHODGE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "dolhodge", version, about = "Curvature of L2 metrics on direct images over flat elliptic curves")]
pub struct Args {
    /// Experiment to run.
    #[arg(value_enum)]
    pub command: Command,
    /// JSON configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set n_side=32` or `--set solver.cg_tol=1e-12`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

/// Outcome of a successful run: the report and whether all asserted
/// tolerances held.
pub struct Outcome {
    pub report: Value,
    pub pass: bool,
    /// CSV artifact of `convergence`.
    pub csv: Option<String>,
}

/// Runs the configured command.
pub fn run(config: &RunConfig) -> Result<Outcome> {
    let spec = config.family()?;
    let s0 = config.s0();
    let q = config.q();
    let options = config.solver_options();
    let tol = &config.tolerances;
    let mut csv = None;
    let (pass, body) = match config.command {
        Command::VerifyTheorem => {
            let r = theorem::verify_theorem(&spec, &s0, q, config.eta, &options)?;
            (r.residual_rel <= tol.residual_rel, report::curvature(&r, config.timing))
        }
        Command::VerifyLemmas => {
            let suite = lemmas::lemma_suite(&spec, &s0, q, config.eta, &options)?;
            let tol_fd = config.tol_fd(config.eta);
            let mut pass = suite.residuals.max() <= tol_fd;
            let halving = if config.lemma_halving {
                let h = lemmas::eta_halving(&spec, &s0, q, config.eta, &options)?;
                pass &= h.min_s_dominated_ratio().map_or(true, |r| r >= tol.halving_ratio);
                Some(h)
            } else {
                None
            };
            let mut body = report::lemmas(&suite, halving.as_ref());
            body.insert("tol_fd".into(), json!(tol_fd));
            (pass, body)
        }
        Command::WpMetric => {
            let points = studies::square_grid(&s0, config.wp_half_width, config.wp_points);
            let r = studies::wp_report(&spec, &points)?;
            (r.max_deviation <= tol.wp_constancy && r.positive_semidefinite, report::wp(&r))
        }
        Command::RescaleDemo => {
            let r = studies::rescale_demo(&spec, &s0, q, config.eta, &options)?;
            let pass = r.rescaled_phi_max <= tol.structural
                && r.rescaled_t4_max <= tol.structural
                && r.original_residual_rel <= tol.residual_rel
                && r.rescaled_residual_rel <= tol.residual_rel
                && r.shift_defect <= 10.0 * config.eta * config.eta;
            (pass, report::rescale(&r))
        }
        Command::Convergence => {
            let r = studies::convergence_study(&spec, &s0, q, &config.n_list, &config.eta_list, &options)?;
            let spatial_ok = r
                .spatial_order
                .map_or(true, |p| p >= config.stencil_order as f64 - tol.spatial_order_slack);
            let eta_ok = r.eta_order.map_or(true, |p| p >= tol.eta_order);
            csv = Some(r.to_csv());
            (spatial_ok && eta_ok, report::convergence(&r))
        }
        Command::Spectrum => {
            let fiber = Fiber::new(&spec, &s0, &options)?;
            let mut body = Map::new();
            for (name, kind) in [("sections", FormKind::Section), ("forms", FormKind::Form01)] {
                let count = config.spectrum_count.min(fiber.grid().len());
                let pairs = fiber.spectrum(kind, count)?;
                let dim = fiber.harmonic_basis(kind)?.vectors.len();
                body.insert(name.into(), json!({ "eigenvalues": pairs.values, "harmonic_dim": dim }));
            }
            (true, body)
        }
    };
    Ok(Outcome { report: report::envelope(config, pass, body), pass, csv })
}

/// Reads `DOLHODGE_THREADS`: `None` when unset, an error unless it is a
/// positive integer.
pub fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(Error::Config(format!("{THREADS_ENV}: {e}"))),
        Ok(raw) => match raw.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::Config(format!("{THREADS_ENV} must be a positive integer, got `{raw}`"))),
        },
    }
}

/// Loads the configuration, runs it and writes the artifacts. Returns the
/// process exit code; every nonzero code is accompanied by an error object
/// or a failing report.
pub fn main_with(args: &Args) -> i32 {
    let config = match RunConfig::load(Some(args.command), args.config.as_deref(), &args.set) {
        Ok(c) => c,
        Err(e) => return fail(Some(args.command), None, &e),
    };
    let outcome = match run(&config) {
        Ok(o) => o,
        Err(e) => return fail(Some(args.command), Some(&config), &e),
    };
    if let Some(text) = &outcome.csv {
        let path = config
            .csv_path
            .clone()
            .or_else(|| config.output_path.as_ref().map(|p| p.with_extension("csv")));
        if let Some(path) = path {
            if let Err(e) = report::write_csv(text, &path) {
                return fail(Some(args.command), Some(&config), &e);
            }
        }
    }
    if let Err(e) = report::emit_report(&outcome.report, config.output_path.as_deref()) {
        return fail(Some(args.command), Some(&config), &e);
    }
    if outcome.pass {
        0
    } else {
        1
    }
}

fn fail(command: Option<Command>, config: Option<&RunConfig>, err: &Error) -> i32 {
    let value = report::error(command, config, err);
    let path = config.and_then(|c| c.output_path.as_deref());
    if report::emit_report(&value, path).is_err() {
        print!("{}", report::render(&value));
    }
    eprintln!("dolhodge: {err}");
    err.exit_code()
}
