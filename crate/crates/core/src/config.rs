//! Run configuration of the `dolhodge` binary.
//!
//! A configuration is resolved in three layers: built-in defaults, an optional
//! JSON file, then `--set key=value` overrides. Keys are flat except for the
//! `tolerances` and `solver` groups, which are addressed as `group.key` on the
//! command line. Unknown keys are rejected at every layer.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::family::FamilySpec;
use crate::grid::TorusGrid;
use crate::linalg::CMat;
use crate::solver::SolverOptions;
use crate::C64;

/// Experiment to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    VerifyTheorem,
    VerifyLemmas,
    WpMetric,
    RescaleDemo,
    Convergence,
    Spectrum,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::VerifyTheorem => "verify-theorem",
            Command::VerifyLemmas => "verify-lemmas",
            Command::WpMetric => "wp-metric",
            Command::RescaleDemo => "rescale-demo",
            Command::Convergence => "convergence",
            Command::Spectrum => "spectrum",
        }
    }
}

/// Pass/fail thresholds asserted by the commands.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Bound on the relative residual of the curvature formula.
    pub residual_rel: f64,
    /// Override of the lemma-suite tolerance `max(10 eta^2, 50 N^-order)`.
    pub tol_fd: Option<f64>,
    /// Bound on the variation of the Weil-Petersson metric over the grid.
    pub wp_constancy: f64,
    /// Bound on exact zeros such as the rescaled `Phi` and `T4`.
    pub structural: f64,
    /// Smallest accepted ratio of parameter-dominated residuals under `eta -> eta/2`.
    pub halving_ratio: f64,
    /// Smallest accepted `eta` order of the convergence study.
    pub eta_order: f64,
    /// Accepted shortfall of the spatial order below the stencil order.
    pub spatial_order_slack: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            residual_rel: 5e-3,
            tol_fd: None,
            wp_constancy: 1e-10,
            structural: 1e-12,
            halving_ratio: 3.0,
            eta_order: 1.6,
            spatial_order_slack: 0.5,
        }
    }
}

/// Fully resolved configuration; every field has a default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub command: Command,
    /// Lattice parameter `[re, im]`.
    pub tau: [f64; 2],
    pub degree: i64,
    pub n_side: usize,
    pub stencil_order: usize,
    /// Twist vector `c`, one `[re, im]` per base coordinate; `null` means `[pi / Im tau]`.
    pub twist: Option<Vec<[f64; 2]>>,
    /// Hermitian matrix `A` of the weight `phi = s^* A s`, rows of `[re, im]`.
    pub rescale: Vec<Vec<[f64; 2]>>,
    /// Coefficient `beta` of the optional quartic weight `beta |s|^4`.
    pub quartic: f64,
    /// Cohomological degree; `null` picks 0 for positive degree and 1 otherwise.
    pub q: Option<usize>,
    /// Base point, `null` for the origin.
    pub s0: Option<Vec<[f64; 2]>>,
    pub eta: f64,
    pub seed: u64,
    /// Report destination; `null` prints to standard output.
    pub output_path: Option<PathBuf>,
    /// CSV destination of `convergence`; `null` derives it from `output_path`.
    pub csv_path: Option<PathBuf>,
    /// Grid sizes and step sizes of `convergence`.
    pub n_list: Vec<usize>,
    pub eta_list: Vec<f64>,
    /// Half width and points per side of the `wp-metric` parameter grid.
    pub wp_half_width: f64,
    pub wp_points: usize,
    /// Whether `verify-lemmas` also reruns the suite at `eta / 2`.
    pub lemma_halving: bool,
    /// Number of eigenvalues reported by `spectrum`.
    pub spectrum_count: usize,
    /// Whether reports carry wall-clock timings (which break byte-identical output).
    pub timing: bool,
    pub tolerances: Tolerances,
    pub solver: SolverOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            command: Command::VerifyTheorem,
            tau: [0.0, 1.0],
            degree: 2,
            n_side: 48,
            stencil_order: 4,
            twist: None,
            rescale: vec![vec![[0.3, 0.0]]],
            quartic: 0.0,
            q: None,
            s0: None,
            eta: 1e-2,
            seed: 0x5EED,
            output_path: None,
            csv_path: None,
            n_list: vec![16, 24, 32, 48],
            eta_list: vec![4e-2, 2e-2, 1e-2],
            wp_half_width: 0.5,
            wp_points: 5,
            lemma_halving: false,
            spectrum_count: 8,
            timing: false,
            tolerances: Tolerances::default(),
            solver: SolverOptions::default(),
        }
    }
}

fn complex(v: [f64; 2]) -> C64 {
    C64::new(v[0], v[1])
}

impl RunConfig {
    /// Resolves defaults, then `file`, then each `key=value` override.
    pub fn load(command: Option<Command>, file: Option<&Path>, sets: &[String]) -> Result<RunConfig> {
        let layer = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
                Some(serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?)
            }
            None => None,
        };
        Self::resolve(command, layer, sets)
    }

    /// Resolves defaults overridden by the keys of a JSON object.
    pub fn from_json(text: &str) -> Result<RunConfig> {
        let layer = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Self::resolve(None, Some(layer), &[])
    }

    fn resolve(command: Option<Command>, layer: Option<Value>, sets: &[String]) -> Result<RunConfig> {
        let mut value = serde_json::to_value(RunConfig::default()).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(layer) = layer {
            merge(&mut value, layer, "")?;
        }
        for set in sets {
            let (key, raw) = set
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{set}` is not of the form key=value")))?;
            let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            let mut layer = parsed;
            for part in key.split('.').rev() {
                let mut map = Map::new();
                map.insert(part.to_string(), layer);
                layer = Value::Object(map);
            }
            merge(&mut value, layer, "")?;
        }
        if let Some(command) = command {
            value["command"] = serde_json::to_value(command).map_err(|e| Error::Config(e.to_string()))?;
        }
        let config: RunConfig = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return bad(format!("eta must be positive, got {}", self.eta));
        }
        if let Some(q) = self.q {
            if q > 1 {
                return bad(format!("q must be 0 or 1, got {q}"));
            }
        }
        let m = self.base_dim();
        if m == 0 {
            return bad("twist must have at least one entry".into());
        }
        if self.rescale.len() != m || self.rescale.iter().any(|row| row.len() != m) {
            return bad(format!("rescale must be a {m} x {m} matrix"));
        }
        if let Some(s0) = &self.s0 {
            if s0.len() != m {
                return bad(format!("s0 has {} entries but the twist has {m}", s0.len()));
            }
        }
        if self.eta_list.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
            return bad("eta_list entries must be positive".into());
        }
        if self.wp_points == 0 {
            return bad("wp_points must be positive".into());
        }
        Ok(())
    }

    pub fn base_dim(&self) -> usize {
        self.twist.as_ref().map_or(1, Vec::len)
    }

    /// Degree in cohomology: the configured value or the nonvanishing one.
    pub fn q(&self) -> usize {
        self.q.unwrap_or(if self.degree > 0 { 0 } else { 1 })
    }

    pub fn s0(&self) -> Vec<C64> {
        match &self.s0 {
            Some(v) => v.iter().copied().map(complex).collect(),
            None => vec![C64::new(0.0, 0.0); self.base_dim()],
        }
    }

    pub fn grid(&self) -> Result<TorusGrid> {
        TorusGrid::new(complex(self.tau), self.n_side, self.stencil_order)
    }

    pub fn family(&self) -> Result<FamilySpec> {
        let grid = self.grid()?;
        let twist = match &self.twist {
            Some(v) => v.iter().copied().map(complex).collect(),
            None => vec![C64::new(PI / grid.t(), 0.0)],
        };
        let m = twist.len();
        let rescale = CMat::from_fn(m, m, |k, l| complex(self.rescale[k][l]));
        FamilySpec::new(grid, self.degree, twist, rescale)?.with_quartic(self.quartic)
    }

    /// Solver options with the configured seed.
    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions { seed: self.seed, ..self.solver.clone() }
    }

    /// Lemma-suite tolerance for this configuration.
    pub fn tol_fd(&self, eta: f64) -> f64 {
        self.tolerances.tol_fd.unwrap_or_else(|| crate::lemmas::tol_fd(eta, self.n_side, self.stencil_order))
    }
}

/// Overwrites `base` with `layer`, recursing into objects and rejecting keys
/// absent from `base`.
fn merge(base: &mut Value, layer: Value, prefix: &str) -> Result<()> {
    match (base, layer) {
        (Value::Object(b), Value::Object(l)) => {
            for (key, v) in l {
                let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
                let slot = b.get_mut(&key).ok_or_else(|| Error::Config(format!("unknown key `{path}`")))?;
                if slot.is_object() && v.is_object() {
                    merge(slot, v, &path)?;
                } else {
                    *slot = v;
                }
            }
            Ok(())
        }
        (_, _) if prefix.is_empty() => Err(Error::Config("configuration must be a JSON object".into())),
        (_, _) => Err(Error::Config(format!("`{prefix}` must be a JSON object"))),
    }
}
