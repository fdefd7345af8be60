//! JSON run configuration: model, grid, solver tolerances and experiment
//! parameters.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::backward::BackwardOptions;
use crate::control::{MfcOptions, Route};
use crate::error::{Error, Result};
use crate::grid::{build_grid, Grid};
use crate::model::{ModelParams, ModelSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub x_min: f64,
    pub x_max: f64,
    pub nx: usize,
    pub y_max: f64,
    pub ny: usize,
    pub nt: usize,
    /// Extension `ℓ ≤ 0` of the intensity axis below zero.
    pub extension: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { x_min: -4.0, x_max: 4.0, nx: 101, y_max: 4.0, ny: 41, nt: 100, extension: -0.5 }
    }
}

impl GridConfig {
    pub fn build(&self, horizon: f64) -> Result<Grid> {
        build_grid(self.x_min, self.x_max, self.nx, self.y_max, self.ny, self.nt, self.extension, horizon)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub tol_fp: f64,
    pub max_fp_iter: usize,
    pub fp_damping: f64,
    pub eta: f64,
    pub tol_pi: f64,
    pub max_iter: usize,
    pub damping: f64,
    pub stall_window: usize,
    pub mu_floor: f64,
    pub eps_neg: f64,
    /// Keep the functional-derivative terms (control of the population);
    /// `false` gives the equilibrium system.
    pub mean_field_terms: bool,
    pub route: Route,
    pub noise_seed: Option<u64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let b = BackwardOptions::default();
        let m = MfcOptions::default();
        SolverConfig {
            tol_fp: b.tol_fp,
            max_fp_iter: b.max_fp_iter,
            fp_damping: b.damping,
            eta: b.eta,
            tol_pi: m.tol_pi,
            max_iter: m.max_iter,
            damping: m.damping,
            stall_window: m.stall_window,
            mu_floor: crate::MU_FLOOR,
            eps_neg: crate::EPS_NEG,
            mean_field_terms: true,
            route: Route::Reduced,
            noise_seed: None,
        }
    }
}

impl SolverConfig {
    pub fn check(&self) -> Result<()> {
        let positive = [self.tol_fp, self.tol_pi, self.mu_floor, self.eps_neg, self.fp_damping, self.damping];
        if positive.iter().any(|v| !(*v > 0.0)) || self.fp_damping > 1.0 || self.damping > 1.0 {
            return Err(Error::Config("tolerances must be positive and dampings in (0, 1]".into()));
        }
        if self.max_fp_iter == 0 || self.max_iter == 0 {
            return Err(Error::Config("iteration caps must be positive".into()));
        }
        Ok(())
    }

    pub fn backward_options(&self) -> BackwardOptions {
        BackwardOptions {
            tol_fp: self.tol_fp,
            max_fp_iter: self.max_fp_iter,
            damping: self.fp_damping,
            eta: self.eta,
            mean_field_terms: self.mean_field_terms,
            mu_floor: self.mu_floor,
        }
    }

    pub fn mfc_options(&self) -> MfcOptions {
        MfcOptions {
            route: self.route,
            damping: self.damping,
            tol_pi: self.tol_pi,
            max_iter: self.max_iter,
            stall_window: self.stall_window,
            backward: self.backward_options(),
            noise_seed: self.noise_seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParticleConfig {
    pub count: usize,
    /// `true` feeds the coefficients with the particles' own histogram.
    pub empirical_coupling: bool,
    pub snapshot_every: usize,
}

impl Default for ParticleConfig {
    fn default() -> Self {
        ParticleConfig { count: 100_000, empirical_coupling: false, snapshot_every: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegularizeConfig {
    pub indices: Vec<usize>,
}

impl Default for RegularizeConfig {
    fn default() -> Self {
        RegularizeConfig { indices: vec![1, 2, 4, 8, 16] }
    }
}

/// Complete run description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// `{"builtin": name, ...overrides}` or a full parameter object.
    pub model: Value,
    #[serde(default)]
    pub grid: GridConfig,
    /// Refinement levels for convergence studies; empty means the base grid
    /// refined twice.
    #[serde(default)]
    pub levels: Vec<GridConfig>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub particles: ParticleConfig,
    #[serde(default)]
    pub regularize: RegularizeConfig,
    #[serde(default)]
    pub experiment: Option<String>,
    #[serde(default)]
    pub output: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.solver.check()?;
        Ok(cfg)
    }

    pub fn model_params(&self) -> Result<ModelParams> {
        resolve_model(&self.model)
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        self.model_params()?.build()
    }

    pub fn grid(&self, horizon: f64) -> Result<Grid> {
        self.grid.build(horizon)
    }

    /// Grids of the refinement study.
    pub fn level_grids(&self, horizon: f64) -> Result<Vec<Grid>> {
        if self.levels.is_empty() {
            let g = self.grid(horizon)?;
            Ok(vec![g.clone(), g.refine(), g.refine().refine()])
        } else {
            self.levels.iter().map(|l| l.build(horizon)).collect()
        }
    }
}

/// Merges the keys of `model` onto the named built-in parameters.
pub fn resolve_model(model: &Value) -> Result<ModelParams> {
    let obj = model
        .as_object()
        .ok_or_else(|| Error::Config("model block must be an object".into()))?;
    let mut base = match obj.get("builtin") {
        Some(Value::String(name)) => {
            let p = ModelParams::builtin(name).ok_or_else(|| Error::Config(format!("unknown built-in model '{name}'")))?;
            serde_json::to_value(p)?
        }
        Some(other) => return Err(Error::Config(format!("builtin must be a string, got {other}"))),
        None => serde_json::to_value(ModelParams::default())?,
    };
    let target = base.as_object_mut().expect("parameters serialize to an object");
    for (k, v) in obj {
        if k != "builtin" {
            target.insert(k.clone(), v.clone());
        }
    }
    serde_json::from_value(base).map_err(|e| Error::Config(format!("model: {e}")))
}
