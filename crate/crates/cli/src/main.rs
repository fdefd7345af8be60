//! `mfkill`: runs one experiment described by a JSON configuration and
//! writes CSV fields, `diagnostics.json` and `manifest.json` to the output
//! directory.
//!
//! # Configuration
//!
//! ```json
//! {
//!   "model": { "builtin": "lq_killing", "control_weight": 1.0 },
//!   "grid": { "x_min": -4, "x_max": 4, "nx": 101, "y_max": 4, "ny": 41, "nt": 100, "extension": -0.5 },
//!   "levels": [ { "nx": 51, "ny": 11, "nt": 50 } ],
//!   "solver": {
//!     "tol_fp": 1e-10, "max_fp_iter": 50, "fp_damping": 0.5, "eta": 1.0,
//!     "tol_pi": 1e-6, "max_iter": 200, "damping": 0.5, "stall_window": 30,
//!     "mu_floor": 1e-12, "eps_neg": 1e-12, "mean_field_terms": true,
//!     "route": "reduced", "noise_seed": null
//!   },
//!   "particles": { "count": 100000, "empirical_coupling": false, "snapshot_every": 0 },
//!   "regularize": { "indices": [1, 2, 4, 8, 16] },
//!   "experiment": "solve",
//!   "output": "out",
//!   "seed": 1
//! }
//! ```
//!
//! `model` holds the parameters of the built-in family: `builtin` names
//! the base parameter set (`lq_killing` or `constant_intensity`) and every
//! other key overrides one field (`horizon`, `sigma`, `sigma0`,
//! `intensity`, `control_lower`, `control_upper`, `control_weight`,
//! `mean_reversion`, `drift_coupling`, `state_weight`, `state_target`,
//! `cost_offset`, `cost_coupling`, `terminal_weight`, `terminal_target`,
//! `initial_mean`, `initial_std`, `initial_intensity`, `nondegeneracy`,
//! `sample_domain`). `intensity` is `{"kind": "step", "rate": r}`,
//! `{"kind": "constant", "rate": r}` or `{"kind": "linear", "slope": s}`;
//! `initial_intensity` is `"zero"`, `{"uniform": a}` or
//! `{"exponential": a}`.
//!
//! Every block except `model` is optional. `levels` lists the grids of the
//! refinement study; when empty the base grid is refined twice.
//!
//! Exit codes: 0 on success, 2 on configuration or validation errors, 3
//! when a solver does not converge, 1 on I/O failures.

mod experiments;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

#[derive(Debug, Parser)]
#[command(name = "mfkill", version = env!("MFKILL_VERSION"), about = "Mean-field control with killing")]
pub struct Args {
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// solve, forward, backward, particles, separability-check, smp-check
    /// or regularize-sweep; overrides the configuration.
    #[arg(long)]
    pub experiment: Option<String>,
    /// Output directory; overrides the configuration.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Random seed; overrides the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Halves Δx, Δy and Δt this many times.
    #[arg(long, default_value_t = 0)]
    pub refine: usize,
}

/// Failure classes with their exit codes.
#[derive(Debug)]
pub enum Failure {
    Invalid(String),
    NotConverged(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Io(_) => 1,
            Failure::Invalid(_) => 2,
            Failure::NotConverged(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Invalid(m) | Failure::NotConverged(m) | Failure::Io(m) => m,
        }
    }
}

impl From<mfkill_core::Error> for Failure {
    fn from(e: mfkill_core::Error) -> Self {
        use mfkill_core::Error as E;
        match e {
            E::FixedPointDiverged { .. } => Failure::NotConverged(e.to_string()),
            E::Io(_) => Failure::Io(e.to_string()),
            other => Failure::Invalid(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    match experiments::run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("mfkill: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
