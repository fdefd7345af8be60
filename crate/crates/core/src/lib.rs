//! Numerical toolkit for mean-field control of diffusions with killing.
//!
//! Particles move as `dX = b dt + σ dB + σ₀ dW` and accumulate intensity
//! `dΛ = λ dt`; a particle dies when `Λ` exceeds an independent exponential
//! clock. The crate solves the forward equations for the joint law of
//! `(X, Λ)` and for the subprobability `ν = S(μ)`, the backward equations,
//! the control loop, and a particle Monte Carlo oracle.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod backward;
pub mod config;
pub mod control;
pub mod error;
pub mod forward;
pub mod grid;
pub mod hamiltonian;
pub mod measures;
pub mod model;
mod numerics;
pub mod particles;
pub mod regularization;

pub use backward::{
    energy_report, solve_backward_1d, solve_backward_2d, solve_linear_galerkin, BSPDESolution,
    BackwardMode, BackwardOptions, EnergyReport,
};
pub use control::{
    evaluate_cost, gateaux_derivative, intensity_independence_diag, smp_residual, solve_mfc,
    CostForm, CostReport, FeedbackControl, ForwardOutput, MfcOptions, MfcSolution, MfcStatus,
    Route,
};
pub use error::{Error, Result, Violation};
pub use forward::{
    shift_density, solve_forward_1d, solve_forward_2d, CommonNoisePath, ForwardTrajectory1D,
    ForwardTrajectory2D,
};
pub use grid::{build_grid, Grid};
pub use hamiltonian::{f_nu, f_tilde_mu, h_nu, h_tilde_mu, k_tilde, minimize_hamiltonian};
pub use measures::{
    discretize_measure, metric_d0, metric_dp, s_map, truncate_measure, Density2D, SubProb1D,
};
pub use model::{validate_model, ModelSpec, ValidationReport};
pub use particles::{
    empirical_subprob, estimate_cost_mc, simulate_particles, Coupling, ParticleEnsemble,
    ParticleTrajectory, WeightMode,
};
pub use regularization::{build_approx_family, inf_convolution, mollify, ApproxFamily};

/// Density floor below which `μ(x, y)` is treated as zero.
pub const MU_FLOOR: f64 = 1e-12;
/// Tolerance for negative density values produced by the numerics.
pub const EPS_NEG: f64 = 1e-12;
