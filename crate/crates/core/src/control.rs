//! Feedback controls, cost evaluation, the damped Picard loop, and the
//! first-order optimality diagnostics.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::backward::{solve_backward_1d, solve_backward_2d, BSPDESolution, BackwardMode, BackwardOptions};
use crate::error::{Error, Result};
use crate::forward::{solve_forward_1d, solve_forward_2d, CommonNoisePath, ForwardTrajectory1D, ForwardTrajectory2D};
use crate::grid::Grid;
use crate::hamiltonian::{argmin_into, control_objective};
use crate::measures::SubProb1D;
use crate::model::{ControlBox, ModelSpec};

/// Feedback `g(t_n, x_i, y_j) ∈ ℝ^d`, stored with a single y row when it
/// does not depend on the intensity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackControl {
    pub nt1: usize,
    pub nx: usize,
    pub ny: usize,
    pub dim: usize,
    /// Index `((n·ny + j)·nx + i)·dim + k`.
    pub values: Vec<f64>,
}

impl FeedbackControl {
    /// Constant feedback; `two_d` stores every y row of the grid.
    pub fn constant(grid: &Grid, two_d: bool, value: &[f64]) -> Self {
        let ny = if two_d { grid.ny_total() } else { 1 };
        let nt1 = grid.nt + 1;
        let values = value.iter().copied().cycle().take(nt1 * ny * grid.nx * value.len()).collect();
        FeedbackControl { nt1, nx: grid.nx, ny, dim: value.len(), values }
    }

    /// Feedback sampled from `f(t, x, y, out)`; one-dimensional controls are
    /// sampled at `y = 0`.
    pub fn from_fn(grid: &Grid, two_d: bool, dim: usize, f: impl Fn(f64, f64, f64, &mut [f64])) -> Self {
        let mut g = FeedbackControl::constant(grid, two_d, &vec![0.0; dim]);
        for n in 0..g.nt1 {
            for j in 0..g.ny {
                let y = if two_d { grid.y(j) } else { 0.0 };
                for i in 0..g.nx {
                    let o = g.offset(n, i, j);
                    f(grid.t(n), grid.x(i), y, &mut g.values[o..o + dim]);
                }
            }
        }
        g
    }

    #[inline]
    fn offset(&self, n: usize, i: usize, j: usize) -> usize {
        let j = if self.ny == 1 { 0 } else { j };
        ((n * self.ny + j) * self.nx + i) * self.dim
    }

    pub fn at(&self, n: usize, i: usize, j: usize) -> &[f64] {
        let o = self.offset(n, i, j);
        &self.values[o..o + self.dim]
    }

    pub fn at_mut(&mut self, n: usize, i: usize, j: usize) -> &mut [f64] {
        let o = self.offset(n, i, j);
        &mut self.values[o..o + self.dim]
    }

    /// All nodes of row `j` at step `n`, `nx · dim` values.
    pub fn slice(&self, n: usize, j: usize) -> &[f64] {
        let o = self.offset(n, 0, j);
        &self.values[o..o + self.nx * self.dim]
    }

    pub fn is_two_d(&self) -> bool {
        self.ny > 1
    }

    /// True when some y row differs from the first one.
    pub fn y_dependent(&self) -> bool {
        if self.ny <= 1 {
            return false;
        }
        let row = self.nx * self.dim;
        (0..self.nt1).any(|n| {
            let base = self.slice(n, 0);
            (1..self.ny).any(|j| self.slice(n, j) != base)
        }) && row > 0
    }

    pub fn check_grid(&self, grid: &Grid, dim: usize) -> Result<()> {
        let ny_ok = self.ny == 1 || self.ny == grid.ny_total();
        if self.nt1 != grid.nt + 1 || self.nx != grid.nx || !ny_ok || self.dim != dim {
            return Err(Error::GridMismatch(format!(
                "control of shape ({}, {}, {}, {}) on grid ({}, {}, {}, {})",
                self.nt1,
                self.nx,
                self.ny,
                self.dim,
                grid.nt + 1,
                grid.nx,
                grid.ny_total(),
                dim
            )));
        }
        if let Some(v) = self.values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonfiniteInput(format!("control value {v}")));
        }
        Ok(())
    }

    pub fn check_box(&self, bx: &ControlBox) -> Result<()> {
        for (idx, chunk) in self.values.chunks(self.dim).enumerate() {
            if !bx.contains(chunk, 1e-12) {
                let node = idx % (self.nx * self.ny);
                return Err(Error::ControlOutOfBox {
                    step: idx / (self.nx * self.ny),
                    node,
                    value: chunk[0],
                });
            }
        }
        Ok(())
    }

    /// Copy with every y row of `grid` stored explicitly.
    pub fn lift(&self, grid: &Grid) -> Self {
        if self.ny == grid.ny_total() {
            return self.clone();
        }
        let ny = grid.ny_total();
        let row = self.nx * self.dim;
        let mut values = Vec::with_capacity(self.nt1 * ny * row);
        for n in 0..self.nt1 {
            let s = self.slice(n, 0);
            for _ in 0..ny {
                values.extend_from_slice(s);
            }
        }
        FeedbackControl { nt1: self.nt1, nx: self.nx, ny, dim: self.dim, values }
    }

    /// Single-row copy taken from row `j`.
    pub fn row(&self, j: usize) -> Self {
        let mut values = Vec::with_capacity(self.nt1 * self.nx * self.dim);
        for n in 0..self.nt1 {
            values.extend_from_slice(self.slice(n, j));
        }
        FeedbackControl { nt1: self.nt1, nx: self.nx, ny: 1, dim: self.dim, values }
    }

    /// `(1 − θ) self + θ other`.
    pub fn blend(&self, other: &FeedbackControl, theta: f64) -> Self {
        let values = self.values.iter().zip(&other.values).map(|(a, b)| (1.0 - theta) * a + theta * b).collect();
        FeedbackControl { values, ..self.clone() }
    }

    pub fn sup_diff(&self, other: &FeedbackControl) -> f64 {
        self.values.iter().zip(&other.values).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn to_csv(&self, grid: &Grid) -> String {
        let mut s = String::from(if self.ny > 1 { "t,x,y" } else { "t,x" });
        for k in 0..self.dim {
            let _ = write!(s, ",g{k}");
        }
        s.push('\n');
        for n in 0..self.nt1 {
            for j in 0..self.ny {
                for i in 0..self.nx {
                    let _ = write!(s, "{:.16e},{:.16e}", grid.t(n), grid.x(i));
                    if self.ny > 1 {
                        let _ = write!(s, ",{:.16e}", grid.y(j));
                    }
                    for v in self.at(n, i, j) {
                        let _ = write!(s, ",{v:.16e}");
                    }
                    s.push('\n');
                }
            }
        }
        s
    }
}

/// Which pairing the cost was computed with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostForm {
    /// `⟨μ_t, f̃⟩` on the half-plane.
    Joint,
    /// `⟨ν_t, f⟩` on the line.
    Reduced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub running: f64,
    pub terminal: f64,
    pub total: f64,
    pub form: CostForm,
    /// Running cost in the other form, when both are available.
    pub running_alt: Option<f64>,
    /// `|running − running_alt|`.
    pub form_gap: Option<f64>,
}

/// Forward trajectory of either equation.
#[derive(Debug, Clone)]
pub enum ForwardOutput {
    Reduced(ForwardTrajectory1D),
    Joint(ForwardTrajectory2D),
}

impl ForwardOutput {
    pub fn grid(&self) -> &Grid {
        match self {
            ForwardOutput::Reduced(t) => &t.grid,
            ForwardOutput::Joint(t) => &t.grid,
        }
    }

    pub fn nu(&self) -> &[SubProb1D] {
        match self {
            ForwardOutput::Reduced(t) => &t.nu,
            ForwardOutput::Joint(t) => &t.nu,
        }
    }

    pub fn noise(&self) -> Option<&CommonNoisePath> {
        match self {
            ForwardOutput::Reduced(t) => t.noise.as_ref(),
            ForwardOutput::Joint(t) => t.noise.as_ref(),
        }
    }

    pub fn masses(&self) -> Vec<f64> {
        match self {
            ForwardOutput::Reduced(t) => t.masses(),
            ForwardOutput::Joint(t) => t.masses(),
        }
    }
}

fn reduced_running(spec: &ModelSpec, grid: &Grid, g: &FeedbackControl, nu: &[SubProb1D]) -> f64 {
    let dt = grid.dt();
    (0..grid.nt)
        .map(|n| {
            let t = grid.t(n);
            let v = &nu[n];
            (0..grid.nx)
                .map(|i| {
                    let x = grid.x(i);
                    v.values[i] * spec.running_cost(t, x, v, g.at(n, i, 0))
                })
                .sum::<f64>()
                * grid.dx()
                * dt
        })
        .sum()
}

fn joint_running(spec: &ModelSpec, grid: &Grid, g: &FeedbackControl, traj: &ForwardTrajectory2D) -> f64 {
    let (dt, dx, dy) = (grid.dt(), grid.dx(), grid.dy());
    (0..grid.nt)
        .map(|n| {
            let t = grid.t(n);
            let nu = &traj.nu[n];
            let mu = &traj.mu[n];
            let f0: Vec<f64> = (0..grid.nx).map(|i| spec.f0.eval(t, grid.x(i), nu)).collect();
            let mut s = 0.0;
            for j in 0..grid.ny_total() {
                let w = (-grid.y(j)).exp();
                let row = mu.row(j);
                for i in 0..grid.nx {
                    if row[i] != 0.0 {
                        s += row[i] * w * (f0[i] + spec.f1_value(t, grid.x(i), g.at(n, i, j)));
                    }
                }
            }
            s * dx * dy * dt
        })
        .sum()
}

/// Cost `Σ_{n<N} Δt ⟨·, f⟩ + ψ(ν_T)`; both forms are reported when the
/// trajectory is two-dimensional and `g` ignores the intensity.
pub fn evaluate_cost(spec: &ModelSpec, g: &FeedbackControl, forward: &ForwardOutput) -> Result<CostReport> {
    let grid = forward.grid();
    g.check_grid(grid, spec.control_dim())?;
    let terminal = (spec.psi.value)(&forward.nu()[grid.nt]);
    let report = match forward {
        ForwardOutput::Reduced(traj) => {
            if g.y_dependent() {
                return Err(Error::ArgumentConflict("reduced cost needs a control independent of y".into()));
            }
            let running = reduced_running(spec, grid, g, &traj.nu);
            CostReport { running, terminal, total: running + terminal, form: CostForm::Reduced, running_alt: None, form_gap: None }
        }
        ForwardOutput::Joint(traj) => {
            let running = joint_running(spec, grid, g, traj);
            let alt = (!g.y_dependent()).then(|| reduced_running(spec, grid, g, &traj.nu));
            CostReport {
                running,
                terminal,
                total: running + terminal,
                form: CostForm::Joint,
                running_alt: alt,
                form_gap: alt.map(|a| (a - running).abs()),
            }
        }
    };
    Ok(report)
}

/// Terminal data `Dψ(ν_T)(x_i)` of the backward equations.
pub fn terminal_derivative(spec: &ModelSpec, grid: &Grid, nu_t: &SubProb1D) -> Vec<f64> {
    (0..grid.nx).map(|i| (spec.psi.derivative)(nu_t, grid.x(i))).collect()
}

/// `e^{−y_j} Dψ(ν_T)(x_i)` on the half-plane grid.
pub fn terminal_derivative_2d(spec: &ModelSpec, grid: &Grid, nu_t: &SubProb1D) -> Vec<f64> {
    let row = terminal_derivative(spec, grid, nu_t);
    let mut out = Vec::with_capacity(row.len() * grid.ny_total());
    for j in 0..grid.ny_total() {
        let w = (-grid.y(j)).exp();
        out.extend(row.iter().map(|v| w * v));
    }
    out
}

/// Which coupled system the Picard loop iterates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    /// Forward and semilinear backward equations on the line.
    Reduced,
    /// Forward equation and adjoint on the half-plane with a feedback in
    /// `(t, x, y)`.
    Joint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MfcOptions {
    pub route: Route,
    pub damping: f64,
    pub tol_pi: f64,
    pub max_iter: usize,
    /// Iterations without a new best residual before the loop gives up.
    pub stall_window: usize,
    pub backward: BackwardOptions,
    pub noise_seed: Option<u64>,
}

impl Default for MfcOptions {
    fn default() -> Self {
        MfcOptions {
            route: Route::Reduced,
            damping: 0.5,
            tol_pi: 1e-6,
            max_iter: 200,
            stall_window: 30,
            backward: BackwardOptions::default(),
            noise_seed: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MfcStatus {
    Converged,
    MaxIterations,
    /// No improvement of the residual over the stall window; the best
    /// iterate is returned.
    Stalled,
}

#[derive(Debug, Clone)]
pub struct MfcSolution {
    pub control: FeedbackControl,
    /// Semilinear solution on the reduced route, adjoint on the joint one.
    pub backward: BSPDESolution,
    pub forward: ForwardOutput,
    pub cost: CostReport,
    pub status: MfcStatus,
    pub iterations: usize,
    pub residual_trace: Vec<f64>,
    pub cost_trace: Vec<f64>,
}

/// Minimizing feedback `g₋(t, x, p)` for the gradients of `backward`,
/// weighted by `e^{−y}` on the half-plane.
pub fn feedback_from_gradient(spec: &ModelSpec, grid: &Grid, backward: &BSPDESolution) -> FeedbackControl {
    let two_d = backward.two_d;
    let d = spec.control_dim();
    let mut g = FeedbackControl::constant(grid, two_d, &vec![0.0; d]);
    let mut factor = vec![0.0; d];
    for n in 0..=grid.nt {
        let t = grid.t(n);
        let p = backward.gradient_at(n);
        for j in 0..g.ny {
            let w = if two_d { (-grid.y(j)).exp() } else { 1.0 };
            for i in 0..grid.nx {
                let x = grid.x(i);
                spec.drift_factor(t, x, &mut factor);
                let pi = p[j * grid.nx + i];
                argmin_into(spec, t, x, &factor, pi, w, g.at_mut(n, i, j));
            }
        }
    }
    g
}

struct Pass {
    forward: ForwardOutput,
    backward: BSPDESolution,
    cost: CostReport,
}

fn run_pass(spec: &ModelSpec, grid: &Grid, g: &FeedbackControl, noise: Option<&CommonNoisePath>, opts: &MfcOptions) -> Result<Pass> {
    match opts.route {
        Route::Reduced => {
            let fwd = solve_forward_1d(spec, grid, g, noise)?;
            let terminal = terminal_derivative(spec, grid, &fwd.nu[grid.nt]);
            let backward = solve_backward_1d(spec, grid, &fwd.nu, &terminal, noise, &opts.backward)?;
            let forward = ForwardOutput::Reduced(fwd);
            let cost = evaluate_cost(spec, g, &forward)?;
            Ok(Pass { forward, backward, cost })
        }
        Route::Joint => {
            let fwd = solve_forward_2d(spec, grid, g, noise)?;
            let terminal = terminal_derivative_2d(spec, grid, &fwd.nu[grid.nt]);
            let backward = solve_backward_2d(spec, grid, &fwd, BackwardMode::Adjoint(g), &terminal, &opts.backward)?;
            let forward = ForwardOutput::Joint(fwd);
            let cost = evaluate_cost(spec, g, &forward)?;
            Ok(Pass { forward, backward, cost })
        }
    }
}

/// Damped Picard iteration on the feedback: forward solve, backward solve,
/// pointwise minimization of the Hamiltonian, blending with weight θ.
pub fn solve_mfc(spec: &ModelSpec, grid: &Grid, initial: Option<&FeedbackControl>, opts: &MfcOptions) -> Result<MfcSolution> {
    if !(opts.tol_pi > 0.0) || !(opts.damping > 0.0 && opts.damping <= 1.0) {
        return Err(Error::Config("tol_pi must be positive and damping in (0, 1]".into()));
    }
    let two_d = opts.route == Route::Joint;
    let d = spec.control_dim();
    let mut g = match initial {
        Some(g0) => {
            g0.check_grid(grid, d)?;
            if two_d {
                g0.lift(grid)
            } else if g0.y_dependent() {
                return Err(Error::ArgumentConflict("reduced route needs a control independent of y".into()));
            } else {
                g0.row(0)
            }
        }
        None => FeedbackControl::constant(grid, two_d, &spec.control_box.center()),
    };
    g.check_box(&spec.control_box)?;
    let noise = opts.noise_seed.map(|s| CommonNoisePath::for_grid(s, grid));
    let noise = noise.as_ref();
    let mut residual_trace = Vec::new();
    let mut cost_trace = Vec::new();
    let mut best: Option<(f64, FeedbackControl)> = None;
    let mut since_best = 0;
    let mut status = MfcStatus::MaxIterations;
    let mut iterations = 0;
    for it in 1..=opts.max_iter {
        iterations = it;
        let pass = run_pass(spec, grid, &g, noise, opts)?;
        cost_trace.push(pass.cost.total);
        let g_new = feedback_from_gradient(spec, grid, &pass.backward);
        let res = g_new.sup_diff(&g);
        residual_trace.push(res);
        if res <= opts.tol_pi {
            g = g_new;
            status = MfcStatus::Converged;
            break;
        }
        match &best {
            Some((b, _)) if res >= *b => since_best += 1,
            _ => {
                best = Some((res, g.clone()));
                since_best = 0;
            }
        }
        if since_best >= opts.stall_window {
            g = best.take().expect("set above").1;
            status = MfcStatus::Stalled;
            break;
        }
        g = g.blend(&g_new, opts.damping);
    }
    let pass = run_pass(spec, grid, &g, noise, opts)?;
    Ok(MfcSolution {
        control: g,
        backward: pass.backward,
        forward: pass.forward,
        cost: pass.cost,
        status,
        iterations,
        residual_trace,
        cost_trace,
    })
}

fn check_adjoint(grid: &Grid, traj: &ForwardTrajectory2D, adjoint: &BSPDESolution) -> Result<()> {
    if !adjoint.two_d || !adjoint.grid.same_space(grid) || adjoint.grid.nt != grid.nt || !traj.grid.same_space(grid) {
        return Err(Error::GridMismatch("adjoint and trajectory must share the half-plane grid".into()));
    }
    Ok(())
}

/// Directional derivative `Σ_n Δt ⟨μ_n, (b₁ ∂ₓũ + e^{−y} ∇f₁(g)) · h⟩` of the
/// discrete cost.
pub fn gateaux_derivative(
    spec: &ModelSpec,
    g: &FeedbackControl,
    h: &FeedbackControl,
    mu_traj: &ForwardTrajectory2D,
    adjoint: &BSPDESolution,
) -> Result<f64> {
    let grid = &mu_traj.grid;
    let d = spec.control_dim();
    g.check_grid(grid, d)?;
    h.check_grid(grid, d)?;
    check_adjoint(grid, mu_traj, adjoint)?;
    let bx = &spec.control_box;
    let tol = 1e-12;
    for n in 0..grid.nt {
        for j in 0..grid.ny_total() {
            for i in 0..grid.nx {
                let (gv, hv) = (g.at(n, i, j), h.at(n, i, j));
                for k in 0..d {
                    let leaves = (gv[k] <= bx.lower[k] + tol && hv[k] < 0.0) || (gv[k] >= bx.upper[k] - tol && hv[k] > 0.0);
                    if leaves {
                        return Err(Error::DirectionLeavesBox { step: n, node: j * grid.nx + i });
                    }
                }
            }
        }
    }
    let (nx, dx, dy, dt) = (grid.nx, grid.dx(), grid.dy(), grid.dt());
    let mut factor = vec![0.0; d];
    let mut grad = vec![0.0; d];
    let mut total = 0.0;
    for n in 0..grid.nt {
        let t = grid.t(n);
        let p = adjoint.gradient_at(n);
        let mu = &mu_traj.mu[n];
        for j in 0..grid.ny_total() {
            let w = (-grid.y(j)).exp();
            let row = mu.row(j);
            for i in 0..nx {
                if row[i] == 0.0 {
                    continue;
                }
                let x = grid.x(i);
                spec.drift_factor(t, x, &mut factor);
                spec.f1_gradient(t, x, g.at(n, i, j), &mut grad);
                let hv = h.at(n, i, j);
                let s: f64 = (0..d).map(|k| (factor[k] * p[j * nx + i] + w * grad[k]) * hv[k]).sum();
                total += row[i] * s;
            }
        }
    }
    Ok(total * dx * dy * dt)
}

/// `sup (K̃(g) − min K̃)` over nodes with `μ > μ_floor`, before the
/// horizon.
pub fn smp_residual(
    spec: &ModelSpec,
    g: &FeedbackControl,
    mu_traj: &ForwardTrajectory2D,
    adjoint: &BSPDESolution,
    mu_floor: f64,
) -> Result<f64> {
    let grid = &mu_traj.grid;
    let d = spec.control_dim();
    g.check_grid(grid, d)?;
    check_adjoint(grid, mu_traj, adjoint)?;
    let nx = grid.nx;
    let mut factor = vec![0.0; d];
    let mut best = vec![0.0; d];
    let mut res = 0.0f64;
    for n in 0..grid.nt {
        let t = grid.t(n);
        let p = adjoint.gradient_at(n);
        let mu = &mu_traj.mu[n];
        for j in 0..grid.ny_total() {
            let w = (-grid.y(j)).exp();
            for i in 0..nx {
                if mu.at(i, j) <= mu_floor {
                    continue;
                }
                let x = grid.x(i);
                let pi = p[j * nx + i];
                spec.drift_factor(t, x, &mut factor);
                argmin_into(spec, t, x, &factor, pi, w, &mut best);
                let kg = control_objective(spec, t, x, &factor, pi, w, g.at(n, i, j));
                let kb = control_objective(spec, t, x, &factor, pi, w, &best);
                res = res.max(kg - kb);
            }
        }
    }
    Ok(res.max(0.0))
}

/// `max_{t, x, k} (max_y g − min_y g)`.
pub fn intensity_independence_diag(g: &FeedbackControl) -> f64 {
    let mut diag = 0.0f64;
    for n in 0..g.nt1 {
        for i in 0..g.nx {
            for k in 0..g.dim {
                let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
                for j in 0..g.ny {
                    let v = g.at(n, i, j)[k];
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
                diag = diag.max(hi - lo);
            }
        }
    }
    diag
}

/// `max |ũ − e^{−y} u| / max |u|` over all time nodes and rows.
pub fn separability_gap(two_d: &BSPDESolution, one_d: &BSPDESolution) -> Result<f64> {
    let grid = &two_d.grid;
    if !two_d.two_d || one_d.two_d || !one_d.grid.same_space(grid) || one_d.grid.nt != grid.nt {
        return Err(Error::GridMismatch("separability gap needs a 2D and a 1D solution on one grid".into()));
    }
    let nx = grid.nx;
    let mut gap = 0.0f64;
    for (u2, u1) in two_d.values.iter().zip(&one_d.values) {
        for j in 0..grid.ny_total() {
            let w = (-grid.y(j)).exp();
            for i in 0..nx {
                gap = gap.max((u2[j * nx + i] - w * u1[i]).abs());
            }
        }
    }
    let scale = one_d.sup_norm();
    Ok(if scale > 0.0 { gap / scale } else { gap })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;

    fn grid() -> Grid {
        build_grid(-2.0, 2.0, 11, 1.0, 5, 4, -0.5, 1.0).unwrap()
    }

    #[test]
    fn constant_control_is_y_independent() {
        let g = FeedbackControl::constant(&grid(), true, &[0.3]);
        assert!(!g.y_dependent());
        assert_eq!(intensity_independence_diag(&g), 0.0);
    }

    #[test]
    fn diag_of_identity_in_y_is_range() {
        let gr = grid();
        let g = FeedbackControl::from_fn(&gr, true, 1, |_, _, y, o| o[0] = y);
        assert!((intensity_independence_diag(&g) - (gr.y_max - gr.y_min())).abs() < 1e-12);
        assert!(g.y_dependent());
    }

    #[test]
    fn lift_and_row_roundtrip() {
        let gr = grid();
        let g = FeedbackControl::from_fn(&gr, false, 2, |t, x, _, o| {
            o[0] = t;
            o[1] = x;
        });
        let l = g.lift(&gr);
        assert_eq!(l.ny, gr.ny_total());
        assert_eq!(l.row(3), g);
    }

    #[test]
    fn out_of_box_is_reported() {
        let gr = grid();
        let g = FeedbackControl::constant(&gr, false, &[3.0]);
        let bx = ControlBox::interval(-2.0, 2.0);
        assert!(matches!(g.check_box(&bx), Err(Error::ControlOutOfBox { .. })));
    }
}
