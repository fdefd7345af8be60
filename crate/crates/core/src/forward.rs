//! Forward equations for the joint density `μ_t(x, y)` and the
//! subprobability `ν_t(x)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::FeedbackControl;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::measures::{s_map, Density2D, SubProb1D};
use crate::model::ModelSpec;
use crate::numerics::{self, Tridiagonal};

/// Realized common-noise path with increments `ΔW_k ~ N(0, Δt)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommonNoisePath {
    pub seed: u64,
    pub dt: f64,
    pub increments: Vec<f64>,
}

impl CommonNoisePath {
    pub fn new(seed: u64, nt: usize, dt: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sd = dt.sqrt();
        let increments = (0..nt)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                sd * z
            })
            .collect();
        CommonNoisePath { seed, dt, increments }
    }

    pub fn for_grid(seed: u64, grid: &Grid) -> Self {
        CommonNoisePath::new(seed, grid.nt, grid.dt())
    }

    /// Cumulative path `W_{t_k}`, starting at zero.
    pub fn path(&self) -> Vec<f64> {
        let mut w = Vec::with_capacity(self.increments.len() + 1);
        let mut acc = 0.0;
        w.push(acc);
        for d in &self.increments {
            acc += d;
            w.push(acc);
        }
        w
    }

    fn check(&self, grid: &Grid) -> Result<()> {
        if self.increments.len() != grid.nt || (self.dt - grid.dt()).abs() > 1e-12 * grid.dt() {
            return Err(Error::GridMismatch(format!(
                "noise path has {} increments of {} for {} steps of {}",
                self.increments.len(),
                self.dt,
                grid.nt,
                grid.dt()
            )));
        }
        Ok(())
    }
}

/// Time-indexed joint densities together with their images under `S`.
#[derive(Debug, Clone)]
pub struct ForwardTrajectory2D {
    pub grid: Grid,
    pub mu: Vec<Density2D>,
    pub nu: Vec<SubProb1D>,
    pub control: FeedbackControl,
    pub noise: Option<CommonNoisePath>,
    /// Numerical viscosity coefficient used in each step.
    pub alpha: Vec<f64>,
    /// `(sup‖ρ‖² + Σ‖ρ‖²_{H^{1,0}} Δt) / ‖ρ₀‖²`.
    pub energy_constant: f64,
    /// Largest mass found in the two boundary columns.
    pub boundary_mass: f64,
}

impl ForwardTrajectory2D {
    pub fn masses(&self) -> Vec<f64> {
        self.mu.iter().map(|m| m.mass()).collect()
    }
}

/// Time-indexed subprobabilities from the one-dimensional equation.
#[derive(Debug, Clone)]
pub struct ForwardTrajectory1D {
    pub grid: Grid,
    pub nu: Vec<SubProb1D>,
    pub control: FeedbackControl,
    pub noise: Option<CommonNoisePath>,
    pub alpha: Vec<f64>,
    pub energy_constant: f64,
    pub boundary_mass: f64,
}

impl ForwardTrajectory1D {
    pub fn masses(&self) -> Vec<f64> {
        self.nu.iter().map(|m| m.mass()).collect()
    }
}

/// Coefficients frozen over one time step.
pub(crate) struct StepCoefficients {
    pub t: f64,
    pub a: Vec<f64>,
    pub b0: Vec<f64>,
    /// `b1_factor` per node, `d` entries each.
    pub factor: Vec<f64>,
    pub lambda: Vec<f64>,
}

impl StepCoefficients {
    pub fn new(spec: &ModelSpec, grid: &Grid, n: usize, nu: &SubProb1D, pathwise: bool) -> Self {
        let t = grid.t(n);
        let d = spec.control_dim();
        let nx = grid.nx;
        let mut factor = vec![0.0; nx * d];
        let mut a = Vec::with_capacity(nx);
        let mut b0 = Vec::with_capacity(nx);
        let mut lambda = Vec::with_capacity(nx);
        for i in 0..nx {
            let x = grid.x(i);
            a.push(spec.diffusion(t, x, pathwise));
            b0.push(spec.b0_value(t, x, nu));
            lambda.push((spec.lambda)(t, x));
            spec.drift_factor(t, x, &mut factor[i * d..(i + 1) * d]);
        }
        StepCoefficients { t, a, b0, factor, lambda }
    }

    /// Total drift on one row for the control slice `g` (`nx · d` values).
    #[inline]
    pub fn drift_row(&self, g: &[f64], d: usize, out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let mut s = self.b0[i];
            for k in 0..d {
                s += self.factor[i * d + k] * g[i * d + k];
            }
            *o = s;
        }
    }
}

/// Base numerical viscosity: a bound on `|b₀|` at the initial law, padded,
/// plus the largest `|b₁ · g|` over the box.
pub(crate) fn base_alpha(spec: &ModelSpec, grid: &Grid, nu0: &SubProb1D) -> f64 {
    let mut b0 = 0.0f64;
    let mut b1 = 0.0f64;
    let stride = (grid.nt / 16).max(1);
    for n in (0..=grid.nt).step_by(stride) {
        let t = grid.t(n);
        b0 = b0.max(spec.b0_bound(grid, t, nu0));
        b1 = b1.max(spec.b1_bound(grid, t));
    }
    1.25 * b0 + b1
}

fn check_lambda_cfl(spec: &ModelSpec, grid: &Grid) -> Result<f64> {
    let lmax = spec.lambda_bound(grid);
    let cfl = lmax * grid.dt() / grid.dy();
    if cfl > 1.0 + 1e-12 {
        return Err(Error::CflViolation { cfl, direction: "y" });
    }
    Ok(lmax)
}

fn check_x_cfl(alpha: f64, grid: &Grid) -> Result<()> {
    let cfl = alpha * grid.dt() / grid.dx();
    if cfl > 1.0 + 1e-12 {
        return Err(Error::CflViolation { cfl, direction: "x" });
    }
    Ok(())
}

fn step_alpha(base: f64, drift: &[f64]) -> f64 {
    drift.iter().fold(base, |m, b| m.max(b.abs()))
}

fn h1_norm_sq(row: &[f64], dx: f64) -> f64 {
    let l2: f64 = row.iter().map(|v| v * v).sum::<f64>() * dx;
    let grad: f64 = row.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum::<f64>() / dx;
    l2 + grad
}

/// `out(x) = ρ(x − offset)` by linear interpolation with zero inflow.
pub fn shift_density(density: &SubProb1D, offset: f64) -> SubProb1D {
    let mut out = vec![0.0; density.len()];
    numerics::shift(&density.values, offset / density.dx, &mut out);
    SubProb1D::from_raw(density.x0, density.dx, out)
}

/// Joint density forward solve: explicit Rusanov transport in x, implicit
/// diffusion, upwind transport in y, then the pathwise noise shift.
pub fn solve_forward_2d(
    spec: &ModelSpec,
    grid: &Grid,
    g: &FeedbackControl,
    noise: Option<&CommonNoisePath>,
) -> Result<ForwardTrajectory2D> {
    g.check_grid(grid, spec.control_dim())?;
    g.check_box(&spec.control_box)?;
    if let Some(w) = noise {
        w.check(grid)?;
    }
    check_lambda_cfl(spec, grid)?;
    let (nx, ny, d) = (grid.nx, grid.ny_total(), spec.control_dim());
    let (dx, dy, dt) = (grid.dx(), grid.dy(), grid.dt());
    let pathwise = noise.is_some();
    let mu0 = spec.initial_density_2d(grid);
    let nu0 = s_map(&mu0);
    let base = base_alpha(spec, grid, &nu0);
    let norm0 = mu0.l2_norm_sq();

    let mut mu = Vec::with_capacity(grid.nt + 1);
    let mut nus = Vec::with_capacity(grid.nt + 1);
    let mut alphas = Vec::with_capacity(grid.nt);
    let mut sup_l2 = norm0;
    let mut h1_sum = 0.0;
    let mut boundary = 0.0f64;
    mu.push(mu0);
    nus.push(nu0);
    let mut work = vec![0.0; nx * ny];
    for n in 0..grid.nt {
        let cur = &mu[n];
        let coef = StepCoefficients::new(spec, grid, n, &nus[n], pathwise);
        // drift per row; alpha is the max over all rows
        let mut drift = vec![0.0; nx * ny];
        for j in 0..ny {
            let gs = g.slice(n, j);
            coef.drift_row(gs, d, &mut drift[j * nx..(j + 1) * nx]);
        }
        let alpha = step_alpha(base, &drift);
        check_x_cfl(alpha, grid)?;
        alphas.push(alpha);
        let diff = Tridiagonal::forward_diffusion(&coef.a, dt, dx);
        let ratio = dt / dx;
        work.par_chunks_mut(nx)
            .zip(cur.values.par_chunks(nx))
            .zip(drift.par_chunks(nx))
            .for_each(|((out, row), b)| {
                numerics::transport(row, b, alpha, ratio, out);
                diff.solve(out);
            });
        // upwind transport toward larger y; closed at the top
        let mut next = Density2D { values: vec![0.0; nx * ny], ..cur.clone() };
        for i in 0..nx {
            let c = coef.lambda[i] * dt / dy;
            let mut inflow = 0.0;
            for j in 0..ny {
                let m = work[j * nx + i];
                let out = if j + 1 < ny { c * m } else { 0.0 };
                next.values[j * nx + i] = m - out + inflow;
                inflow = out;
            }
        }
        if let Some(w) = noise {
            let s = (spec.sigma0)(coef.t) * w.increments[n] / dx;
            if s != 0.0 {
                let mut tmp = vec![0.0; nx];
                for row in next.values.chunks_mut(nx) {
                    numerics::shift(row, s, &mut tmp);
                    row.copy_from_slice(&tmp);
                }
            }
        }
        let nu = s_map(&next);
        let l2 = next.l2_norm_sq();
        sup_l2 = sup_l2.max(l2);
        h1_sum += dt * next.values.chunks(nx).map(|r| h1_norm_sq(r, dx)).sum::<f64>() * dy;
        boundary = boundary.max(
            next.values.chunks(nx).map(|r| r[0] + r[nx - 1]).sum::<f64>() * dx * dy,
        );
        mu.push(next);
        nus.push(nu);
    }
    Ok(ForwardTrajectory2D {
        grid: grid.clone(),
        mu,
        nu: nus,
        control: g.clone(),
        noise: noise.cloned(),
        alpha: alphas,
        energy_constant: if norm0 > 0.0 { (sup_l2 + h1_sum) / norm0 } else { 0.0 },
        boundary_mass: boundary,
    })
}

/// One-dimensional forward solve; killing by the exact factor `e^{−λΔt}`.
pub fn solve_forward_1d(
    spec: &ModelSpec,
    grid: &Grid,
    g: &FeedbackControl,
    noise: Option<&CommonNoisePath>,
) -> Result<ForwardTrajectory1D> {
    g.check_grid(grid, spec.control_dim())?;
    if g.y_dependent() {
        return Err(Error::ArgumentConflict(
            "the one-dimensional forward solve needs a control independent of y".into(),
        ));
    }
    g.check_box(&spec.control_box)?;
    if let Some(w) = noise {
        w.check(grid)?;
    }
    let (nx, d) = (grid.nx, spec.control_dim());
    let (dx, dt) = (grid.dx(), grid.dt());
    let pathwise = noise.is_some();
    let nu0 = spec.initial_nu(grid);
    let base = base_alpha(spec, grid, &nu0);
    let norm0 = nu0.l2_inner(&nu0);
    let mut nus = Vec::with_capacity(grid.nt + 1);
    let mut alphas = Vec::with_capacity(grid.nt);
    let mut sup_l2 = norm0;
    let mut h1_sum = 0.0;
    let mut boundary = 0.0f64;
    nus.push(nu0);
    let mut drift = vec![0.0; nx];
    let mut tmp = vec![0.0; nx];
    for n in 0..grid.nt {
        let cur = &nus[n];
        let coef = StepCoefficients::new(spec, grid, n, cur, pathwise);
        coef.drift_row(g.slice(n, 0), d, &mut drift);
        let alpha = step_alpha(base, &drift);
        check_x_cfl(alpha, grid)?;
        alphas.push(alpha);
        let mut next = vec![0.0; nx];
        numerics::transport(&cur.values, &drift, alpha, dt / dx, &mut next);
        Tridiagonal::forward_diffusion(&coef.a, dt, dx).solve(&mut next);
        for (v, l) in next.iter_mut().zip(&coef.lambda) {
            *v *= (-l * dt).exp();
        }
        if let Some(w) = noise {
            let s = (spec.sigma0)(coef.t) * w.increments[n] / dx;
            if s != 0.0 {
                numerics::shift(&next, s, &mut tmp);
                next.copy_from_slice(&tmp);
            }
        }
        let nu = SubProb1D::from_raw(grid.x_min, dx, next);
        sup_l2 = sup_l2.max(nu.l2_inner(&nu));
        h1_sum += dt * h1_norm_sq(&nu.values, dx);
        boundary = boundary.max((nu.values[0] + nu.values[nx - 1]) * dx);
        nus.push(nu);
    }
    Ok(ForwardTrajectory1D {
        grid: grid.clone(),
        nu: nus,
        control: g.clone(),
        noise: noise.cloned(),
        alpha: alphas,
        energy_constant: if norm0 > 0.0 { (sup_l2 + h1_sum) / norm0 } else { 0.0 },
        boundary_mass: boundary,
    })
}
