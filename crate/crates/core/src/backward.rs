//! Backward equations: the one-dimensional semilinear equation for `u`, and
//! on the half-plane either the linear adjoint for a given feedback or the
//! semilinear equation built from a one-dimensional solution.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::control::FeedbackControl;
use crate::error::{Error, Result};
use crate::forward::{ForwardTrajectory2D, StepCoefficients};
use crate::grid::Grid;
use crate::hamiltonian::argmin_into;
use crate::measures::SubProb1D;
use crate::model::{dot, ModelSpec};
use crate::numerics::{self, Tridiagonal};

/// Options of the inner fixed point used by the semilinear solves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackwardOptions {
    pub tol_fp: f64,
    pub max_fp_iter: usize,
    pub damping: f64,
    /// Exponent `η` of the time weight `e^{ηt}` in the residual.
    pub eta: f64,
    /// Include the nonlocal terms built from the functional derivatives.
    pub mean_field_terms: bool,
    pub mu_floor: f64,
}

impl Default for BackwardOptions {
    fn default() -> Self {
        BackwardOptions {
            tol_fp: 1e-10,
            max_fp_iter: 50,
            damping: 0.5,
            eta: 1.0,
            mean_field_terms: true,
            mu_floor: crate::MU_FLOOR,
        }
    }
}

/// Inner fixed-point statistics accumulated over all time steps.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FixedPointStats {
    /// Largest iteration count of any step.
    pub max_iterations: usize,
    pub total_iterations: usize,
    /// Largest geometric-mean ratio of successive residuals.
    pub contraction: f64,
    /// Steps (or rows) that hit the iteration cap.
    pub unconverged_steps: usize,
}

impl FixedPointStats {
    fn record(&mut self, iters: usize, ratio: f64, converged: bool) {
        self.max_iterations = self.max_iterations.max(iters);
        self.total_iterations += iters;
        if ratio.is_finite() {
            self.contraction = self.contraction.max(ratio);
        }
        if !converged {
            self.unconverged_steps += 1;
        }
    }
}

/// Which backward equation to solve on the half-plane.
pub enum BackwardMode<'a> {
    /// Linear adjoint for the feedback `g`, solved as the exact transpose
    /// of the forward scheme.
    Adjoint(&'a FeedbackControl),
    /// Semilinear equation with the infimum-or-fallback Hamiltonian; the
    /// fallback feedback comes from this one-dimensional solution.
    Semilinear(&'a BSPDESolution),
}

/// Backward solution on the x grid (one row) or on the (x, y) grid.
#[derive(Debug, Clone)]
pub struct BSPDESolution {
    pub grid: Grid,
    pub two_d: bool,
    /// `values[n]` holds `u` at `t_n`, row by row in y for 2D solves.
    pub values: Vec<Vec<f64>>,
    /// Gradient used for the feedback at `t_n`; empty when not recorded.
    pub gradient: Vec<Vec<f64>>,
    /// Noise integrand `q`; empty vectors stand for `q ≡ 0`.
    pub q: Vec<Vec<f64>>,
    pub stats: FixedPointStats,
}

impl BSPDESolution {
    pub fn rows(&self) -> usize {
        if self.two_d {
            self.grid.ny_total()
        } else {
            1
        }
    }

    pub fn at(&self, n: usize, i: usize, j: usize) -> f64 {
        self.values[n][j * self.grid.nx + i]
    }

    /// Gradient at `t_n`, recomputed from the values when not stored.
    pub fn gradient_at(&self, n: usize) -> Vec<f64> {
        if let Some(g) = self.gradient.get(n).filter(|g| !g.is_empty()) {
            return g.clone();
        }
        let nx = self.grid.nx;
        let mut out = vec![0.0; self.values[n].len()];
        for (row, o) in self.values[n].chunks(nx).zip(out.chunks_mut(nx)) {
            numerics::gradient(row, self.grid.dx(), o);
        }
        out
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn to_csv(&self) -> String {
        let g = &self.grid;
        let mut s = if self.two_d {
            String::from("t,x,y,value\n")
        } else {
            String::from("t,x,value\n")
        };
        for (n, v) in self.values.iter().enumerate() {
            for j in 0..self.rows() {
                for i in 0..g.nx {
                    let val = v[j * g.nx + i];
                    if self.two_d {
                        let _ = writeln!(s, "{:.16e},{:.16e},{:.16e},{:.16e}", g.t(n), g.x(i), g.y(j), val);
                    } else {
                        let _ = writeln!(s, "{:.16e},{:.16e},{:.16e}", g.t(n), g.x(i), val);
                    }
                }
            }
        }
        s
    }
}

/// Functional-derivative data frozen over one step:
/// `db[k·nx + i] = Db₀(t, x_k, ν)(x_i)` and
/// `f0[i] = Σ_k ν_k Df₀(t, x_k, ν)(x_i) Δx`.
struct MeanFieldStep {
    db: Option<Vec<f64>>,
    f0: Vec<f64>,
}

impl MeanFieldStep {
    fn new(spec: &ModelSpec, grid: &Grid, t: f64, nu: &SubProb1D) -> Option<Self> {
        if !spec.has_mean_field_derivatives() {
            return None;
        }
        let nx = grid.nx;
        let xs = grid.x_nodes();
        let db = if spec.b0.is_local() {
            None
        } else {
            let mut m = vec![0.0; nx * nx];
            for k in 0..nx {
                for i in 0..nx {
                    m[k * nx + i] = spec.b0.derivative(t, xs[k], nu, xs[i]);
                }
            }
            Some(m)
        };
        let mut f0 = vec![0.0; nx];
        if !spec.f0.is_local() {
            for (i, fi) in f0.iter_mut().enumerate() {
                *fi = (0..nx)
                    .map(|k| nu.values[k] * spec.f0.derivative(t, xs[k], nu, xs[i]))
                    .sum::<f64>()
                    * grid.dx();
            }
        }
        Some(MeanFieldStep { db, f0 })
    }

    /// `out_i = Σ_k db[k, i] col_k Δx + f0_i`.
    fn apply(&self, col: &[f64], dx: f64, out: &mut [f64]) {
        let nx = out.len();
        out.copy_from_slice(&self.f0);
        if let Some(db) = &self.db {
            for (k, c) in col.iter().enumerate() {
                if *c == 0.0 {
                    continue;
                }
                let w = c * dx;
                for (o, d) in out.iter_mut().zip(&db[k * nx..(k + 1) * nx]) {
                    *o += w * d;
                }
            }
        }
    }
}

/// Per-row inputs of the semilinear Hamiltonian.
#[derive(Clone, Copy)]
struct RowData<'a> {
    /// Cost weight `e^{−y}` (one in 1D).
    weight: f64,
    /// Density row deciding between infimum and fallback.
    mu: Option<&'a [f64]>,
    /// Fallback controls, `d` per node.
    fallback: Option<&'a [f64]>,
}

/// Data frozen over one semilinear step.
struct SemilinearStep<'a> {
    spec: &'a ModelSpec,
    coef: StepCoefficients,
    xs: Vec<f64>,
    f0: Vec<f64>,
    diff: Tridiagonal,
    mf: Option<MeanFieldStep>,
    dx: f64,
    dt: f64,
    d: usize,
    scale: f64,
    opts: &'a BackwardOptions,
    step: usize,
}

struct Buffers {
    p: Vec<f64>,
    g: Vec<f64>,
    z: Vec<f64>,
    nl: Vec<f64>,
    col: Vec<f64>,
}

impl Buffers {
    fn new(nx: usize, d: usize) -> Self {
        Buffers { p: vec![0.0; nx], g: vec![0.0; d], z: vec![0.0; nx], nl: vec![0.0; nx], col: vec![0.0; nx] }
    }
}

impl<'a> SemilinearStep<'a> {
    fn new(
        spec: &'a ModelSpec,
        grid: &Grid,
        n: usize,
        nu: &SubProb1D,
        pathwise: bool,
        opts: &'a BackwardOptions,
    ) -> Self {
        let coef = StepCoefficients::new(spec, grid, n, nu, pathwise);
        let xs = grid.x_nodes();
        let f0 = xs.iter().map(|x| spec.f0.eval(coef.t, *x, nu)).collect();
        let diff = Tridiagonal::backward_diffusion(&coef.a, grid.dt(), grid.dx());
        let mf = if opts.mean_field_terms { MeanFieldStep::new(spec, grid, coef.t, nu) } else { None };
        let scale = (opts.eta * coef.t).exp();
        SemilinearStep {
            spec,
            coef,
            xs,
            f0,
            diff,
            mf,
            dx: grid.dx(),
            dt: grid.dt(),
            d: spec.control_dim(),
            scale,
            opts,
            step: n,
        }
    }

    /// `out = w + Δt [b₀ p + ω f₀ + control part + ω·nonlocal]` for the
    /// gradient `p` already in `buf.p`.
    fn rhs(&self, w: &[f64], row: RowData, nonlocal: Option<&[f64]>, buf: &mut Buffers, out: &mut [f64]) {
        let (spec, c, d) = (self.spec, &self.coef, self.d);
        let wgt = row.weight;
        for i in 0..w.len() {
            let pi = buf.p[i];
            let fac = &c.factor[i * d..(i + 1) * d];
            let xi = self.xs[i];
            let use_inf = match (row.mu, row.fallback) {
                (Some(m), Some(_)) => m[i] > self.opts.mu_floor,
                _ => true,
            };
            if use_inf {
                argmin_into(spec, c.t, xi, fac, pi, wgt, &mut buf.g);
            } else {
                buf.g.copy_from_slice(&row.fallback.expect("checked")[i * d..(i + 1) * d]);
            }
            let ctrl = pi * dot(fac, &buf.g) + wgt * spec.f1_value(c.t, xi, &buf.g);
            let mut val = c.b0[i] * pi + wgt * self.f0[i] + ctrl;
            if let Some(nl) = nonlocal {
                val += wgt * nl[i];
            }
            out[i] = w[i] + self.dt * val;
        }
    }

    /// Damped fixed point for one row. `own_measure` enables the 1D
    /// nonlocal term computed from the row's own gradient.
    fn iterate_row(
        &self,
        w: &[f64],
        row: RowData,
        own_measure: Option<&[f64]>,
        u: &mut [f64],
        buf: &mut Buffers,
        stats: &mut FixedPointStats,
    ) -> Result<()> {
        let theta = self.opts.damping;
        let nonlocal = |u: &[f64], buf: &mut Buffers| -> bool {
            numerics::gradient(u, self.dx, &mut buf.p);
            match (&self.mf, own_measure) {
                (Some(mf), Some(m)) => {
                    for ((c, mv), pv) in buf.col.iter_mut().zip(m).zip(&buf.p) {
                        *c = mv * pv;
                    }
                    let col = std::mem::take(&mut buf.col);
                    mf.apply(&col, self.dx, &mut buf.nl);
                    buf.col = col;
                    true
                }
                _ => false,
            }
        };
        // predictor from the explicit evaluation at w
        let has_nl = nonlocal(w, buf);
        let mut z = std::mem::take(&mut buf.z);
        let nl = std::mem::take(&mut buf.nl);
        self.rhs(w, row, has_nl.then_some(&nl[..]), buf, &mut z);
        buf.nl = nl;
        self.diff.solve(&mut z);
        u.copy_from_slice(&z);
        let (mut prev, mut increases, mut first, mut last) = (f64::INFINITY, 0usize, f64::NAN, f64::NAN);
        let mut iters = 0;
        let mut converged = false;
        for k in 1..=self.opts.max_fp_iter {
            iters = k;
            let has_nl = nonlocal(u, buf);
            let nl = std::mem::take(&mut buf.nl);
            self.rhs(w, row, has_nl.then_some(&nl[..]), buf, &mut z);
            buf.nl = nl;
            self.diff.solve(&mut z);
            let mut acc = 0.0;
            for (ui, zi) in u.iter_mut().zip(&z) {
                let new = (1.0 - theta) * *ui + theta * zi;
                acc += (new - *ui) * (new - *ui);
                *ui = new;
            }
            let res = self.scale * (acc * self.dx).sqrt();
            if k == 1 {
                first = res;
            }
            last = res;
            if res < self.opts.tol_fp {
                converged = true;
                break;
            }
            if res > prev {
                increases += 1;
                if increases >= 5 {
                    return Err(Error::FixedPointDiverged { step: self.step, residual: res });
                }
            } else {
                increases = 0;
            }
            prev = res;
        }
        buf.z = z;
        let ratio = if iters > 1 && first > 0.0 && last > 0.0 {
            (last / first).powf(1.0 / (iters - 1) as f64)
        } else {
            0.0
        };
        stats.record(iters, ratio, converged);
        Ok(())
    }

    /// Damped fixed point over all rows at once, for the 2D nonlocal term
    /// `F̃_ij = ω_j [Σ_k Db₀(x_k)(x_i) Σ_l μ_kl p̃_kl Δy Δx + F₀_i]`.
    fn iterate_coupled(
        &self,
        w: &[f64],
        rows: &[RowData],
        mu: &[f64],
        dy: f64,
        u: &mut [f64],
        stats: &mut FixedPointStats,
    ) -> Result<()> {
        let nx = self.xs.len();
        let mf = self.mf.as_ref().expect("coupled iteration needs mean-field data");
        let theta = self.opts.damping;
        let mut p_all = vec![0.0; u.len()];
        let mut col = vec![0.0; nx];
        let mut nl = vec![0.0; nx];
        let mut buf = Buffers::new(nx, self.d);
        let mut z = vec![0.0; nx];
        let mut eval = |src: &[f64], dst: &mut [f64], blend: bool| -> f64 {
            for (r, p) in src.chunks(nx).zip(p_all.chunks_mut(nx)) {
                numerics::gradient(r, self.dx, p);
            }
            col.iter_mut().for_each(|c| *c = 0.0);
            for (mr, pr) in mu.chunks(nx).zip(p_all.chunks(nx)) {
                for k in 0..nx {
                    col[k] += mr[k] * pr[k] * dy;
                }
            }
            mf.apply(&col, self.dx, &mut nl);
            let mut acc = 0.0;
            for (j, row) in rows.iter().enumerate() {
                let sl = j * nx..(j + 1) * nx;
                buf.p.copy_from_slice(&p_all[sl.clone()]);
                self.rhs(&w[sl.clone()], *row, Some(&nl), &mut buf, &mut z);
                self.diff.solve(&mut z);
                for (d, zi) in dst[sl].iter_mut().zip(&z) {
                    if blend {
                        let new = (1.0 - theta) * *d + theta * zi;
                        acc += (new - *d) * (new - *d);
                        *d = new;
                    } else {
                        *d = *zi;
                    }
                }
            }
            self.scale * (acc * self.dx * dy).sqrt()
        };
        eval(w, u, false);
        let (mut prev, mut increases, mut first, mut last) = (f64::INFINITY, 0usize, f64::NAN, f64::NAN);
        let mut iters = 0;
        let mut converged = false;
        let mut cur = u.to_vec();
        for k in 1..=self.opts.max_fp_iter {
            iters = k;
            let res = eval(&cur.clone(), &mut cur, true);
            if k == 1 {
                first = res;
            }
            last = res;
            if res < self.opts.tol_fp {
                converged = true;
                break;
            }
            if res > prev {
                increases += 1;
                if increases >= 5 {
                    return Err(Error::FixedPointDiverged { step: self.step, residual: res });
                }
            } else {
                increases = 0;
            }
            prev = res;
        }
        u.copy_from_slice(&cur);
        let ratio = if iters > 1 && first > 0.0 && last > 0.0 {
            (last / first).powf(1.0 / (iters - 1) as f64)
        } else {
            0.0
        };
        stats.record(iters, ratio, converged);
        Ok(())
    }
}

fn check_nu_traj(grid: &Grid, nu: &[SubProb1D]) -> Result<()> {
    if nu.len() != grid.nt + 1 {
        return Err(Error::GridMismatch(format!(
            "{} measures for {} time nodes",
            nu.len(),
            grid.nt + 1
        )));
    }
    if let Some(bad) = nu.iter().find(|v| v.len() != grid.nx) {
        return Err(Error::GridMismatch(format!("measure with {} nodes on a {}-node grid", bad.len(), grid.nx)));
    }
    Ok(())
}

/// `q = −σ₀ ∂ₓu`: the noise integrand of `u(t, x) = v(t, x − σ₀ W_t)`.
fn noise_integrand(spec: &ModelSpec, t: f64, u: &[f64], nx: usize, dx: f64) -> Vec<f64> {
    let s0 = (spec.sigma0)(t);
    let mut q = vec![0.0; u.len()];
    for (r, o) in u.chunks(nx).zip(q.chunks_mut(nx)) {
        numerics::gradient(r, dx, o);
    }
    q.iter_mut().for_each(|v| *v *= -s0);
    q
}

/// One-dimensional semilinear backward solve: implicit diffusion, exact
/// killing factor `e^{−λΔt}`, and a damped fixed point on the Hamiltonian
/// and nonlocal terms.
pub fn solve_backward_1d(
    spec: &ModelSpec,
    grid: &Grid,
    nu_traj: &[SubProb1D],
    terminal: &[f64],
    noise: Option<&crate::forward::CommonNoisePath>,
    opts: &BackwardOptions,
) -> Result<BSPDESolution> {
    check_nu_traj(grid, nu_traj)?;
    if terminal.len() != grid.nx {
        return Err(Error::GridMismatch(format!("terminal has {} nodes, grid {}", terminal.len(), grid.nx)));
    }
    let (nx, nt, dx, dt) = (grid.nx, grid.nt, grid.dx(), grid.dt());
    let pathwise = noise.is_some();
    let mut values = vec![Vec::new(); nt + 1];
    let mut gradient = vec![Vec::new(); nt + 1];
    let mut q = vec![Vec::new(); nt + 1];
    values[nt] = terminal.to_vec();
    let mut stats = FixedPointStats::default();
    let mut buf = Buffers::new(nx, spec.control_dim());
    let mut w = vec![0.0; nx];
    for n in (0..nt).rev() {
        let step = SemilinearStep::new(spec, grid, n, &nu_traj[n], pathwise, opts);
        match noise {
            Some(path) => {
                let s = (spec.sigma0)(step.coef.t) * path.increments[n] / dx;
                numerics::shift_transpose(&values[n + 1], s, &mut w);
            }
            None => w.copy_from_slice(&values[n + 1]),
        }
        for (wi, l) in w.iter_mut().zip(&step.coef.lambda) {
            *wi *= (-l * dt).exp();
        }
        let mut u = vec![0.0; nx];
        let row = RowData { weight: 1.0, mu: None, fallback: None };
        step.iterate_row(&w, row, Some(&nu_traj[n].values), &mut u, &mut buf, &mut stats)?;
        let mut p = vec![0.0; nx];
        numerics::gradient(&u, dx, &mut p);
        if pathwise {
            q[n] = noise_integrand(spec, step.coef.t, &u, nx, dx);
        }
        gradient[n] = p;
        values[n] = u;
    }
    let mut pn = vec![0.0; nx];
    numerics::gradient(&values[nt], dx, &mut pn);
    gradient[nt] = pn;
    if pathwise {
        q[nt] = noise_integrand(spec, grid.t(nt), &values[nt], nx, dx);
    }
    Ok(BSPDESolution { grid: grid.clone(), two_d: false, values, gradient, q, stats })
}

/// Explicit transport in y seen backward: `w_j = z_j + c (z_{j+1} − z_j)`,
/// reading only from above; the top row uses the ghost `e^{−Δy} z_top`.
fn y_step_backward(z: &mut [f64], lambda: &[f64], dt: f64, dy: f64, nx: usize) {
    let ny = z.len() / nx;
    let decay = (-dy).exp();
    for i in 0..nx {
        let c = lambda[i] * dt / dy;
        if c == 0.0 {
            continue;
        }
        for j in 0..ny {
            let here = z[j * nx + i];
            let above = if j + 1 < ny { z[(j + 1) * nx + i] } else { decay * here };
            z[j * nx + i] = here + c * (above - here);
        }
    }
}

/// Half-plane backward solve, either the adjoint of the forward scheme for
/// a feedback or the semilinear equation with a one-dimensional fallback.
pub fn solve_backward_2d(
    spec: &ModelSpec,
    grid: &Grid,
    mu_traj: &ForwardTrajectory2D,
    mode: BackwardMode,
    terminal: &[f64],
    opts: &BackwardOptions,
) -> Result<BSPDESolution> {
    if !grid.same_space(&mu_traj.grid) || grid.nt != mu_traj.grid.nt {
        return Err(Error::GridMismatch("forward trajectory was computed on another grid".into()));
    }
    let (nx, ny, nt) = (grid.nx, grid.ny_total(), grid.nt);
    if terminal.len() != nx * ny {
        return Err(Error::GridMismatch(format!("terminal has {} nodes, grid {}", terminal.len(), nx * ny)));
    }
    let (dx, dy, dt) = (grid.dx(), grid.dy(), grid.dt());
    let d = spec.control_dim();
    let noise = mu_traj.noise.as_ref();
    let pathwise = noise.is_some();
    let ys = grid.y_nodes();
    let weights: Vec<f64> = ys.iter().map(|y| (-y).exp()).collect();
    let mut values = vec![Vec::new(); nt + 1];
    let mut gradient = vec![Vec::new(); nt + 1];
    let mut q = vec![Vec::new(); nt + 1];
    values[nt] = terminal.to_vec();
    let mut stats = FixedPointStats::default();
    let is_adjoint = matches!(mode, BackwardMode::Adjoint(_));
    match &mode {
        BackwardMode::Adjoint(g) => {
            g.check_grid(grid, d)?;
        }
        BackwardMode::Semilinear(u1) => {
            if u1.two_d || !u1.grid.same_space(grid) || u1.grid.nt != nt {
                return Err(Error::GridMismatch("fallback solution must be 1D on the same grid".into()));
            }
        }
    }
    let mut tmp = vec![0.0; nx];
    for n in (0..nt).rev() {
        let nu = &mu_traj.nu[n];
        let mut z = values[n + 1].clone();
        let t = grid.t(n);
        if let Some(path) = noise {
            let s = (spec.sigma0)(t) * path.increments[n] / dx;
            for row in z.chunks_mut(nx) {
                numerics::shift_transpose(row, s, &mut tmp);
                row.copy_from_slice(&tmp);
            }
        }
        let step = SemilinearStep::new(spec, grid, n, nu, pathwise, opts);
        y_step_backward(&mut z, &step.coef.lambda, dt, dy, nx);
        let mu = &mu_traj.mu[n].values;
        let u = match &mode {
            BackwardMode::Adjoint(g) => {
                // v = D^{-T} z; p = ∂ₓv; u = T^T v + Δt (cost + nonlocal)
                for row in z.chunks_mut(nx) {
                    step.diff.solve(row);
                }
                let mut p = vec![0.0; nx * ny];
                for (r, o) in z.chunks(nx).zip(p.chunks_mut(nx)) {
                    numerics::gradient(r, dx, o);
                }
                let mut nl = vec![0.0; nx];
                let has_nl = if let Some(mf) = &step.mf {
                    let mut col = vec![0.0; nx];
                    for (mr, pr) in mu.chunks(nx).zip(p.chunks(nx)) {
                        for k in 0..nx {
                            col[k] += mr[k] * pr[k] * dy;
                        }
                    }
                    mf.apply(&col, dx, &mut nl);
                    true
                } else {
                    false
                };
                let alpha = mu_traj.alpha[n];
                let mut u = vec![0.0; nx * ny];
                let mut b = vec![0.0; nx];
                for j in 0..ny {
                    let sl = j * nx..(j + 1) * nx;
                    let gs = g.slice(n, j);
                    step.coef.drift_row(gs, d, &mut b);
                    numerics::transport_transpose(&z[sl.clone()], &b, alpha, dt / dx, &mut u[sl.clone()]);
                    let wgt = weights[j];
                    for i in 0..nx {
                        let gi = &gs[i * d..(i + 1) * d];
                        let mut cost = step.f0[i] + spec.f1_value(t, step.xs[i], gi);
                        if has_nl {
                            cost += nl[i];
                        }
                        u[j * nx + i] += dt * wgt * cost;
                    }
                }
                gradient[n] = p;
                u
            }
            BackwardMode::Semilinear(u1) => {
                let p1 = u1.gradient_at(n);
                let mut fallback = vec![0.0; nx * d];
                for i in 0..nx {
                    let fac = &step.coef.factor[i * d..(i + 1) * d];
                    argmin_into(spec, t, step.xs[i], fac, p1[i], 1.0, &mut fallback[i * d..(i + 1) * d]);
                }
                let rows: Vec<RowData> = (0..ny)
                    .map(|j| RowData {
                        weight: weights[j],
                        mu: Some(&mu[j * nx..(j + 1) * nx]),
                        fallback: Some(&fallback),
                    })
                    .collect();
                let mut u = vec![0.0; nx * ny];
                if step.mf.is_some() {
                    step.iterate_coupled(&z, &rows, mu, dy, &mut u, &mut stats)?;
                } else {
                    let mut buf = Buffers::new(nx, d);
                    for (j, row) in rows.iter().enumerate() {
                        let sl = j * nx..(j + 1) * nx;
                        step.iterate_row(&z[sl.clone()], *row, None, &mut u[sl], &mut buf, &mut stats)?;
                    }
                }
                u
            }
        };
        if pathwise {
            q[n] = noise_integrand(spec, t, &u, nx, dx);
        }
        values[n] = u;
    }
    if is_adjoint {
        let mut p = vec![0.0; nx * ny];
        for (r, o) in values[nt].chunks(nx).zip(p.chunks_mut(nx)) {
            numerics::gradient(r, dx, o);
        }
        gradient[nt] = p;
    }
    if pathwise {
        q[nt] = noise_integrand(spec, grid.t(nt), &values[nt], nx, dx);
    }
    Ok(BSPDESolution { grid: grid.clone(), two_d: true, values, gradient, q, stats })
}

/// Norms entering the energy estimate of a backward solve.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub sup_l2: f64,
    pub grad_l2_dt: f64,
    pub q_l2_dt: f64,
    pub psi_l2: f64,
    /// Smallest `C` with `sup‖u‖² + Σ‖∂ₓu‖²Δt + Σ‖q‖²Δt ≤ C (1 + ‖ψ‖²)`.
    pub constant: f64,
}

pub fn energy_report(solution: &BSPDESolution, terminal: &[f64]) -> EnergyReport {
    let g = &solution.grid;
    let (nx, dx, dt) = (g.nx, g.dx(), g.dt());
    let cell = if solution.two_d { dx * g.dy() } else { dx };
    let l2 = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>() * cell;
    let grad = |v: &[f64]| -> f64 {
        v.chunks(nx)
            .map(|r| r.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum::<f64>())
            .sum::<f64>()
            / (dx * dx)
            * cell
    };
    let sup_l2 = solution.values.iter().map(|v| l2(v)).fold(0.0, f64::max);
    let nt = g.nt;
    let grad_l2_dt: f64 = solution.values[..nt].iter().map(|v| grad(v)).sum::<f64>() * dt;
    let q_l2_dt: f64 = solution.q[..nt].iter().map(|v| l2(v)).sum::<f64>() * dt;
    let psi_l2 = l2(terminal);
    EnergyReport {
        sup_l2,
        grad_l2_dt,
        q_l2_dt,
        psi_l2,
        constant: (sup_l2 + grad_l2_dt + q_l2_dt) / (1.0 + psi_l2),
    }
}

/// Sine-Galerkin solution of `−∂ₜu = a ∂ₓ²u − κ u` with `u_T = terminal`
/// and zero Dirichlet data, exact in time for each mode. Returns the values
/// at every time node.
pub fn solve_linear_galerkin(grid: &Grid, a: f64, kappa: f64, terminal: &[f64], modes: usize) -> Result<Vec<Vec<f64>>> {
    if terminal.len() != grid.nx {
        return Err(Error::GridMismatch(format!("terminal has {} nodes, grid {}", terminal.len(), grid.nx)));
    }
    let len = grid.x_max - grid.x_min;
    let xs = grid.x_nodes();
    let dx = grid.dx();
    let basis = |k: usize, x: f64| (k as f64 * std::f64::consts::PI * (x - grid.x_min) / len).sin();
    let coeffs: Vec<f64> = (1..=modes)
        .map(|k| {
            let s: f64 = xs
                .iter()
                .zip(terminal)
                .enumerate()
                .map(|(i, (x, v))| {
                    let w = if i == 0 || i + 1 == xs.len() { 0.5 } else { 1.0 };
                    w * v * basis(k, *x)
                })
                .sum();
            2.0 / len * s * dx
        })
        .collect();
    Ok((0..=grid.nt)
        .map(|n| {
            let tau = grid.horizon - grid.t(n);
            xs.iter()
                .map(|x| {
                    coeffs
                        .iter()
                        .enumerate()
                        .map(|(m, c)| {
                            let k = (m + 1) as f64 * std::f64::consts::PI / len;
                            c * (-(a * k * k + kappa) * tau).exp() * basis(m + 1, *x)
                        })
                        .sum()
                })
                .collect()
        })
        .collect())
}
