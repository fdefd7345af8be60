//! Interacting particle system with killing: Euler–Maruyama for the
//! position, left-point accumulation of the intensity, and an exponential
//! clock per particle.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::FeedbackControl;
use crate::error::{Error, Result};
use crate::forward::CommonNoisePath;
use crate::grid::Grid;
use crate::measures::SubProb1D;
use crate::model::{InitialIntensity, InitialLaw, ModelSpec};

/// Source of the measure argument `ν_t` in the coefficients.
#[derive(Debug, Clone, Copy)]
pub enum Coupling<'a> {
    /// Frozen trajectory, one measure per time node.
    Pde(&'a [SubProb1D]),
    /// Smoothed weighted histogram of the particles themselves.
    Empirical,
}

/// How particles enter the empirical subprobability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// Alive particles with unit weight.
    Hard,
    /// All particles with weight `e^{−Λ}`.
    Soft,
}

/// State of all particles at one time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleEnsemble {
    pub t: f64,
    pub x: Vec<f64>,
    pub lambda: Vec<f64>,
    pub clock: Vec<f64>,
    pub alive: Vec<bool>,
    pub seed: u64,
}

impl ParticleEnsemble {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.lambda.iter().map(|l| (-l).exp()).collect()
    }

    pub fn alive_fraction(&self) -> f64 {
        self.alive.iter().filter(|a| **a).count() as f64 / self.len().max(1) as f64
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,lambda,clock,alive\n");
        for i in 0..self.len() {
            let _ = writeln!(s, "{:.16e},{:.16e},{:.16e},{}", self.x[i], self.lambda[i], self.clock[i], self.alive[i] as u8);
        }
        s
    }
}

/// Snapshots and per-particle cost accumulators of one simulation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParticleTrajectory {
    pub grid: Grid,
    /// Snapshot times are grid nodes; the initial and final states are
    /// always included.
    pub snapshots: Vec<ParticleEnsemble>,
    pub snapshot_steps: Vec<usize>,
    /// Alive fraction at every time node.
    pub alive_fraction: Vec<f64>,
    /// Mean of `e^{−Λ}` at every time node.
    pub mean_weight: Vec<f64>,
    /// `Σ_n Δt e^{−Λ_n} f_n` per particle.
    pub running_soft: Vec<f64>,
    /// `Σ_n Δt 1_{alive} f_n` per particle.
    pub running_hard: Vec<f64>,
}

impl ParticleTrajectory {
    pub fn final_state(&self) -> &ParticleEnsemble {
        self.snapshots.last().expect("trajectory holds the initial state")
    }
}

struct Particle {
    x: f64,
    lambda: f64,
    clock: f64,
    rng: ChaCha8Rng,
    run_soft: f64,
    run_hard: f64,
}

/// Inverse-CDF sampler of a tabulated density.
struct Tabulated {
    xs: Vec<f64>,
    cdf: Vec<f64>,
}

impl Tabulated {
    fn new(xs: Vec<f64>, density: impl Fn(f64) -> f64) -> Self {
        let mut cdf = Vec::with_capacity(xs.len());
        let mut acc = 0.0;
        cdf.push(0.0);
        for w in xs.windows(2) {
            acc += 0.5 * (density(w[0]).max(0.0) + density(w[1]).max(0.0)) * (w[1] - w[0]);
            cdf.push(acc);
        }
        if acc > 0.0 {
            cdf.iter_mut().for_each(|c| *c /= acc);
        }
        Tabulated { xs, cdf }
    }

    fn sample(&self, u: f64) -> f64 {
        let k = self.cdf.partition_point(|c| *c < u).clamp(1, self.xs.len() - 1);
        let (c0, c1) = (self.cdf[k - 1], self.cdf[k]);
        let th = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.5 };
        self.xs[k - 1] + th * (self.xs[k] - self.xs[k - 1])
    }
}

fn linspace(a: f64, b: f64, m: usize) -> Vec<f64> {
    (0..m).map(|i| a + (b - a) * i as f64 / (m - 1) as f64).collect()
}

enum InitialSampler {
    Product { x: Tabulated, y: Option<Tabulated> },
    Joint { cells: Vec<(f64, f64)>, cdf: Vec<f64>, dx: f64, dy: f64 },
}

impl InitialSampler {
    fn new(spec: &ModelSpec, grid: &Grid) -> Self {
        let lo = spec.sample_domain.0.min(grid.x_min);
        let hi = spec.sample_domain.1.max(grid.x_max);
        match &spec.initial {
            InitialLaw::Product { position, intensity } => {
                let p = position.clone();
                let x = Tabulated::new(linspace(lo, hi, 20_001), move |v| p(v));
                let y = match intensity {
                    InitialIntensity::Zero => None,
                    InitialIntensity::Density(d) => {
                        let d = d.clone();
                        Some(Tabulated::new(linspace(0.0, 40.0, 40_001), move |v| d(v)))
                    }
                };
                InitialSampler::Product { x, y }
            }
            InitialLaw::Joint(_) => {
                let mu = spec.initial_density_2d(grid);
                let mut cells = Vec::new();
                let mut cdf = Vec::new();
                let mut acc = 0.0;
                for j in 0..mu.ny {
                    for i in 0..mu.nx {
                        let v = mu.at(i, j);
                        if v > 0.0 {
                            acc += v;
                            cells.push((mu.x(i), mu.y(j)));
                            cdf.push(acc);
                        }
                    }
                }
                cdf.iter_mut().for_each(|c| *c /= acc);
                InitialSampler::Joint { cells, cdf, dx: mu.dx, dy: mu.dy }
            }
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> (f64, f64) {
        match self {
            InitialSampler::Product { x, y } => {
                let xv = x.sample(rng.random::<f64>());
                let yv = y.as_ref().map_or(0.0, |t| t.sample(rng.random::<f64>()));
                (xv, yv)
            }
            InitialSampler::Joint { cells, cdf, dx, dy } => {
                let u: f64 = rng.random();
                let k = cdf.partition_point(|c| *c < u).min(cells.len() - 1);
                let (x, y) = cells[k];
                let jx = (rng.random::<f64>() - 0.5) * dx;
                let jy = (rng.random::<f64>() - 0.5) * dy;
                (x + jx, (y + jy).max(0.0))
            }
        }
    }
}

/// Linear interpolation of nodal values, constant beyond the ends.
#[inline]
fn interp(values: &[f64], x0: f64, dx: f64, x: f64) -> f64 {
    let n = values.len();
    let s = ((x - x0) / dx).clamp(0.0, (n - 1) as f64);
    let i = (s.floor() as usize).min(n - 2);
    let th = s - i as f64;
    (1.0 - th) * values[i] + th * values[i + 1]
}

/// Control at `(t_n, x, y)` by linear interpolation in `x` and `y`.
fn control_at(g: &FeedbackControl, grid: &Grid, n: usize, x: f64, y: f64, out: &mut [f64]) {
    let d = g.dim;
    let sx = ((x - grid.x_min) / grid.dx()).clamp(0.0, (grid.nx - 1) as f64);
    let i = (sx.floor() as usize).min(grid.nx - 2);
    let tx = sx - i as f64;
    let (j, ty) = if g.ny > 1 {
        let sy = ((y - grid.y_min()) / grid.dy()).clamp(0.0, (g.ny - 1) as f64);
        let j = (sy.floor() as usize).min(g.ny - 2);
        (j, sy - j as f64)
    } else {
        (0, 0.0)
    };
    for k in 0..d {
        let row = |jj: usize| (1.0 - tx) * g.at(n, i, jj)[k] + tx * g.at(n, i + 1, jj)[k];
        out[k] = if g.ny > 1 { (1.0 - ty) * row(j) + ty * row(j + 1) } else { row(0) };
    }
}

/// Histogram of the particles on the grid nodes (cells centred at nodes,
/// clamped to the end cells), normalized by the particle count.
fn histogram(x: &[f64], weight: impl Fn(usize) -> f64, grid: &Grid) -> Vec<f64> {
    let (nx, dx) = (grid.nx, grid.dx());
    let mut h = vec![0.0; nx];
    for (p, xp) in x.iter().enumerate() {
        let w = weight(p);
        if w == 0.0 {
            continue;
        }
        let i = ((xp - grid.x_min) / dx).round().clamp(0.0, (nx - 1) as f64) as usize;
        h[i] += w;
    }
    let scale = 1.0 / (x.len().max(1) as f64 * dx);
    h.iter_mut().for_each(|v| *v *= scale);
    h
}

/// One pass of the `[¼, ½, ¼]` kernel with reflecting ends.
fn smooth(h: &[f64]) -> Vec<f64> {
    let n = h.len();
    (0..n)
        .map(|i| {
            let l = if i == 0 { h[0] } else { h[i - 1] };
            let r = if i + 1 == n { h[n - 1] } else { h[i + 1] };
            0.25 * l + 0.5 * h[i] + 0.25 * r
        })
        .collect()
}

/// Subprobability of the ensemble on the grid nodes.
pub fn empirical_subprob(ensemble: &ParticleEnsemble, mode: WeightMode, grid: &Grid) -> SubProb1D {
    let values = match mode {
        WeightMode::Hard => histogram(&ensemble.x, |p| if ensemble.alive[p] { 1.0 } else { 0.0 }, grid),
        WeightMode::Soft => histogram(&ensemble.x, |p| (-ensemble.lambda[p]).exp(), grid),
    };
    SubProb1D::from_raw(grid.x_min, grid.dx(), values)
}

/// Simulates `n_particles` particles on the time grid of `grid` under the
/// feedback `g`. With `snapshot_every = k`, the state is recorded every `k`
/// steps and at the horizon.
#[allow(clippy::too_many_arguments)]
pub fn simulate_particles(
    spec: &ModelSpec,
    grid: &Grid,
    g: &FeedbackControl,
    n_particles: usize,
    seed: Option<u64>,
    noise: Option<&CommonNoisePath>,
    coupling: Coupling,
    snapshot_every: usize,
) -> Result<ParticleTrajectory> {
    let seed = seed.ok_or(Error::SeedRequired)?;
    let d = spec.control_dim();
    g.check_grid(grid, d)?;
    if n_particles == 0 {
        return Err(Error::InvalidParameter("particle count must be positive".into()));
    }
    if let Coupling::Pde(nu) = coupling {
        if nu.len() != grid.nt + 1 || nu.iter().any(|v| v.len() != grid.nx) {
            return Err(Error::GridMismatch("coupling trajectory does not match the grid".into()));
        }
    }
    if let Some(w) = noise {
        if w.increments.len() != grid.nt {
            return Err(Error::GridMismatch("noise path does not match the time grid".into()));
        }
    }
    let (nt, dt, dx) = (grid.nt, grid.dt(), grid.dx());
    let sqdt = dt.sqrt();
    let xs = grid.x_nodes();
    let sampler = InitialSampler::new(spec, grid);
    let mut parts: Vec<Particle> = (0..n_particles)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let (x, lambda) = sampler.draw(&mut rng);
            let clock: f64 = Exp1.sample(&mut rng);
            Particle { x, lambda, clock, rng, run_soft: 0.0, run_hard: 0.0 }
        })
        .collect();
    let every = snapshot_every.max(1);
    let snap = |parts: &[Particle], n: usize| ParticleEnsemble {
        t: grid.t(n),
        x: parts.iter().map(|p| p.x).collect(),
        lambda: parts.iter().map(|p| p.lambda).collect(),
        clock: parts.iter().map(|p| p.clock).collect(),
        alive: parts.iter().map(|p| p.lambda <= p.clock).collect(),
        seed,
    };
    let stats = |parts: &[Particle]| -> (f64, f64) {
        let alive = parts.iter().filter(|p| p.lambda <= p.clock).count() as f64;
        let w: f64 = parts.iter().map(|p| (-p.lambda).exp()).sum();
        let m = parts.len() as f64;
        (alive / m, w / m)
    };
    let mut snapshots = vec![snap(&parts, 0)];
    let mut snapshot_steps = vec![0];
    let (a0, w0) = stats(&parts);
    let mut alive_fraction = vec![a0];
    let mut mean_weight = vec![w0];
    for n in 0..nt {
        let t = grid.t(n);
        let nu = match coupling {
            Coupling::Pde(traj) => traj[n].clone(),
            Coupling::Empirical => {
                let pos: Vec<f64> = parts.iter().map(|p| p.x).collect();
                let h = histogram(&pos, |p| (-parts[p].lambda).exp(), grid);
                SubProb1D::from_raw(grid.x_min, dx, smooth(&h))
            }
        };
        let b0: Vec<f64> = xs.iter().map(|x| spec.b0_value(t, *x, &nu)).collect();
        let f0: Vec<f64> = xs.iter().map(|x| spec.f0.eval(t, *x, &nu)).collect();
        let dw = noise.map(|w| w.increments[n]);
        let s0 = (spec.sigma0)(t);
        parts.par_iter_mut().for_each_init(|| (vec![0.0; d], vec![0.0; d]), |(gamma, factor), p| {
            control_at(g, grid, n, p.x, p.lambda, gamma);
            spec.drift_factor(t, p.x, factor);
            let drift = interp(&b0, grid.x_min, dx, p.x) + factor.iter().zip(gamma.iter()).map(|(a, b)| a * b).sum::<f64>();
            let cost = interp(&f0, grid.x_min, dx, p.x) + spec.f1_value(t, p.x, gamma);
            p.run_soft += dt * (-p.lambda).exp() * cost;
            if p.lambda <= p.clock {
                p.run_hard += dt * cost;
            }
            let sig = (spec.sigma)(t, p.x);
            let z: f64 = StandardNormal.sample(&mut p.rng);
            let lam = (spec.lambda)(t, p.x);
            let common = match dw {
                Some(w) => s0 * w,
                None => 0.0,
            };
            let vol = if dw.is_some() { sig } else { (sig * sig + s0 * s0).sqrt() };
            p.x += drift * dt + vol * sqdt * z + common;
            p.lambda += lam * dt;
        });
        let (a, w) = stats(&parts);
        alive_fraction.push(a);
        mean_weight.push(w);
        if (n + 1) % every == 0 || n + 1 == nt {
            snapshots.push(snap(&parts, n + 1));
            snapshot_steps.push(n + 1);
        }
    }
    Ok(ParticleTrajectory {
        grid: grid.clone(),
        snapshots,
        snapshot_steps,
        alive_fraction,
        mean_weight,
        running_soft: parts.iter().map(|p| p.run_soft).collect(),
        running_hard: parts.iter().map(|p| p.run_hard).collect(),
    })
}

/// Student quantile for a 95% interval with 9 degrees of freedom.
const T_975_9: f64 = 2.262;
const BATCHES: usize = 10;

/// Monte Carlo cost with a batch-means 95% half-width over 10 contiguous
/// sub-ensembles.
pub fn estimate_cost_mc(spec: &ModelSpec, traj: &ParticleTrajectory, mode: WeightMode) -> (f64, f64) {
    let last = traj.final_state();
    let m = last.len();
    let running = match mode {
        WeightMode::Soft => &traj.running_soft,
        WeightMode::Hard => &traj.running_hard,
    };
    let estimate = |range: std::ops::Range<usize>| -> f64 {
        let sub = ParticleEnsemble {
            t: last.t,
            x: last.x[range.clone()].to_vec(),
            lambda: last.lambda[range.clone()].to_vec(),
            clock: last.clock[range.clone()].to_vec(),
            alive: last.alive[range.clone()].to_vec(),
            seed: last.seed,
        };
        let nu = empirical_subprob(&sub, mode, &traj.grid);
        let run: f64 = running[range.clone()].iter().sum::<f64>() / range.len().max(1) as f64;
        run + (spec.psi.value)(&nu)
    };
    let total = estimate(0..m);
    if m < BATCHES {
        return (total, f64::INFINITY);
    }
    let size = m / BATCHES;
    let batch: Vec<f64> = (0..BATCHES).map(|b| estimate(b * size..(b + 1) * size)).collect();
    let mean = batch.iter().sum::<f64>() / BATCHES as f64;
    let var = batch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (BATCHES - 1) as f64;
    (total, T_975_9 * (var / BATCHES as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;

    #[test]
    fn seed_is_required() {
        let spec = ModelSpec::lq_killing();
        let grid = build_grid(-4.0, 4.0, 41, 2.0, 11, 10, 0.0, 1.0).unwrap();
        let g = FeedbackControl::constant(&grid, false, &[0.0]);
        let r = simulate_particles(&spec, &grid, &g, 10, None, None, Coupling::Empirical, 1);
        assert!(matches!(r, Err(Error::SeedRequired)));
    }

    #[test]
    fn smoothing_conserves_mass() {
        let h = vec![0.0, 1.0, 3.0, 0.5, 2.0];
        let s = smooth(&h);
        assert!((s.iter().sum::<f64>() - h.iter().sum::<f64>()).abs() < 1e-14);
    }

    #[test]
    fn tabulated_sampler_inverts_uniform() {
        let t = Tabulated::new(linspace(0.0, 1.0, 101), |_| 1.0);
        assert!((t.sample(0.3) - 0.3).abs() < 1e-12);
    }
}
