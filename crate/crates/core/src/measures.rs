//! Subprobability densities, joint densities, the map `S`, metrics and the
//! partition-of-unity measure operators.

use std::collections::VecDeque;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::EPS_NEG;

/// Density of a subprobability measure on a uniform x grid.
///
/// Node `i` carries the cell mass `values[i] * dx`. This handle is what the
/// model coefficients receive as their measure argument.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubProb1D {
    pub x0: f64,
    pub dx: f64,
    pub values: Vec<f64>,
}

impl SubProb1D {
    /// Checked constructor: rejects values below `-1e-12` and mass above `1 + 1e-8`.
    pub fn new(x0: f64, dx: f64, values: Vec<f64>) -> Result<Self> {
        if !(dx > 0.0) || !x0.is_finite() {
            return Err(Error::InvalidMeasure(format!("bad grid x0={x0}, dx={dx}")));
        }
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidMeasure(format!("non-finite value {v} at node {i}")));
        }
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| **v < -EPS_NEG) {
            return Err(Error::InvalidMeasure(format!("negative density {v} at node {i}")));
        }
        let m = SubProb1D::from_raw(x0, dx, values);
        if m.mass() > 1.0 + 1e-8 {
            return Err(Error::InvalidMeasure(format!("mass {} exceeds one", m.mass())));
        }
        Ok(m)
    }

    /// Unchecked constructor used for solver output.
    pub fn from_raw(x0: f64, dx: f64, values: Vec<f64>) -> Self {
        SubProb1D { x0, dx, values }
    }

    pub fn on_grid(grid: &Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.nx {
            return Err(Error::GridMismatch(format!(
                "{} values for {} x nodes",
                values.len(),
                grid.nx
            )));
        }
        SubProb1D::new(grid.x_min, grid.dx(), values)
    }

    pub fn zeros(grid: &Grid) -> Self {
        SubProb1D::from_raw(grid.x_min, grid.dx(), vec![0.0; grid.nx])
    }

    /// Point mass `m` placed in the cell of the node nearest to `x`.
    pub fn point_mass(grid: &Grid, x: f64, m: f64) -> Self {
        let mut v = SubProb1D::zeros(grid);
        let i = v.nearest(x);
        v.values[i] = m / v.dx;
        v
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x0 + i as f64 * self.dx
    }

    pub fn nearest(&self, x: f64) -> usize {
        let k = ((x - self.x0) / self.dx).round();
        k.clamp(0.0, (self.len() - 1) as f64) as usize
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.dx
    }

    /// `∫ x^k dν`.
    pub fn moment(&self, k: i32) -> f64 {
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| v * self.x(i).powi(k))
            .sum::<f64>()
            * self.dx
    }

    pub fn first_moment(&self) -> f64 {
        self.moment(1)
    }

    pub fn second_moment(&self) -> f64 {
        self.moment(2)
    }

    /// Mean of the normalized measure; zero for the null measure.
    pub fn mean(&self) -> f64 {
        let m = self.mass();
        if m > 0.0 {
            self.first_moment() / m
        } else {
            0.0
        }
    }

    /// Linear interpolation of the density, zero outside the grid.
    pub fn density_at(&self, x: f64) -> f64 {
        let s = (x - self.x0) / self.dx;
        if s < 0.0 || s > (self.len() - 1) as f64 {
            return 0.0;
        }
        let i = (s.floor() as usize).min(self.len() - 2);
        let w = s - i as f64;
        (1.0 - w) * self.values[i] + w * self.values[i + 1]
    }

    /// `⟨ν, φ⟩` for node values of `φ`.
    pub fn pair(&self, phi: &[f64]) -> f64 {
        self.values.iter().zip(phi).map(|(v, p)| v * p).sum::<f64>() * self.dx
    }

    /// `⟨ν, φ⟩` for a function `φ`.
    pub fn pair_fn(&self, phi: impl Fn(f64) -> f64) -> f64 {
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| v * phi(self.x(i)))
            .sum::<f64>()
            * self.dx
    }

    /// L² inner product of two densities on the same grid.
    pub fn l2_inner(&self, other: &SubProb1D) -> f64 {
        self.pair(&other.values)
    }

    pub fn l2_norm(&self) -> f64 {
        self.l2_inner(self).sqrt()
    }

    /// Copy with values below zero set to zero.
    pub fn clipped(&self) -> SubProb1D {
        let values = self.values.iter().map(|v| v.max(0.0)).collect();
        SubProb1D::from_raw(self.x0, self.dx, values)
    }

    pub fn same_grid(&self, other: &SubProb1D) -> bool {
        self.len() == other.len()
            && (self.x0 - other.x0).abs() <= 1e-12 * (1.0 + self.x0.abs())
            && (self.dx - other.dx).abs() <= 1e-12 * self.dx
    }

    fn check_same_grid(&self, other: &SubProb1D) -> Result<()> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "({}, {}, {}) vs ({}, {}, {})",
                self.x0,
                self.dx,
                self.len(),
                other.x0,
                other.dx,
                other.len()
            )))
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,value\n");
        for (i, v) in self.values.iter().enumerate() {
            let _ = writeln!(s, "{:.16e},{:.16e}", self.x(i), v);
        }
        s
    }
}

/// Joint density of `(X, Λ)` on the (x, y) grid, stored row by row in y.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Density2D {
    pub x0: f64,
    pub dx: f64,
    pub nx: usize,
    pub y0: f64,
    pub dy: f64,
    pub ny: usize,
    pub values: Vec<f64>,
}

impl Density2D {
    pub fn zeros(grid: &Grid) -> Self {
        Density2D {
            x0: grid.x_min,
            dx: grid.dx(),
            nx: grid.nx,
            y0: grid.y_min(),
            dy: grid.dy(),
            ny: grid.ny_total(),
            values: vec![0.0; grid.nx * grid.ny_total()],
        }
    }

    pub fn on_grid(grid: &Grid, values: Vec<f64>) -> Result<Self> {
        let mut d = Density2D::zeros(grid);
        if values.len() != d.values.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for a {}x{} grid",
                values.len(),
                d.nx,
                d.ny
            )));
        }
        d.values = values;
        Ok(d)
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.idx(i, j)]
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x0 + i as f64 * self.dx
    }

    pub fn y(&self, j: usize) -> f64 {
        self.y0 + j as f64 * self.dy
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.values[j * self.nx..(j + 1) * self.nx]
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.dx * self.dy
    }

    /// Mass carried by rows with `y < 0`.
    pub fn mass_below_zero(&self) -> f64 {
        (0..self.ny)
            .filter(|&j| self.y(j) < -1e-12)
            .map(|j| self.row(j).iter().sum::<f64>())
            .sum::<f64>()
            * self.dx
            * self.dy
    }

    /// Law of `X`, ignoring the intensity.
    pub fn x_marginal(&self) -> SubProb1D {
        let mut v = vec![0.0; self.nx];
        for j in 0..self.ny {
            for (vi, m) in v.iter_mut().zip(self.row(j)) {
                *vi += m * self.dy;
            }
        }
        SubProb1D::from_raw(self.x0, self.dx, v)
    }

    /// `∫∫ y μ(x, y)`.
    pub fn y_moment(&self) -> f64 {
        (0..self.ny)
            .map(|j| self.y(j) * self.row(j).iter().sum::<f64>())
            .sum::<f64>()
            * self.dx
            * self.dy
    }

    pub fn l2_norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>() * self.dx * self.dy
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn same_grid(&self, other: &Density2D) -> bool {
        self.nx == other.nx
            && self.ny == other.ny
            && (self.x0 - other.x0).abs() <= 1e-12 * (1.0 + self.x0.abs())
            && (self.dx - other.dx).abs() <= 1e-12 * self.dx
            && (self.y0 - other.y0).abs() <= 1e-12 * (1.0 + self.y0.abs())
            && (self.dy - other.dy).abs() <= 1e-12 * self.dy
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,y,value\n");
        for j in 0..self.ny {
            for i in 0..self.nx {
                let _ = writeln!(s, "{:.16e},{:.16e},{:.16e}", self.x(i), self.y(j), self.at(i, j));
            }
        }
        s
    }
}

/// `ν(x) = ∫ e^{-y} μ(x, y) dy` with the cell quadrature of the y grid.
pub fn s_map(mu: &Density2D) -> SubProb1D {
    let mut v = vec![0.0; mu.nx];
    for j in 0..mu.ny {
        let w = (-mu.y(j)).exp() * mu.dy;
        for (vi, m) in v.iter_mut().zip(mu.row(j)) {
            *vi += w * m;
        }
    }
    SubProb1D::from_raw(mu.x0, mu.dx, v)
}

/// `s_map` with an explicit grid check against a target 1D grid.
pub fn s_map_checked(mu: &Density2D, target: &SubProb1D) -> Result<SubProb1D> {
    let v = s_map(mu);
    v.check_same_grid(target)?;
    Ok(v)
}

/// Atoms of the δ₀-completed probability measure, sorted by position.
fn completed_atoms(v: &SubProb1D) -> Vec<(f64, f64)> {
    let mut atoms: Vec<(f64, f64)> = v
        .values
        .iter()
        .enumerate()
        .filter(|(_, m)| **m > 0.0)
        .map(|(i, m)| (v.x(i), m * v.dx))
        .collect();
    let mass: f64 = atoms.iter().map(|a| a.1).sum();
    let rest = (1.0 - mass).max(0.0);
    if rest > 0.0 {
        let pos = atoms.partition_point(|a| a.0 < 0.0);
        atoms.insert(pos, (0.0, rest));
    }
    let total = mass + rest;
    if total > 0.0 {
        for a in atoms.iter_mut() {
            a.1 /= total;
        }
    }
    atoms
}

/// `W_p` between two discrete probability measures on the line.
///
/// Merges the two quantile step functions exactly.
pub fn wasserstein_1d(a: &[(f64, f64)], b: &[(f64, f64)], p: f64) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let (mut i, mut j) = (0, 0);
    let (mut ra, mut rb) = (a[0].1, b[0].1);
    let mut acc = 0.0;
    loop {
        let step = ra.min(rb);
        acc += step * (a[i].0 - b[j].0).abs().powf(p);
        ra -= step;
        rb -= step;
        if ra <= 1e-300 {
            i += 1;
            if i == a.len() {
                break;
            }
            ra = a[i].1;
        }
        if rb <= 1e-300 {
            j += 1;
            if j == b.len() {
                break;
            }
            rb = b[j].1;
        }
    }
    acc.powf(1.0 / p)
}

/// `d_p(v1, v2) = W_p(η₁, η₂) + |m₁ − m₂|` with `η_i = v_i + (1 − m_i) δ₀`.
pub fn metric_dp(v1: &SubProb1D, v2: &SubProb1D, p: u32) -> Result<f64> {
    v1.check_same_grid(v2)?;
    if p == 0 {
        return Err(Error::InvalidMeasure("order p must be >= 1".into()));
    }
    let (a, b) = (v1.clipped(), v2.clipped());
    let w = wasserstein_1d(&completed_atoms(&a), &completed_atoms(&b), p as f64);
    Ok(w + (a.mass() - b.mass()).abs())
}

/// Bounded-Lipschitz distance `sup { ∫ φ d(v1 − v2) : |φ| ≤ 1, Lip(φ) ≤ 1 }`.
///
/// Solved exactly as a chain linear program over node values: every vertex
/// takes values `±1 ∓ k·dx`, and a sliding-window dynamic program over that
/// lattice finds the optimum.
pub fn metric_d0(v1: &SubProb1D, v2: &SubProb1D) -> Result<f64> {
    v1.check_same_grid(v2)?;
    let dx = v1.dx;
    let c: Vec<f64> = v1
        .values
        .iter()
        .zip(&v2.values)
        .map(|(a, b)| (a - b) * dx)
        .collect();
    let kmax = (2.0 / dx).floor() as usize;
    let mut cand: Vec<f64> = Vec::with_capacity(2 * kmax + 2);
    for k in 0..=kmax {
        cand.push(-1.0 + k as f64 * dx);
        cand.push(1.0 - k as f64 * dx);
    }
    cand.retain(|v| *v >= -1.0 - 1e-12 && *v <= 1.0 + 1e-12);
    cand.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cand.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    let m = cand.len();
    let reach = dx * (1.0 + 1e-9);
    let mut f: Vec<f64> = cand.iter().map(|v| c[0] * v).collect();
    let mut next = vec![0.0; m];
    for ci in c.iter().skip(1) {
        // window maximum of f over candidates within `reach`
        let mut dq: VecDeque<usize> = VecDeque::new();
        let mut hi = 0usize;
        for k in 0..m {
            while hi < m && cand[hi] <= cand[k] + reach {
                while let Some(&back) = dq.back() {
                    if f[back] <= f[hi] {
                        dq.pop_back();
                    } else {
                        break;
                    }
                }
                dq.push_back(hi);
                hi += 1;
            }
            while let Some(&front) = dq.front() {
                if cand[front] < cand[k] - reach {
                    dq.pop_front();
                } else {
                    break;
                }
            }
            next[k] = ci * cand[k] + f[*dq.front().expect("window contains k")];
        }
        std::mem::swap(&mut f, &mut next);
    }
    Ok(f.iter().cloned().fold(f64::NEG_INFINITY, f64::max).max(0.0))
}

/// Hat functions of the partition of unity on `[−n, n]` with spacing `2^{-k}`.
#[derive(Debug, Clone)]
pub struct HatPartition {
    pub n: usize,
    pub k: usize,
    pub h: f64,
    pub nodes: Vec<f64>,
}

impl HatPartition {
    pub fn new(n: usize, k: usize) -> Self {
        let h = 0.5f64.powi(k as i32);
        let l = 2 * n * (1usize << k);
        let nodes = (1..l).map(|i| -(n as f64) + i as f64 * h).collect();
        HatPartition { n, k, h, nodes }
    }

    pub fn hat(&self, i: usize, x: f64) -> f64 {
        (1.0 - (x - self.nodes[i]).abs() / self.h).max(0.0)
    }

    /// `Σ_i ψ_i(x)`: one on `[−n + h, n − h]`, linear down to zero at `±n`.
    pub fn cutoff(&self, x: f64) -> f64 {
        let n = self.n as f64;
        let d = n - x.abs();
        if d <= 0.0 {
            0.0
        } else {
            (d / self.h).min(1.0)
        }
    }

    /// Grid nodes of `v` inside the support of hat `i`.
    fn support(&self, v: &SubProb1D, i: usize) -> std::ops::Range<usize> {
        let lo = ((self.nodes[i] - self.h - v.x0) / v.dx).floor().max(0.0) as usize;
        let hi = (((self.nodes[i] + self.h - v.x0) / v.dx).ceil() + 1.0).max(0.0) as usize;
        lo.min(v.len())..hi.min(v.len())
    }

    /// `ϖ_i(v) = ∫ ψ_i dv`.
    pub fn weights(&self, v: &SubProb1D) -> Vec<f64> {
        (0..self.nodes.len())
            .map(|i| {
                self.support(v, i)
                    .map(|m| self.hat(i, v.x(m)) * v.values[m])
                    .sum::<f64>()
                    * v.dx
            })
            .collect()
    }

    /// `Σ_i w_i ψ̄_i` sampled on the grid of `like`, with `ψ̄_i` normalized
    /// to unit grid integral.
    pub fn reconstruct(&self, w: &[f64], like: &SubProb1D) -> SubProb1D {
        let mut out = vec![0.0; like.len()];
        for (i, wi) in w.iter().enumerate() {
            if *wi == 0.0 {
                continue;
            }
            let r = self.support(like, i);
            let z: f64 = r.clone().map(|m| self.hat(i, like.x(m))).sum::<f64>() * like.dx;
            if z <= 0.0 {
                continue;
            }
            for m in r {
                out[m] += wi * self.hat(i, like.x(m)) / z;
            }
        }
        SubProb1D::from_raw(like.x0, like.dx, out)
    }

    /// `(Σ_i ψ_i) v`.
    pub fn truncate(&self, v: &SubProb1D) -> SubProb1D {
        let values = v
            .values
            .iter()
            .enumerate()
            .map(|(m, val)| val * self.cutoff(v.x(m)))
            .collect();
        SubProb1D::from_raw(v.x0, v.dx, values)
    }
}

/// Weights `ϖ_i(v)` and reconstruction `v_{n,k}` of the hat partition.
pub fn discretize_measure(v: &SubProb1D, n: usize, k: usize) -> (Vec<f64>, SubProb1D) {
    let part = HatPartition::new(n.max(1), k.max(1));
    let w = part.weights(v);
    let rec = part.reconstruct(&w, v);
    (w, rec)
}

/// Smooth transition from 0 (at `s ≤ 0`) to 1 (at `s ≥ 1`).
pub fn smooth_step(s: f64) -> f64 {
    if s <= 0.0 {
        0.0
    } else if s >= 1.0 {
        1.0
    } else {
        let a = (-1.0 / s).exp();
        let b = (-1.0 / (1.0 - s)).exp();
        a / (a + b)
    }
}

/// Cutoff equal to one on `[−(n−1), n−1]` and zero outside `(−n, n)`.
pub fn kappa(n: usize, x: f64) -> f64 {
    smooth_step(n as f64 - x.abs())
}

/// `κ_n v`.
pub fn truncate_measure(v: &SubProb1D, n: usize) -> SubProb1D {
    let values = v
        .values
        .iter()
        .enumerate()
        .map(|(i, val)| val * kappa(n, v.x(i)))
        .collect();
    SubProb1D::from_raw(v.x0, v.dx, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;

    fn grid() -> Grid {
        build_grid(-4.0, 4.0, 81, 2.0, 21, 10, 0.0, 1.0).unwrap()
    }

    #[test]
    fn point_masses_in_s_map() {
        let g = build_grid(-2.0, 2.0, 41, 2.0 * 2f64.ln(), 3, 10, 0.0, 1.0).unwrap();
        let mut mu = Density2D::zeros(&g);
        let cell = 1.0 / (mu.dx * mu.dy);
        let i0 = 17;
        let idx = mu.idx(i0, 0);
        mu.values[idx] = cell;
        let nu = s_map(&mu);
        assert!((nu.mass() - 1.0).abs() < 1e-14);
        assert!((nu.values[i0] * nu.dx - 1.0).abs() < 1e-14);

        let mut mu = Density2D::zeros(&g);
        let idx = mu.idx(i0, 1);
        assert!((mu.y(1) - 2f64.ln()).abs() < 1e-15);
        mu.values[idx] = cell;
        assert!((s_map(&mu).mass() - 0.5).abs() < 1e-14);
    }

    #[test]
    fn dp_examples() {
        let g = grid();
        let a = SubProb1D::point_mass(&g, 0.0, 1.0);
        let half = SubProb1D::point_mass(&g, 0.0, 0.5);
        let b = SubProb1D::point_mass(&g, 1.0, 1.0);
        assert!(metric_dp(&a, &a, 1).unwrap().abs() < 1e-14);
        assert!((metric_dp(&a, &half, 1).unwrap() - 0.5).abs() < 1e-12);
        assert!((metric_dp(&a, &b, 1).unwrap() - 1.0).abs() < 1e-12);
        assert!((metric_dp(&a, &b, 2).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn grid_mismatch_detected() {
        let a = SubProb1D::zeros(&grid());
        let b = SubProb1D::zeros(&build_grid(-4.0, 4.0, 41, 2.0, 21, 10, 0.0, 1.0).unwrap());
        assert!(matches!(metric_dp(&a, &b, 1), Err(Error::GridMismatch(_))));
        assert!(matches!(metric_d0(&a, &b), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn d0_far_point_masses() {
        let g = grid();
        let a = SubProb1D::point_mass(&g, -1.5, 1.0);
        for r in [0.5, 2.0, 3.0] {
            let b = SubProb1D::point_mass(&g, -1.5 + r, 1.0);
            let d = metric_d0(&a, &b).unwrap();
            assert!((d - r.min(2.0)).abs() < 1e-9, "r={r} d={d}");
        }
    }

    #[test]
    fn checked_constructor() {
        assert!(SubProb1D::new(0.0, 0.1, vec![-1.0, 0.0]).is_err());
        assert!(SubProb1D::new(0.0, 0.1, vec![20.0, 0.0]).is_err());
        assert!(SubProb1D::new(0.0, 0.1, vec![5.0, -1e-13]).is_ok());
    }

    #[test]
    fn truncation_examples() {
        let g = grid();
        let v = SubProb1D::point_mass(&g, 0.5, 0.7);
        assert_eq!(truncate_measure(&v, 3), v);
        let far = SubProb1D::point_mass(&g, 3.5, 1.0);
        assert_eq!(truncate_measure(&far, 2).mass(), 0.0);
    }

    #[test]
    fn partition_of_unity_point_mass() {
        let g = build_grid(-4.0, 4.0, 161, 2.0, 3, 10, 0.0, 1.0).unwrap();
        let v = SubProb1D::point_mass(&g, 1.0, 1.0);
        let (w, rec) = discretize_measure(&v, 2, 1);
        let part = HatPartition::new(2, 1);
        let i = part.nodes.iter().position(|x| (*x - 1.0).abs() < 1e-12).unwrap();
        assert!((w[i] - 1.0).abs() < 1e-12);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(rec.nearest(1.0), rec.values.iter().enumerate().max_by(|a, b| a.1.partial_cmp(b.1).unwrap()).unwrap().0);
        let out = SubProb1D::point_mass(&g, 3.0, 1.0);
        assert!(discretize_measure(&out, 2, 1).0.iter().all(|w| *w == 0.0));
    }
}
