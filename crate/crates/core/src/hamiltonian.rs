//! Pointwise Hamiltonians and the feedback minimizer `g₋`.
//!
//! Notation: `r` is the value and `p` the spatial gradient of the backward
//! solution.

use crate::error::{Error, Result};
use crate::measures::{s_map, Density2D, SubProb1D};
use crate::model::{dot, ControlCost, ModelSpec};
use crate::MU_FLOOR;

const GOLDEN: f64 = 0.618_033_988_749_894_8;

/// `p · (factor · h) + weight · f₁(t, x, h)`.
#[inline]
pub(crate) fn control_objective(
    spec: &ModelSpec,
    t: f64,
    x: f64,
    factor: &[f64],
    p: f64,
    weight: f64,
    h: &[f64],
) -> f64 {
    p * dot(factor, h) + weight * spec.f1_value(t, x, h)
}

/// Minimizer over the control box of `h ↦ p (factor · h) + weight f₁(h)`,
/// written into `out`.
pub(crate) fn argmin_into(
    spec: &ModelSpec,
    t: f64,
    x: f64,
    factor: &[f64],
    p: f64,
    weight: f64,
    out: &mut [f64],
) {
    let bx = &spec.control_box;
    let d = out.len();
    if bx.is_singleton() {
        out.copy_from_slice(&bx.lower);
        return;
    }
    match &spec.f1 {
        ControlCost::Tabulated(tc) => {
            out[0] = tc.argmin(t, x, p * factor[0], weight, bx.lower[0], bx.upper[0]);
        }
        ControlCost::Quadratic { weight: c } => {
            let cw = *c * weight;
            for k in 0..d {
                let slope = p * factor[k];
                out[k] = if cw > 0.0 {
                    (-slope / cw).clamp(bx.lower[k], bx.upper[k])
                } else if slope < 0.0 {
                    bx.upper[k]
                } else {
                    bx.lower[k]
                };
            }
        }
        ControlCost::General { .. } => {
            let obj = |h: &[f64]| control_objective(spec, t, x, factor, p, weight, h);
            if d == 1 {
                out[0] = golden_section(|h| obj(&[h]), bx.lower[0], bx.upper[0]);
            } else {
                projected_gradient_restarts(spec, t, x, factor, p, weight, &obj, out);
            }
        }
    }
}

/// Golden-section search for a convex function on `[a, b]`, returning the
/// leftmost point of the (numerically) flat minimum.
fn golden_section(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let (mut lo, mut hi) = (a, b);
    let tol = 1e-13 * (1.0 + a.abs().max(b.abs()));
    let mut x1 = hi - GOLDEN * (hi - lo);
    let mut x2 = lo + GOLDEN * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - GOLDEN * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + GOLDEN * (hi - lo);
            f2 = f(x2);
        }
    }
    let mut best = 0.5 * (lo + hi);
    let mut fb = f(best);
    for e in [a, b] {
        let fe = f(e);
        if fe < fb || (fe == fb && e < best) {
            best = e;
            fb = fe;
        }
    }
    // leftmost point of the flat set {f <= fb + tie}
    let tie = 4.0 * f64::EPSILON * (1.0 + fb.abs());
    if best > a && f(a) <= fb + tie {
        return a;
    }
    let (mut l, mut r) = (a, best);
    if f(best - tol.max(1e-12)) <= fb + tie {
        while r - l > tol {
            let m = 0.5 * (l + r);
            if f(m) <= fb + tie {
                r = m;
            } else {
                l = m;
            }
        }
        best = r;
    }
    best
}

#[allow(clippy::too_many_arguments)]
fn projected_gradient_restarts(
    spec: &ModelSpec,
    t: f64,
    x: f64,
    factor: &[f64],
    p: f64,
    weight: f64,
    obj: &dyn Fn(&[f64]) -> f64,
    out: &mut [f64],
) {
    let bx = &spec.control_box;
    let d = out.len();
    let mut starts = vec![bx.center()];
    let ncorner = 1usize << d.min(3);
    for c in 0..ncorner {
        starts.push(
            (0..d)
                .map(|k| if k < 3 && (c >> k) & 1 == 1 { bx.upper[k] } else { bx.lower[k] })
                .collect(),
        );
    }
    let mut found: Vec<(f64, Vec<f64>)> = Vec::with_capacity(starts.len());
    let mut grad = vec![0.0; d];
    for s in starts {
        let mut h = s;
        let mut fh = obj(&h);
        let mut step = 1.0;
        for _ in 0..2000 {
            spec.f1_gradient(t, x, &h, &mut grad);
            for k in 0..d {
                grad[k] = p * factor[k] + weight * grad[k];
            }
            let mut accepted = false;
            let mut trial = h.clone();
            for _ in 0..60 {
                for k in 0..d {
                    trial[k] = h[k] - step * grad[k];
                }
                bx.project(&mut trial);
                let moved: f64 = trial.iter().zip(&h).map(|(a, b)| (a - b).powi(2)).sum();
                let ft = obj(&trial);
                if ft <= fh - 1e-4 / step * moved {
                    accepted = moved > 0.0;
                    h.copy_from_slice(&trial);
                    fh = ft;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
            let moved: f64 = trial.iter().zip(&h).map(|(a, b)| (a - b).abs()).sum();
            if moved < 1e-14 {
                break;
            }
            step = (step * 2.0).min(1e6);
        }
        found.push((fh, h));
    }
    let best = found.iter().map(|f| f.0).fold(f64::INFINITY, f64::min);
    let tie = 1e-12 * (1.0 + best.abs());
    let chosen = found
        .iter()
        .filter(|f| f.0 <= best + tie)
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal))
        .expect("at least one start");
    out.copy_from_slice(&chosen.1);
}

fn check_finite(vals: &[f64]) -> Result<()> {
    if vals.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonfiniteInput(format!("{vals:?}")))
    }
}

/// `g₋(t, x, p)`: minimizer of `h ↦ b₁(t, x, h) p + f₁(t, x, h)` over the box.
pub fn minimize_hamiltonian(t: f64, x: f64, p: f64, spec: &ModelSpec) -> Result<Vec<f64>> {
    check_finite(&[t, x, p])?;
    let d = spec.control_dim();
    let mut fac = vec![0.0; d];
    spec.drift_factor(t, x, &mut fac);
    let mut g = vec![0.0; d];
    argmin_into(spec, t, x, &fac, p, 1.0, &mut g);
    Ok(g)
}

/// `H^ν(t, x, r, p) = inf_h (b p + f) − λ r`.
pub fn h_nu(t: f64, x: f64, r: f64, p: f64, nu: &SubProb1D, spec: &ModelSpec) -> Result<f64> {
    check_finite(&[t, x, r, p])?;
    let g = minimize_hamiltonian(t, x, p, spec)?;
    let b = spec.b0_value(t, x, nu) + spec.b1_value(t, x, &g);
    Ok(b * p + spec.f0.eval(t, x, nu) + spec.f1_value(t, x, &g) - (spec.lambda)(t, x) * r)
}

/// `F^ν(x) = ⟨ν, Db₀(t, ·, ν)(x) p⟩ + ⟨ν, Df₀(t, ·, ν)(x)⟩` for node values `p`.
pub fn f_nu(t: f64, x: f64, nu: &SubProb1D, dxu_field: &[f64], spec: &ModelSpec) -> Result<f64> {
    if dxu_field.len() != nu.len() {
        return Err(Error::GridMismatch(format!(
            "gradient field has {} nodes, measure has {}",
            dxu_field.len(),
            nu.len()
        )));
    }
    if !spec.has_mean_field_derivatives() {
        return Ok(0.0);
    }
    let s: f64 = (0..nu.len())
        .map(|k| {
            let xk = nu.x(k);
            nu.values[k]
                * (spec.b0.derivative(t, xk, nu, x) * dxu_field[k] + spec.f0.derivative(t, xk, nu, x))
        })
        .sum();
    Ok(s * nu.dx)
}

/// `K̃(t, x, y, p, h) = b(t, x, ν, h) p + e^{−y} f(t, x, ν, h)`.
#[allow(clippy::too_many_arguments)]
pub fn k_tilde(t: f64, x: f64, y: f64, p: f64, h: &[f64], nu: &SubProb1D, spec: &ModelSpec) -> f64 {
    let b = spec.b0_value(t, x, nu) + spec.b1_value(t, x, h);
    b * p + (-y).exp() * spec.running_cost(t, x, nu, h)
}

/// `inf_h K̃(t, x, y, p, h)` and its minimizer.
pub fn k_tilde_min(
    t: f64,
    x: f64,
    y: f64,
    p: f64,
    nu: &SubProb1D,
    spec: &ModelSpec,
) -> (f64, Vec<f64>) {
    let d = spec.control_dim();
    let mut fac = vec![0.0; d];
    spec.drift_factor(t, x, &mut fac);
    let mut g = vec![0.0; d];
    argmin_into(spec, t, x, &fac, p, (-y).exp(), &mut g);
    (k_tilde(t, x, y, p, &g, nu, spec), g)
}

/// `F̃^μ(x, y) = e^{−y} [⟨μ, Db₀(t, ·, ν)(x) p̃⟩ + ⟨ν, Df₀(t, ·, ν)(x)⟩]`
/// with `ν = S(μ)` and `p̃` given on the (x, y) grid.
pub fn f_tilde_mu(
    t: f64,
    x: f64,
    y: f64,
    mu: &Density2D,
    dxu_2d: &[f64],
    spec: &ModelSpec,
) -> Result<f64> {
    if dxu_2d.len() != mu.values.len() {
        return Err(Error::GridMismatch(format!(
            "gradient field has {} nodes, density has {}",
            dxu_2d.len(),
            mu.values.len()
        )));
    }
    if !spec.has_mean_field_derivatives() {
        return Ok(0.0);
    }
    let nu = s_map(mu);
    // Σ_l μ_kl p̃_kl dy per column k
    let mut col = vec![0.0; mu.nx];
    for j in 0..mu.ny {
        for k in 0..mu.nx {
            let idx = mu.idx(k, j);
            col[k] += mu.values[idx] * dxu_2d[idx] * mu.dy;
        }
    }
    let s: f64 = (0..mu.nx)
        .map(|k| {
            let xk = mu.x(k);
            spec.b0.derivative(t, xk, &nu, x) * col[k] + nu.values[k] * spec.f0.derivative(t, xk, &nu, x)
        })
        .sum();
    Ok((-y).exp() * s * mu.dx)
}

/// `H̃^μ`: the infimum of `K̃` where `μ > μ_floor`, otherwise `K̃` at the
/// supplied fallback control.
#[allow(clippy::too_many_arguments)]
pub fn h_tilde_mu(
    t: f64,
    x: f64,
    y: f64,
    p: f64,
    mu_value: f64,
    fallback_g: &[f64],
    nu: &SubProb1D,
    spec: &ModelSpec,
) -> Result<f64> {
    check_finite(&[t, x, y, p])?;
    if mu_value > MU_FLOOR {
        Ok(k_tilde_min(t, x, y, p, nu, spec).0)
    } else {
        Ok(k_tilde(t, x, y, p, fallback_g, nu, spec))
    }
}
