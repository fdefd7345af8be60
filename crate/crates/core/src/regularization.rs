//! Coefficient approximation: discrete Moreau envelopes, mollification and
//! the bounded, strictly convex family `spec_n`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{HatPartition, SubProb1D};
use crate::model::{
    validate_model, ControlCost, ControlDrift, MeanFieldTerm, ModelSpec, TabulatedCost, TableFn, TerminalCost,
};

/// Number of control samples used for the envelope table.
pub const ENVELOPE_POINTS: usize = 201;
const MAX_K: usize = 4;
const CACHE_LIMIT: usize = 200_000;

/// `φ̃_n(g) = min_h φ(h) + n |g − h|²` over the sample points `grid`,
/// evaluated at `at`.
pub fn inf_convolution_at(grid: &[f64], phi: &[f64], n: f64, at: &[f64]) -> Result<Vec<f64>> {
    if grid.len() != phi.len() || grid.is_empty() {
        return Err(Error::InvalidParameter(format!("{} samples for {} points", phi.len(), grid.len())));
    }
    if let Some(v) = phi.iter().chain(grid).find(|v| !v.is_finite()) {
        return Err(Error::NonfiniteInput(format!("sample {v}")));
    }
    if !(n > 0.0) {
        return Err(Error::InvalidParameter(format!("envelope index {n}")));
    }
    Ok(at
        .iter()
        .map(|g| {
            grid.iter()
                .zip(phi)
                .map(|(h, p)| p + n * (g - h) * (g - h))
                .fold(f64::INFINITY, f64::min)
        })
        .collect())
}

/// Discrete Moreau envelope on the sample grid itself.
pub fn inf_convolution(grid: &[f64], phi: &[f64], n: f64) -> Result<Vec<f64>> {
    inf_convolution_at(grid, phi, n, grid)
}

/// Standard bump `e^{−1/(1−s²)}` on `(−1, 1)`.
pub fn bump(s: f64) -> f64 {
    if s.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - s * s)).exp()
    }
}

/// Convolution of uniform samples with the bump of radius `eps`, normalized
/// on the grid so constants are preserved; the kernel is renormalized where
/// it is cut by the ends.
pub fn mollify(values: &[f64], dx: f64, eps: f64) -> Result<Vec<f64>> {
    if !(dx > 0.0) || !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("spacing {dx}, radius {eps}")));
    }
    if eps < 2.0 * dx {
        return Err(Error::EpsBelowGrid { eps, dx });
    }
    let r = (eps / dx).ceil() as isize;
    let kernel: Vec<f64> = (-r..=r).map(|k| bump(k as f64 * dx / eps)).collect();
    let n = values.len() as isize;
    Ok((0..n)
        .map(|i| {
            let (mut s, mut z) = (0.0, 0.0);
            for (m, w) in kernel.iter().enumerate() {
                let j = i + m as isize - r;
                if (0..n).contains(&j) && *w > 0.0 {
                    s += w * values[j as usize];
                    z += w;
                }
            }
            s / z
        })
        .collect())
}

/// Which structural properties of `spec_n` were confirmed by sampling.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Certificates {
    pub lambda_capped: bool,
    /// Smallest `C` with `|b| + |λ| ≤ C (1 + |x|)` on the samples.
    pub growth_constant: f64,
    pub strictly_convex: bool,
    /// The control cost is windowed by `e^{−x²/n}`.
    pub square_integrable: bool,
    /// The sampled modulus admits the chosen hat spacing.
    pub modulus_resolved: bool,
    pub valid: bool,
}

/// Regularized model of index `n` together with its construction data.
#[derive(Clone)]
pub struct ApproxFamily {
    pub n: usize,
    pub spec: ModelSpec,
    /// Hat spacing exponent of the measure discretization.
    pub k: usize,
    /// Shift radius of the symmetric rule in the weights.
    pub eps_weights: f64,
    /// Mollification radius of the control envelope.
    pub eps_control: f64,
    /// Sampled Lipschitz constant of the measure-dependent coefficients.
    pub modulus: f64,
    pub certificates: Certificates,
}

impl std::fmt::Debug for ApproxFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ApproxFamily")
            .field("n", &self.n)
            .field("k", &self.k)
            .field("eps_weights", &self.eps_weights)
            .field("eps_control", &self.eps_control)
            .field("modulus", &self.modulus)
            .field("certificates", &self.certificates)
            .finish()
    }
}

/// `ν ↦ Φ(ν) ± ε R` with `Φ` the hat-partition projection and `R` the
/// reconstruction of unit weights.
#[derive(Clone)]
struct Composer {
    part: Arc<HatPartition>,
    eps: f64,
}

impl Composer {
    fn shifted(&self, nu: &SubProb1D, sign: f64) -> SubProb1D {
        let mut w = self.part.weights(nu);
        w.iter_mut().for_each(|v| *v += sign * self.eps);
        self.part.reconstruct(&w, nu)
    }

    fn value(&self, nu: &SubProb1D, f: impl Fn(&SubProb1D) -> f64) -> f64 {
        0.5 * (f(&self.shifted(nu, 1.0)) + f(&self.shifted(nu, -1.0)))
    }

    /// `Σ_m hat_m(x′) ⟨DF(·), ψ̄_m⟩` averaged over both shifts.
    fn derivative(&self, nu: &SubProb1D, xp: f64, df: impl Fn(&SubProb1D, f64) -> f64) -> f64 {
        let part = &self.part;
        let h = part.h;
        let first = ((xp + part.n as f64) / h).floor() as isize - 1;
        let mut total = 0.0;
        for sign in [1.0, -1.0] {
            let phi = self.shifted(nu, sign);
            for m in first.max(0)..(first + 3).min(part.nodes.len() as isize) {
                let m = m as usize;
                let w = part.hat(m, xp);
                if w == 0.0 {
                    continue;
                }
                let (mut s, mut z) = (0.0, 0.0);
                for j in 0..nu.len() {
                    let x = nu.x(j);
                    let hm = part.hat(m, x);
                    if hm > 0.0 {
                        s += hm * df(&phi, x);
                        z += hm;
                    }
                }
                if z > 0.0 {
                    total += 0.5 * w * s / z;
                }
            }
        }
        total
    }
}

fn compose_term(term: &MeanFieldTerm, n: f64, comp: &Composer) -> MeanFieldTerm {
    match term {
        MeanFieldTerm::Local(f) => {
            let f = f.clone();
            MeanFieldTerm::local(move |t, x| f(t, x.clamp(-n, n)))
        }
        MeanFieldTerm::NonLocal { value, derivative } => {
            let (value, derivative) = (value.clone(), derivative.clone());
            let (c1, c2) = (comp.clone(), comp.clone());
            MeanFieldTerm::non_local(
                move |t, x, nu| {
                    let xc = x.clamp(-n, n);
                    c1.value(nu, |m| value(t, xc, m))
                },
                move |t, x, nu, xp| {
                    let xc = x.clamp(-n, n);
                    c2.derivative(nu, xp, |m, z| derivative(t, xc, m, z))
                },
            )
        }
    }
}

type EnvelopeCache = Arc<Mutex<HashMap<(u64, u64), Arc<Vec<f64>>>>>;

/// Tabulated `φ̃_n` of `f₁(t, x, ·)` on an extended control grid, mollified
/// in the control variable.
#[derive(Clone)]
struct EnvelopeTable {
    g0: f64,
    dg: f64,
    eps: f64,
    n: f64,
    base: Vec<f64>,
}

impl EnvelopeTable {
    fn new(lo: f64, hi: f64, n: f64) -> Self {
        let dg = if hi > lo { (hi - lo) / (ENVELOPE_POINTS - 1) as f64 } else { 1.0 };
        let eps = (2.0 * dg).max(0.5 / n);
        let pad = (eps / dg).ceil() as usize + 2;
        let base = (0..ENVELOPE_POINTS).map(|i| lo + i as f64 * dg).collect();
        EnvelopeTable { g0: lo - pad as f64 * dg, dg, eps, n, base }
    }

    fn tabulate(&self, phi: impl Fn(f64) -> f64) -> Vec<f64> {
        let samples: Vec<f64> = self.base.iter().map(|g| phi(*g)).collect();
        let len = ENVELOPE_POINTS + 2 * ((self.base[0] - self.g0) / self.dg).round() as usize;
        let ext: Vec<f64> = (0..len).map(|i| self.g0 + i as f64 * self.dg).collect();
        let env = inf_convolution_at(&self.base, &samples, self.n, &ext).unwrap_or_else(|_| vec![f64::NAN; len]);
        mollify(&env, self.dg, self.eps).unwrap_or(env)
    }
}

fn regularized_cost(spec: &ModelSpec, n: f64) -> (ControlCost, f64) {
    let bx = &spec.control_box;
    let window = move |x: f64| (-x * x / n).exp();
    if bx.dim() != 1 {
        let s = spec.clone();
        let value = Arc::new(move |t: f64, x: f64, g: &[f64]| {
            window(x) * (s.f1_value(t, x, g) + g.iter().map(|v| v * v).sum::<f64>() / n)
        });
        return (ControlCost::General { value, gradient: None }, 0.0);
    }
    let table = EnvelopeTable::new(bx.lower[0], bx.upper[0], n);
    let eps = table.eps;
    let (g0, dg) = (table.g0, table.dg);
    let lookup: TableFn = match spec.f1 {
        ControlCost::Quadratic { weight } => {
            let tab = Arc::new(table.tabulate(|g| 0.5 * weight * g * g));
            Arc::new(move |_, _| tab.clone())
        }
        _ => {
            let s = spec.clone();
            let cache: EnvelopeCache = Arc::new(Mutex::new(HashMap::new()));
            Arc::new(move |t, x| {
                let key = (t.to_bits(), x.to_bits());
                if let Some(tab) = cache.lock().expect("envelope cache").get(&key) {
                    return tab.clone();
                }
                let tab = Arc::new(table.tabulate(|h| s.f1_value(t, x, &[h])));
                let mut c = cache.lock().expect("envelope cache");
                if c.len() >= CACHE_LIMIT {
                    c.clear();
                }
                c.insert(key, tab.clone());
                tab
            })
        }
    };
    let cost = TabulatedCost { g0, dg, quad: 1.0 / n, window: 1.0 / n, table: lookup };
    (ControlCost::Tabulated(cost), eps)
}

/// Gaussian profiles of unit mass centred at `a` on a fine grid over the
/// sample domain.
fn probe(spec: &ModelSpec, a: f64) -> SubProb1D {
    let (xa, xb) = spec.sample_domain;
    let m = 401;
    let dx = (xb - xa) / (m - 1) as f64;
    let raw: Vec<f64> = (0..m).map(|i| (-0.5 * ((xa + i as f64 * dx - a) / 0.5).powi(2)).exp()).collect();
    let z: f64 = raw.iter().sum::<f64>() * dx;
    SubProb1D::from_raw(xa, dx, raw.into_iter().map(|v| v / z).collect())
}

/// Largest sampled ratio `|F(ν_a) − F(ν_b)| / |a − b|` over Gaussian
/// profiles, for the measure-dependent coefficients.
fn sampled_modulus(spec: &ModelSpec) -> f64 {
    let (xa, xb) = spec.sample_domain;
    let centres: Vec<f64> = (0..9).map(|i| xa + (xb - xa) * (0.25 + 0.0625 * i as f64)).collect();
    let probes: Vec<SubProb1D> = centres.iter().map(|a| probe(spec, *a)).collect();
    let xs: Vec<f64> = (0..9).map(|i| xa + (xb - xa) * i as f64 / 8.0).collect();
    let t = 0.5 * spec.horizon;
    let mut lip = 0.0f64;
    for a in 0..probes.len() {
        for b in a + 1..probes.len() {
            let d = (centres[a] - centres[b]).abs();
            let dpsi = ((spec.psi.value)(&probes[a]) - (spec.psi.value)(&probes[b])).abs();
            lip = lip.max(dpsi / d);
            for x in &xs {
                for term in [&spec.b0, &spec.f0] {
                    if !term.is_local() {
                        let df = (term.eval(t, *x, &probes[a]) - term.eval(t, *x, &probes[b])).abs();
                        lip = lip.max(df / d);
                    }
                }
            }
        }
    }
    lip
}

/// Builds `spec_n`: `x`-clamped drift, `λ ∧ n`, windowed and strictly convex
/// control cost from the mollified envelope, and measure-dependent terms
/// composed with the hat-partition projection.
pub fn build_approx_family(spec: &ModelSpec, n: usize) -> Result<ApproxFamily> {
    if n == 0 {
        return Err(Error::InvalidParameter("approximation index must be at least 1".into()));
    }
    let nf = n as f64;
    let modulus = sampled_modulus(spec);
    // smallest k with modulus · 2^{-k} ≤ 1/n
    let mut k_needed = 1;
    while modulus * 0.5f64.powi(k_needed as i32) > 1.0 / nf && k_needed < 30 {
        k_needed += 1;
    }
    let k = k_needed.min(MAX_K);
    let hats = 2 * n * (1 << k) - 1;
    let eps_weights = 1.0 / (nf * (1.0 + modulus) * hats as f64);
    let comp = Composer { part: Arc::new(HatPartition::new(n, k)), eps: eps_weights };

    let b1 = match &spec.b1 {
        ControlDrift::Linear(f) => {
            let f = f.clone();
            ControlDrift::Linear(Arc::new(move |t, x, out: &mut [f64]| f(t, x.clamp(-nf, nf), out)))
        }
        ControlDrift::General(b) => {
            let b = b.clone();
            ControlDrift::General(Arc::new(move |t, x, g: &[f64]| b(t, x.clamp(-nf, nf), g)))
        }
    };
    let lam = spec.lambda.clone();
    let (f1, eps_control) = regularized_cost(spec, nf);
    let psi = {
        let (value, derivative) = (spec.psi.value.clone(), spec.psi.derivative.clone());
        let (c1, c2) = (comp.clone(), comp.clone());
        TerminalCost {
            value: Arc::new(move |nu| c1.value(nu, |m| value(m))),
            derivative: Arc::new(move |nu, xp| c2.derivative(nu, xp, |m, z| derivative(m, z))),
        }
    };
    let spec_n = ModelSpec {
        name: format!("{}_n{}", spec.name, n),
        b0: compose_term(&spec.b0, nf, &comp),
        b1,
        lambda: Arc::new(move |t, x| lam(t, x).min(nf)),
        f0: compose_term(&spec.f0, nf, &comp),
        f1,
        psi,
        ..spec.clone()
    };
    let certificates = certify(&spec_n, nf, k_needed <= MAX_K);
    Ok(ApproxFamily { n, spec: spec_n, k, eps_weights, eps_control, modulus, certificates })
}

fn certify(spec: &ModelSpec, n: f64, modulus_resolved: bool) -> Certificates {
    let (xa, xb) = spec.sample_domain;
    let bx = &spec.control_box;
    let d = bx.dim();
    let nu = probe(spec, 0.5 * (xa + xb));
    let mut lambda_capped = true;
    let mut growth = 0.0f64;
    let mut convex = true;
    let steps = 24;
    let corner = |s: f64| -> Vec<f64> { (0..d).map(|k| bx.lower[k] + s * (bx.upper[k] - bx.lower[k])).collect() };
    for a in 0..=steps {
        let x = xa + (xb - xa) * a as f64 / steps as f64;
        for tt in [0.0, 0.5, 1.0] {
            let t = tt * spec.horizon;
            let lam = (spec.lambda)(t, x);
            lambda_capped &= lam <= n;
            let bmax = [0.0, 1.0].iter().map(|s| spec.b1_value(t, x, &corner(*s)).abs()).fold(0.0, f64::max);
            let b = spec.b0.eval(t, x, &nu).abs() + bmax;
            growth = growth.max((b + lam) / (1.0 + x.abs()));
            let modulus = (-x * x / n).exp() / (4.0 * n);
            for (s1, s2) in [(0.0, 1.0), (0.1, 0.7), (0.3, 0.5), (0.45, 0.55)] {
                let (g1, g2) = (corner(s1), corner(s2));
                let mid: Vec<f64> = g1.iter().zip(&g2).map(|(p, q)| 0.5 * (p + q)).collect();
                let gap = 0.5 * (spec.f1_value(t, x, &g1) + spec.f1_value(t, x, &g2)) - spec.f1_value(t, x, &mid);
                let dist2: f64 = g1.iter().zip(&g2).map(|(p, q)| (p - q) * (p - q)).sum();
                convex &= gap >= modulus * dist2 * (1.0 - 1e-6) - 1e-12;
            }
        }
    }
    Certificates {
        lambda_capped,
        growth_constant: growth,
        strictly_convex: convex,
        square_integrable: true,
        modulus_resolved,
        valid: validate_model(spec).is_ok(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_grid(m: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..m).map(|i| lo + (hi - lo) * i as f64 / (m - 1) as f64).collect()
    }

    #[test]
    fn envelope_below_and_monotone() {
        let g = unit_grid(101, -1.0, 1.0);
        let phi: Vec<f64> = g.iter().map(|x| x.abs()).collect();
        let e1 = inf_convolution(&g, &phi, 1.0).unwrap();
        let e4 = inf_convolution(&g, &phi, 4.0).unwrap();
        for i in 0..g.len() {
            assert!(e1[i] <= e4[i] + 1e-15 && e4[i] <= phi[i] + 1e-15);
        }
    }

    #[test]
    fn mollify_keeps_constants() {
        let v = vec![2.5; 50];
        let m = mollify(&v, 0.1, 0.35).unwrap();
        assert!(m.iter().all(|x| (x - 2.5).abs() < 1e-12));
        assert!(matches!(mollify(&v, 0.1, 0.15), Err(Error::EpsBelowGrid { .. })));
    }

    #[test]
    fn lambda_is_capped() {
        let mut spec = ModelSpec::lq_killing();
        spec.lambda = Arc::new(|_, x| 3.0 * (-x).max(0.0));
        let fam = build_approx_family(&spec, 2).unwrap();
        assert_eq!((fam.spec.lambda)(0.0, -3.0), 2.0);
        assert_eq!((fam.spec.lambda)(0.0, -0.5), 1.5);
    }
}
