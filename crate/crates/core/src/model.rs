//! Model coefficients, built-in models and validation of the standing
//! assumptions.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violation};
use crate::grid::Grid;
use crate::measures::{s_map, Density2D, SubProb1D};

pub type TxFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type MeasureCoefFn = Arc<dyn Fn(f64, f64, &SubProb1D) -> f64 + Send + Sync>;
pub type MeasureDerivFn = Arc<dyn Fn(f64, f64, &SubProb1D, f64) -> f64 + Send + Sync>;
pub type FactorFn = Arc<dyn Fn(f64, f64, &mut [f64]) + Send + Sync>;
pub type ControlFn = Arc<dyn Fn(f64, f64, &[f64]) -> f64 + Send + Sync>;
pub type ControlGradFn = Arc<dyn Fn(f64, f64, &[f64], &mut [f64]) + Send + Sync>;
pub type TableFn = Arc<dyn Fn(f64, f64) -> Arc<Vec<f64>> + Send + Sync>;
pub type TerminalFn = Arc<dyn Fn(&SubProb1D) -> f64 + Send + Sync>;
pub type TerminalDerivFn = Arc<dyn Fn(&SubProb1D, f64) -> f64 + Send + Sync>;

/// A coefficient that may depend on the subprobability `ν`.
///
/// `NonLocal` carries the linear functional derivative
/// `(t, x, ν, x′) ↦ Dφ(t, x, ν)(x′)`.
#[derive(Clone)]
pub enum MeanFieldTerm {
    Local(TxFn),
    NonLocal { value: MeasureCoefFn, derivative: MeasureDerivFn },
}

impl MeanFieldTerm {
    pub fn zero() -> Self {
        MeanFieldTerm::Local(Arc::new(|_, _| 0.0))
    }

    pub fn local(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        MeanFieldTerm::Local(Arc::new(f))
    }

    pub fn non_local(
        value: impl Fn(f64, f64, &SubProb1D) -> f64 + Send + Sync + 'static,
        derivative: impl Fn(f64, f64, &SubProb1D, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        MeanFieldTerm::NonLocal { value: Arc::new(value), derivative: Arc::new(derivative) }
    }

    #[inline]
    pub fn eval(&self, t: f64, x: f64, nu: &SubProb1D) -> f64 {
        match self {
            MeanFieldTerm::Local(f) => f(t, x),
            MeanFieldTerm::NonLocal { value, .. } => value(t, x, nu),
        }
    }

    #[inline]
    pub fn derivative(&self, t: f64, x: f64, nu: &SubProb1D, xp: f64) -> f64 {
        match self {
            MeanFieldTerm::Local(_) => 0.0,
            MeanFieldTerm::NonLocal { derivative, .. } => derivative(t, x, nu, xp),
        }
    }

    pub fn is_local(&self) -> bool {
        matches!(self, MeanFieldTerm::Local(_))
    }
}

/// Control part of the drift, `g ↦ b₁(t, x, g)`.
#[derive(Clone)]
pub enum ControlDrift {
    /// `b₁ = factor(t, x) · g`.
    Linear(FactorFn),
    /// Arbitrary map, accepted only if validation finds it affine in `g`.
    General(ControlFn),
}

/// Control cost `f₁(t, x, g)`.
#[derive(Clone)]
pub enum ControlCost {
    /// `½ weight |g|²`.
    Quadratic { weight: f64 },
    General { value: ControlFn, gradient: Option<ControlGradFn> },
    /// Scalar control: `e^{-window x²} (T(t, x)(g) + quad g²)` with `T`
    /// convex and piecewise linear on a uniform control grid.
    Tabulated(TabulatedCost),
}

#[derive(Clone)]
pub struct TabulatedCost {
    pub g0: f64,
    pub dg: f64,
    pub quad: f64,
    pub window: f64,
    pub table: TableFn,
}

impl TabulatedCost {
    fn locate(&self, len: usize, g: f64) -> (usize, f64) {
        let s = ((g - self.g0) / self.dg).clamp(0.0, (len - 1) as f64);
        let i = (s.floor() as usize).min(len - 2);
        (i, s - i as f64)
    }

    fn weight(&self, x: f64) -> f64 {
        (-self.window * x * x).exp()
    }

    pub fn value(&self, t: f64, x: f64, g: f64) -> f64 {
        let tab = (self.table)(t, x);
        let (i, th) = self.locate(tab.len(), g);
        self.weight(x) * ((1.0 - th) * tab[i] + th * tab[i + 1] + self.quad * g * g)
    }

    pub fn gradient(&self, t: f64, x: f64, g: f64) -> f64 {
        let tab = (self.table)(t, x);
        let (i, _) = self.locate(tab.len(), g);
        self.weight(x) * ((tab[i + 1] - tab[i]) / self.dg + 2.0 * self.quad * g)
    }

    /// Leftmost minimizer over `[lo, hi]` of `a h + weight f₁(t, x, h)`.
    pub fn argmin(&self, t: f64, x: f64, a: f64, weight: f64, lo: f64, hi: f64) -> f64 {
        let c = weight * self.weight(x);
        if c <= 0.0 {
            return if a < 0.0 { hi } else { lo };
        }
        let tab = (self.table)(t, x);
        let r = a / c;
        let slope = |h: f64| {
            let (i, _) = self.locate(tab.len(), h);
            r + (tab[i + 1] - tab[i]) / self.dg + 2.0 * self.quad * h
        };
        if slope(lo) >= 0.0 {
            return lo;
        }
        let (mut l, mut u) = (lo, hi);
        if slope(hi) < 0.0 {
            return hi;
        }
        let tol = 1e-13 * (1.0 + lo.abs().max(hi.abs()));
        while u - l > tol {
            let m = 0.5 * (l + u);
            if slope(m) >= 0.0 {
                u = m;
            } else {
                l = m;
            }
        }
        u
    }
}

/// Terminal cost `ψ(ν)` and its linear functional derivative.
#[derive(Clone)]
pub struct TerminalCost {
    pub value: TerminalFn,
    pub derivative: TerminalDerivFn,
}

impl TerminalCost {
    pub fn zero() -> Self {
        TerminalCost { value: Arc::new(|_| 0.0), derivative: Arc::new(|_, _| 0.0) }
    }

    /// `ψ(ν) = ⟨ν, φ⟩`, so that `Dψ = φ`.
    pub fn linear(phi: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        let phi: ScalarFn = Arc::new(phi);
        let p2 = phi.clone();
        TerminalCost {
            value: Arc::new(move |nu| nu.pair_fn(|x| phi(x))),
            derivative: Arc::new(move |_, x| p2(x)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ControlBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::DegenerateRange("control box dimensions differ".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u) || !l.is_finite() || !u.is_finite()) {
            return Err(Error::DegenerateRange("control box bounds not ordered".into()));
        }
        Ok(ControlBox { lower, upper })
    }

    pub fn interval(lo: f64, hi: f64) -> Self {
        ControlBox { lower: vec![lo], upper: vec![hi] }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (l + u)).collect()
    }

    pub fn contains(&self, g: &[f64], tol: f64) -> bool {
        g.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (l, u))| *v >= l - tol && *v <= u + tol)
    }

    pub fn project(&self, g: &mut [f64]) {
        for (v, (l, u)) in g.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(*l, *u);
        }
    }

    pub fn is_singleton(&self) -> bool {
        self.lower.iter().zip(&self.upper).all(|(l, u)| l == u)
    }

    /// `max_{g ∈ G} |g_k|` per coordinate.
    pub fn abs_bound(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| l.abs().max(u.abs())).collect()
    }
}

#[derive(Clone)]
pub enum InitialIntensity {
    /// `Λ₀ = 0`.
    Zero,
    /// Density of `Λ₀` on `[0, ∞)`.
    Density(ScalarFn),
}

#[derive(Clone)]
pub enum InitialLaw {
    Product { position: ScalarFn, intensity: InitialIntensity },
    /// Joint density `ρ₀(x, y)`.
    Joint(TxFn),
}

/// Complete model: drift `b = b₀ + b₁`, volatilities, killing intensity,
/// costs, control set, horizon and initial law.
#[derive(Clone)]
pub struct ModelSpec {
    pub name: String,
    pub horizon: f64,
    pub b0: MeanFieldTerm,
    pub b1: ControlDrift,
    pub sigma: TxFn,
    pub sigma0: ScalarFn,
    pub lambda: TxFn,
    pub f0: MeanFieldTerm,
    pub f1: ControlCost,
    pub psi: TerminalCost,
    pub control_box: ControlBox,
    pub initial: InitialLaw,
    /// Lower bound `c` required for `σ²`.
    pub nondegeneracy: f64,
    /// x-range used for sampled checks and drift bounds.
    pub sample_domain: (f64, f64),
}

impl std::fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.name)
            .field("horizon", &self.horizon)
            .field("control_box", &self.control_box)
            .finish_non_exhaustive()
    }
}

impl ModelSpec {
    pub fn control_dim(&self) -> usize {
        self.control_box.dim()
    }

    /// Row vector `b1_factor(t, x)`.
    pub fn drift_factor(&self, t: f64, x: f64, out: &mut [f64]) {
        match &self.b1 {
            ControlDrift::Linear(f) => f(t, x, out),
            ControlDrift::General(b) => {
                let d = out.len();
                let mut e = vec![0.0; d];
                let base = b(t, x, &e);
                for k in 0..d {
                    e[k] = 1.0;
                    out[k] = b(t, x, &e) - base;
                    e[k] = 0.0;
                }
            }
        }
    }

    /// `b₁(t, x, 0)`, nonzero only for affine general drifts.
    pub fn drift_offset(&self, t: f64, x: f64) -> f64 {
        match &self.b1 {
            ControlDrift::Linear(_) => 0.0,
            ControlDrift::General(b) => b(t, x, &vec![0.0; self.control_dim()]),
        }
    }

    /// Control-independent drift, `b₀` plus any affine offset of `b₁`.
    #[inline]
    pub fn b0_value(&self, t: f64, x: f64, nu: &SubProb1D) -> f64 {
        self.b0.eval(t, x, nu) + self.drift_offset(t, x)
    }

    pub fn b1_value(&self, t: f64, x: f64, g: &[f64]) -> f64 {
        match &self.b1 {
            ControlDrift::Linear(f) => {
                let mut fac = vec![0.0; g.len()];
                f(t, x, &mut fac);
                dot(&fac, g)
            }
            ControlDrift::General(b) => b(t, x, g),
        }
    }

    pub fn f1_value(&self, t: f64, x: f64, g: &[f64]) -> f64 {
        match &self.f1 {
            ControlCost::Quadratic { weight } => 0.5 * weight * dot(g, g),
            ControlCost::General { value, .. } => value(t, x, g),
            ControlCost::Tabulated(tc) => tc.value(t, x, g[0]),
        }
    }

    /// `∂_g f₁`, by central differences when no gradient is supplied.
    pub fn f1_gradient(&self, t: f64, x: f64, g: &[f64], out: &mut [f64]) {
        match &self.f1 {
            ControlCost::Quadratic { weight } => {
                for (o, v) in out.iter_mut().zip(g) {
                    *o = weight * v;
                }
            }
            ControlCost::General { gradient: Some(grad), .. } => grad(t, x, g, out),
            ControlCost::Tabulated(tc) => out[0] = tc.gradient(t, x, g[0]),
            ControlCost::General { value, gradient: None } => {
                let mut h = g.to_vec();
                for k in 0..g.len() {
                    let e = 1e-6 * (1.0 + g[k].abs());
                    h[k] = g[k] + e;
                    let up = value(t, x, &h);
                    h[k] = g[k] - e;
                    let dn = value(t, x, &h);
                    h[k] = g[k];
                    out[k] = (up - dn) / (2.0 * e);
                }
            }
        }
    }

    pub fn quadratic_weight(&self) -> Option<f64> {
        match self.f1 {
            ControlCost::Quadratic { weight } => Some(weight),
            ControlCost::General { .. } | ControlCost::Tabulated(_) => None,
        }
    }

    /// Diffusion coefficient `a`. With a pathwise noise path the common
    /// noise acts as a shift and only `½σ²` remains.
    #[inline]
    pub fn diffusion(&self, t: f64, x: f64, pathwise: bool) -> f64 {
        let s = (self.sigma)(t, x);
        if pathwise {
            0.5 * s * s
        } else {
            let s0 = (self.sigma0)(t);
            0.5 * (s * s + s0 * s0)
        }
    }

    /// `f = f₀ + f₁`.
    pub fn running_cost(&self, t: f64, x: f64, nu: &SubProb1D, g: &[f64]) -> f64 {
        self.f0.eval(t, x, nu) + self.f1_value(t, x, g)
    }

    pub fn has_mean_field_derivatives(&self) -> bool {
        !(self.b0.is_local() && self.f0.is_local())
    }

    /// Initial joint density sampled on the grid, normalized to unit mass.
    pub fn initial_density_2d(&self, grid: &Grid) -> Density2D {
        let mut mu = Density2D::zeros(grid);
        let (nx, ny) = (mu.nx, mu.ny);
        match &self.initial {
            InitialLaw::Product { position, intensity } => {
                let px: Vec<f64> = (0..nx).map(|i| position(grid.x(i)).max(0.0)).collect();
                match intensity {
                    InitialIntensity::Zero => {
                        let j = grid.n_below;
                        for i in 0..nx {
                            mu.values[j * nx + i] = px[i];
                        }
                    }
                    InitialIntensity::Density(py) => {
                        for j in 0..ny {
                            let y = grid.y(j);
                            let w = if y < 0.0 { 0.0 } else { py(y).max(0.0) };
                            for i in 0..nx {
                                mu.values[j * nx + i] = px[i] * w;
                            }
                        }
                    }
                }
            }
            InitialLaw::Joint(rho) => {
                for j in 0..ny {
                    let y = grid.y(j);
                    if y < 0.0 {
                        continue;
                    }
                    for i in 0..nx {
                        mu.values[j * nx + i] = rho(grid.x(i), y).max(0.0);
                    }
                }
            }
        }
        let m = mu.mass();
        if m > 0.0 {
            mu.values.iter_mut().for_each(|v| *v /= m);
        }
        mu
    }

    /// `S(μ₀)` on the grid.
    pub fn initial_nu(&self, grid: &Grid) -> SubProb1D {
        s_map(&self.initial_density_2d(grid))
    }

    /// `sup_x |b₀(t, x, ν)|` over the grid nodes at the supplied measure.
    pub fn b0_bound(&self, grid: &Grid, t: f64, nu: &SubProb1D) -> f64 {
        (0..grid.nx)
            .map(|i| self.b0_value(t, grid.x(i), nu).abs())
            .fold(0.0, f64::max)
    }

    /// `sup_{x, g ∈ G} |b₁(t, x, g)|` over the grid nodes.
    pub fn b1_bound(&self, grid: &Grid, t: f64) -> f64 {
        let d = self.control_dim();
        let bound = self.control_box.abs_bound();
        let mut fac = vec![0.0; d];
        (0..grid.nx)
            .map(|i| {
                self.drift_factor(t, grid.x(i), &mut fac);
                fac.iter().zip(&bound).map(|(f, b)| f.abs() * b).sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    pub fn lambda_bound(&self, grid: &Grid) -> f64 {
        let mut m: f64 = 0.0;
        for n in 0..=grid.nt {
            let t = grid.t(n);
            for i in 0..grid.nx {
                m = m.max((self.lambda)(t, grid.x(i)));
            }
        }
        m
    }

    pub fn lq_killing() -> Self {
        ModelParams::lq_killing().build().expect("built-in parameters are valid")
    }

    pub fn constant_intensity(kappa: f64) -> Self {
        let mut p = ModelParams::constant_intensity();
        p.intensity = IntensityShape::Constant { rate: kappa };
        p.build().expect("built-in parameters are valid")
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Outcome of [`validate_model`] for a spec that passed.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub warnings: Vec<String>,
}

const N_SAMPLES: usize = 1000;

/// Samples the standing assumptions on `[0, T] × sample_domain × G`.
pub fn validate_model(spec: &ModelSpec) -> Result<ValidationReport> {
    let mut violations = Vec::new();
    let mut warnings = Vec::new();
    if !(spec.horizon > 0.0) {
        violations.push(Violation::InvalidParameter(format!("horizon {}", spec.horizon)));
    }
    if !(spec.nondegeneracy > 0.0) {
        violations.push(Violation::InvalidParameter(format!(
            "nondegeneracy constant {} must be positive",
            spec.nondegeneracy
        )));
    }
    let (xa, xb) = spec.sample_domain;
    if !(xa < xb) {
        violations.push(Violation::InvalidParameter("empty sample domain".into()));
        return Err(Error::Validation(violations));
    }
    let d = spec.control_dim();
    let (lo, hi) = (&spec.control_box.lower, &spec.control_box.upper);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let sample_g = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..d).map(|k| lo[k] + (hi[k] - lo[k]) * rng.random::<f64>()).collect()
    };
    let (mut nd, mut neg, mut cvx, mut lin) = (None, None, None, None);
    let (mut pos_right, mut zero_left) = (false, false);
    for s in 0..N_SAMPLES {
        // include the endpoints of the domain and horizon
        let (t, x) = match s {
            0 => (0.0, xa),
            1 => (spec.horizon, xb),
            _ => (spec.horizon * rng.random::<f64>(), xa + (xb - xa) * rng.random::<f64>()),
        };
        let sig = (spec.sigma)(t, x);
        if nd.is_none() && !(sig * sig >= spec.nondegeneracy) {
            nd = Some(Violation::NondegeneracyViolation { t, x, sigma2: sig * sig, c: spec.nondegeneracy });
        }
        let lam = (spec.lambda)(t, x);
        if neg.is_none() && !(lam >= 0.0) {
            neg = Some(Violation::NegativeIntensity { t, x, value: lam });
        }
        if x >= 0.0 && lam > 0.0 {
            pos_right = true;
        }
        if x < 0.0 && lam <= 0.0 {
            zero_left = true;
        }
        let g1 = sample_g(&mut rng);
        let g2 = sample_g(&mut rng);
        let mid: Vec<f64> = g1.iter().zip(&g2).map(|(a, b)| 0.5 * (a + b)).collect();
        let (f1, f2, fm) = (spec.f1_value(t, x, &g1), spec.f1_value(t, x, &g2), spec.f1_value(t, x, &mid));
        let gap = fm - 0.5 * (f1 + f2);
        let scale = 1.0 + f1.abs() + f2.abs();
        if cvx.is_none() && !(gap <= 1e-10 * scale) {
            cvx = Some(Violation::NonconvexControlCost { t, x, gap });
        }
        let sum: Vec<f64> = g1.iter().zip(&g2).map(|(a, b)| a + b).collect();
        let zero = vec![0.0; d];
        let defect = spec.b1_value(t, x, &sum) - spec.b1_value(t, x, &g1) - spec.b1_value(t, x, &g2)
            + spec.b1_value(t, x, &zero);
        let bscale = 1.0 + spec.b1_value(t, x, &sum).abs();
        if lin.is_none() && !(defect.abs() <= 1e-9 * bscale) {
            lin = Some(Violation::NonlinearDrift { t, x, defect });
        }
    }
    violations.extend([nd, neg, cvx, lin].into_iter().flatten());
    if pos_right {
        warnings.push("killing intensity is positive for some x >= 0".into());
    }
    if zero_left {
        warnings.push("killing intensity vanishes for some x < 0".into());
    }
    if let Err(msg) = check_initial_law(spec) {
        violations.push(Violation::InvalidInitialDensity(msg));
    }
    if violations.is_empty() {
        Ok(ValidationReport { warnings })
    } else {
        Err(Error::Validation(violations))
    }
}

fn check_initial_law(spec: &ModelSpec) -> std::result::Result<(), String> {
    let (xa, xb) = spec.sample_domain;
    let nxs = 4001;
    let hx = (xb - xa) / (nxs - 1) as f64;
    let xs: Vec<f64> = (0..nxs).map(|i| xa + i as f64 * hx).collect();
    let ymax = 40.0;
    let nys = 8001;
    let hy = ymax / (nys - 1) as f64;
    let integral_1d = |f: &dyn Fn(f64) -> f64, pts: &[f64], h: f64| -> std::result::Result<f64, String> {
        let mut s = 0.0;
        for (k, p) in pts.iter().enumerate() {
            let v = f(*p);
            if !(v >= 0.0) {
                return Err(format!("negative or non-finite initial density {v} at {p}"));
            }
            let w = if k == 0 || k + 1 == pts.len() { 0.5 } else { 1.0 };
            s += w * v * h;
        }
        Ok(s)
    };
    let ys: Vec<f64> = (0..nys).map(|j| j as f64 * hy).collect();
    match &spec.initial {
        InitialLaw::Product { position, intensity } => {
            let mx = integral_1d(&|x| position(x), &xs, hx)?;
            if (mx - 1.0).abs() > 1e-3 {
                return Err(format!("position density integrates to {mx}"));
            }
            if let InitialIntensity::Density(py) = intensity {
                let my = integral_1d(&|y| py(y), &ys, hy)?;
                if (my - 1.0).abs() > 1e-3 {
                    return Err(format!("intensity density integrates to {my}"));
                }
                for y in [-1.0, -0.5, -0.1, -1e-6] {
                    if py(y) != 0.0 {
                        return Err(format!("intensity density nonzero at y = {y}"));
                    }
                }
            }
        }
        InitialLaw::Joint(rho) => {
            let nys2 = 801;
            let hy2 = ymax / (nys2 - 1) as f64;
            let ys2: Vec<f64> = (0..nys2).map(|j| j as f64 * hy2).collect();
            let mut total = 0.0;
            for (k, y) in ys2.iter().enumerate() {
                let row = integral_1d(&|x| rho(x, *y), &xs[..], hx)?;
                let w = if k == 0 || k + 1 == ys2.len() { 0.5 } else { 1.0 };
                total += w * row * hy2;
            }
            if (total - 1.0).abs() > 1e-2 {
                return Err(format!("joint density integrates to {total}"));
            }
            for y in [-1.0, -0.1] {
                if xs.iter().step_by(100).any(|x| rho(*x, y) != 0.0) {
                    return Err(format!("joint density nonzero at y = {y}"));
                }
            }
        }
    }
    Ok(())
}

/// Shape of the killing intensity in the parametric family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IntensityShape {
    /// `λ = rate · 1_{x < 0}`.
    Step { rate: f64 },
    /// `λ = rate`.
    Constant { rate: f64 },
    /// `λ = slope · max(−x, 0)`.
    Linear { slope: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialIntensityParams {
    Zero,
    Uniform(f64),
    Exponential(f64),
}

/// Parametric family behind the built-in models:
///
/// * `b₀ = −θ x + β m₁(ν)`, `b₁ = g`
/// * `f₀ = ½ q (x − x̄)² + c₀ + γ x m₁(ν)`, `f₁ = ½ c g²`
/// * `ψ(ν) = ⟨ν, ½ w (x − x̄_T)²⟩`
/// * `X₀ ~ N(m, s²)`, `Λ₀` zero, uniform or exponential.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelParams {
    pub name: String,
    pub horizon: f64,
    pub sigma: f64,
    pub sigma0: f64,
    pub intensity: IntensityShape,
    pub control_lower: f64,
    pub control_upper: f64,
    pub control_weight: f64,
    pub mean_reversion: f64,
    pub drift_coupling: f64,
    pub state_weight: f64,
    pub state_target: f64,
    pub cost_offset: f64,
    pub cost_coupling: f64,
    pub terminal_weight: f64,
    pub terminal_target: f64,
    pub initial_mean: f64,
    pub initial_std: f64,
    pub initial_intensity: InitialIntensityParams,
    pub nondegeneracy: f64,
    pub sample_domain: [f64; 2],
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams::lq_killing()
    }
}

impl ModelParams {
    pub fn lq_killing() -> Self {
        ModelParams {
            name: "lq_killing".into(),
            horizon: 1.0,
            sigma: 1.0,
            sigma0: 0.0,
            intensity: IntensityShape::Step { rate: 1.0 },
            control_lower: -2.0,
            control_upper: 2.0,
            control_weight: 1.0,
            mean_reversion: 0.0,
            drift_coupling: 0.0,
            state_weight: 1.0,
            state_target: 0.0,
            cost_offset: 0.0,
            cost_coupling: 0.0,
            terminal_weight: 1.0,
            terminal_target: 0.5,
            initial_mean: -0.5,
            initial_std: 0.5,
            initial_intensity: InitialIntensityParams::Zero,
            nondegeneracy: 1e-3,
            sample_domain: [-4.0, 4.0],
        }
    }

    pub fn constant_intensity() -> Self {
        ModelParams {
            name: "constant_intensity".into(),
            intensity: IntensityShape::Constant { rate: 1.0 },
            control_lower: 0.0,
            control_upper: 0.0,
            control_weight: 0.0,
            state_weight: 0.0,
            cost_offset: 1.0,
            terminal_weight: 0.0,
            initial_mean: 0.0,
            ..ModelParams::lq_killing()
        }
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "lq_killing" => Some(ModelParams::lq_killing()),
            "constant_intensity" => Some(ModelParams::constant_intensity()),
            _ => None,
        }
    }

    pub fn build(&self) -> Result<ModelSpec> {
        let p = self.clone();
        if !(p.initial_std > 0.0) {
            return Err(Error::Config(format!("initial_std {} must be positive", p.initial_std)));
        }
        let control_box = ControlBox::new(vec![p.control_lower], vec![p.control_upper])?;
        let (theta, beta) = (p.mean_reversion, p.drift_coupling);
        let b0 = if beta == 0.0 {
            MeanFieldTerm::local(move |_, x| -theta * x)
        } else {
            MeanFieldTerm::non_local(
                move |_, x, nu| -theta * x + beta * nu.first_moment(),
                move |_, _, _, xp| beta * xp,
            )
        };
        let (q, xbar, c0, gamma) = (p.state_weight, p.state_target, p.cost_offset, p.cost_coupling);
        let f0 = if gamma == 0.0 {
            MeanFieldTerm::local(move |_, x| 0.5 * q * (x - xbar).powi(2) + c0)
        } else {
            MeanFieldTerm::non_local(
                move |_, x, nu| 0.5 * q * (x - xbar).powi(2) + c0 + gamma * x * nu.first_moment(),
                move |_, x, _, xp| gamma * x * xp,
            )
        };
        let (w, xt) = (p.terminal_weight, p.terminal_target);
        let psi = if w == 0.0 {
            TerminalCost::zero()
        } else {
            TerminalCost::linear(move |x| 0.5 * w * (x - xt).powi(2))
        };
        let lambda: TxFn = match p.intensity {
            IntensityShape::Step { rate } => Arc::new(move |_, x| if x < 0.0 { rate } else { 0.0 }),
            IntensityShape::Constant { rate } => Arc::new(move |_, _| rate),
            IntensityShape::Linear { slope } => Arc::new(move |_, x| slope * (-x).max(0.0)),
        };
        let (m, s) = (p.initial_mean, p.initial_std);
        let norm = 1.0 / (s * (2.0 * std::f64::consts::PI).sqrt());
        let position: ScalarFn = Arc::new(move |x| norm * (-0.5 * ((x - m) / s).powi(2)).exp());
        let intensity = match p.initial_intensity {
            InitialIntensityParams::Zero => InitialIntensity::Zero,
            InitialIntensityParams::Uniform(ymax) => {
                if !(ymax > 0.0) {
                    return Err(Error::Config("uniform intensity width must be positive".into()));
                }
                InitialIntensity::Density(Arc::new(move |y| {
                    if (0.0..=ymax).contains(&y) {
                        1.0 / ymax
                    } else {
                        0.0
                    }
                }))
            }
            InitialIntensityParams::Exponential(rate) => {
                if !(rate > 0.0) {
                    return Err(Error::Config("exponential intensity rate must be positive".into()));
                }
                InitialIntensity::Density(Arc::new(move |y| if y >= 0.0 { rate * (-rate * y).exp() } else { 0.0 }))
            }
        };
        let (sig, sig0) = (p.sigma, p.sigma0);
        Ok(ModelSpec {
            name: p.name.clone(),
            horizon: p.horizon,
            b0,
            b1: ControlDrift::Linear(Arc::new(|_, _, out: &mut [f64]| out[0] = 1.0)),
            sigma: Arc::new(move |_, _| sig),
            sigma0: Arc::new(move |_| sig0),
            lambda,
            f0,
            f1: ControlCost::Quadratic { weight: p.control_weight },
            psi,
            control_box,
            initial: InitialLaw::Product { position, intensity },
            nondegeneracy: p.nondegeneracy,
            sample_domain: (p.sample_domain[0], p.sample_domain[1]),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lq_killing_is_valid() {
        let r = validate_model(&ModelSpec::lq_killing()).unwrap();
        assert!(r.warnings.is_empty(), "{:?}", r.warnings);
    }

    #[test]
    fn constant_intensity_warns_but_passes() {
        let r = validate_model(&ModelSpec::constant_intensity(1.0)).unwrap();
        assert!(!r.warnings.is_empty());
    }

    #[test]
    fn zero_volatility_rejected() {
        let mut s = ModelSpec::lq_killing();
        s.sigma = Arc::new(|_, _| 0.0);
        match validate_model(&s) {
            Err(Error::Validation(v)) => {
                assert!(v.iter().any(|e| matches!(e, Violation::NondegeneracyViolation { .. })))
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn negative_intensity_rejected() {
        let mut s = ModelSpec::lq_killing();
        s.lambda = Arc::new(|_, _| -1.0);
        match validate_model(&s) {
            Err(Error::Validation(v)) => {
                assert!(v.iter().any(|e| matches!(e, Violation::NegativeIntensity { .. })))
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn nonconvex_cost_and_nonlinear_drift_rejected() {
        let mut s = ModelSpec::lq_killing();
        s.f1 = ControlCost::General { value: Arc::new(|_, _, g| -g[0] * g[0]), gradient: None };
        s.b1 = ControlDrift::General(Arc::new(|_, _, g| g[0] * g[0]));
        match validate_model(&s) {
            Err(Error::Validation(v)) => {
                assert!(v.iter().any(|e| matches!(e, Violation::NonconvexControlCost { .. })));
                assert!(v.iter().any(|e| matches!(e, Violation::NonlinearDrift { .. })));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn affine_general_drift_accepted() {
        let mut s = ModelSpec::lq_killing();
        s.b1 = ControlDrift::General(Arc::new(|_, x, g| 0.3 + x.sin() * g[0]));
        validate_model(&s).unwrap();
        let mut f = [0.0];
        s.drift_factor(0.0, 1.0, &mut f);
        assert!((f[0] - 1f64.sin()).abs() < 1e-12);
        assert!((s.drift_offset(0.0, 1.0) - 0.3).abs() < 1e-15);
    }
}
