//! Python bindings: models, grids, the control solver, forward and backward
//! solves, particles and the subprobability metrics.

use std::cell::RefCell;

use mfkill_core::control::{terminal_derivative, terminal_derivative_2d};
use mfkill_core::model::ModelParams;
use mfkill_core::{self as core, BackwardMode, BackwardOptions, ForwardOutput, MfcOptions, Route};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: core::Error) -> PyErr {
    match e {
        core::Error::FixedPointDiverged { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn route(name: &str) -> PyResult<Route> {
    match name {
        "reduced" => Ok(Route::Reduced),
        "joint" => Ok(Route::Joint),
        _ => Err(PyValueError::new_err(format!("unknown route {name:?}, expected \"reduced\" or \"joint\""))),
    }
}

/// Model of the parametric family, built from a named preset and keyword
/// overrides.
#[pyclass(frozen, module = "mfkill")]
struct Model {
    params: ModelParams,
    spec: core::ModelSpec,
}

#[pymethods]
impl Model {
    #[new]
    #[pyo3(signature = (preset = "lq_killing", **overrides))]
    fn new(py: Python<'_>, preset: &str, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let base = ModelParams::builtin(preset).ok_or_else(|| PyValueError::new_err(format!("unknown preset {preset:?}")))?;
        let params = match overrides {
            Some(d) if !d.is_empty() => {
                let text: String = py.import("json")?.call_method1("dumps", (d,))?.extract()?;
                let extra: serde_json::Value =
                    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))?;
                let mut merged = serde_json::to_value(&base).map_err(|e| PyValueError::new_err(e.to_string()))?;
                if let (Some(m), Some(x)) = (merged.as_object_mut(), extra.as_object()) {
                    for (k, v) in x {
                        m.insert(k.clone(), v.clone());
                    }
                }
                serde_json::from_value(merged).map_err(|e| PyValueError::new_err(e.to_string()))?
            }
            _ => base,
        };
        let spec = params.build().map_err(err)?;
        core::validate_model(&spec).map_err(err)?;
        Ok(Model { params, spec })
    }

    /// Parameters as a JSON string.
    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.params).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[getter]
    fn name(&self) -> String {
        self.params.name.clone()
    }

    #[getter]
    fn horizon(&self) -> f64 {
        self.params.horizon
    }

    fn __repr__(&self) -> String {
        format!("Model({:?})", self.params.name)
    }
}

#[pyclass(frozen, module = "mfkill")]
struct Grid {
    inner: core::Grid,
}

#[pymethods]
impl Grid {
    #[new]
    #[pyo3(signature = (x_min, x_max, nx, y_max, ny, nt, extension = 0.0, horizon = 1.0))]
    #[allow(clippy::too_many_arguments)]
    fn new(x_min: f64, x_max: f64, nx: usize, y_max: f64, ny: usize, nt: usize, extension: f64, horizon: f64) -> PyResult<Self> {
        Ok(Grid { inner: core::build_grid(x_min, x_max, nx, y_max, ny, nt, extension, horizon).map_err(err)? })
    }

    fn x_nodes(&self) -> Vec<f64> {
        self.inner.x_nodes()
    }

    fn y_nodes(&self) -> Vec<f64> {
        self.inner.y_nodes()
    }

    fn t(&self, n: usize) -> f64 {
        self.inner.t(n)
    }

    #[getter]
    fn nx(&self) -> usize {
        self.inner.nx
    }

    #[getter]
    fn ny(&self) -> usize {
        self.inner.ny_total()
    }

    #[getter]
    fn nt(&self) -> usize {
        self.inner.nt
    }

    #[getter]
    fn dx(&self) -> f64 {
        self.inner.dx()
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.inner.dt()
    }

    fn refined(&self, times: usize) -> Grid {
        Grid { inner: self.inner.refined(times) }
    }

    fn __repr__(&self) -> String {
        let g = &self.inner;
        format!("Grid(nx={}, ny={}, nt={}, x=[{}, {}], y_max={})", g.nx, g.ny_total(), g.nt, g.x_min, g.x_max, g.y_max)
    }
}

/// Subprobability density on a uniform x grid.
#[pyclass(frozen, skip_from_py_object, module = "mfkill")]
#[derive(Clone)]
struct SubProb {
    inner: core::SubProb1D,
}

#[pymethods]
impl SubProb {
    #[new]
    fn new(x0: f64, dx: f64, values: Vec<f64>) -> PyResult<Self> {
        Ok(SubProb { inner: core::SubProb1D::new(x0, dx, values).map_err(err)? })
    }

    #[getter]
    fn values(&self) -> Vec<f64> {
        self.inner.values.clone()
    }

    #[getter]
    fn x0(&self) -> f64 {
        self.inner.x0
    }

    #[getter]
    fn dx(&self) -> f64 {
        self.inner.dx
    }

    fn mass(&self) -> f64 {
        self.inner.mass()
    }

    fn mean(&self) -> f64 {
        self.inner.mean()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("SubProb(len={}, mass={:.6})", self.inner.len(), self.inner.mass())
    }
}

fn wrap(v: &[core::SubProb1D]) -> Vec<SubProb> {
    v.iter().map(|s| SubProb { inner: s.clone() }).collect()
}

/// Feedback control on the time-space grid.
#[pyclass(frozen, skip_from_py_object, module = "mfkill")]
#[derive(Clone)]
struct Feedback {
    inner: core::FeedbackControl,
}

#[pymethods]
impl Feedback {
    /// Constant feedback; `joint` selects the (x, y) layout.
    #[staticmethod]
    #[pyo3(signature = (grid, value, joint = false))]
    fn constant(grid: &Grid, value: f64, joint: bool) -> Self {
        Feedback { inner: core::FeedbackControl::constant(&grid.inner, joint, &[value]) }
    }

    /// Feedback from a Python callable `f(t, x, y) -> float`.
    #[staticmethod]
    #[pyo3(signature = (grid, f, joint = false))]
    fn from_callable(grid: &Grid, f: &Bound<'_, PyAny>, joint: bool) -> PyResult<Self> {
        let failure = RefCell::new(None);
        let inner = core::FeedbackControl::from_fn(&grid.inner, joint, 1, |t, x, y, o| {
            if failure.borrow().is_some() {
                return;
            }
            match f.call1((t, x, y)).and_then(|v| v.extract::<f64>()) {
                Ok(v) => o[0] = v,
                Err(e) => *failure.borrow_mut() = Some(e),
            }
        });
        match failure.into_inner() {
            Some(e) => Err(e),
            None => Ok(Feedback { inner }),
        }
    }

    /// Values at time step `n`, one list per y row.
    fn at_step(&self, n: usize) -> PyResult<Vec<Vec<f64>>> {
        if n >= self.inner.nt1 {
            return Err(PyValueError::new_err(format!("time step {n} out of range")));
        }
        Ok((0..self.inner.ny).map(|j| self.inner.slice(n, j).to_vec()).collect())
    }

    fn sup_norm(&self) -> f64 {
        self.inner.sup_norm()
    }

    fn intensity_independence(&self) -> f64 {
        core::intensity_independence_diag(&self.inner)
    }

    #[getter]
    fn joint(&self) -> bool {
        self.inner.is_two_d()
    }
}

#[pyclass(frozen, module = "mfkill")]
struct Solution {
    inner: core::MfcSolution,
}

#[pymethods]
impl Solution {
    #[getter]
    fn status(&self) -> String {
        format!("{:?}", self.inner.status).to_lowercase()
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.status == core::MfcStatus::Converged
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.inner.iterations
    }

    #[getter]
    fn residual_trace(&self) -> Vec<f64> {
        self.inner.residual_trace.clone()
    }

    #[getter]
    fn cost_trace(&self) -> Vec<f64> {
        self.inner.cost_trace.clone()
    }

    #[getter]
    fn cost(&self) -> f64 {
        self.inner.cost.total
    }

    #[getter]
    fn control(&self) -> Feedback {
        Feedback { inner: self.inner.control.clone() }
    }

    #[getter]
    fn nu(&self) -> Vec<SubProb> {
        wrap(self.inner.forward.nu())
    }

    fn masses(&self) -> Vec<f64> {
        self.inner.forward.masses()
    }

    /// Backward solution at time step `n`, flattened row by row.
    fn value(&self, n: usize) -> PyResult<Vec<f64>> {
        self.inner
            .backward
            .values
            .get(n)
            .cloned()
            .ok_or_else(|| PyValueError::new_err(format!("time step {n} out of range")))
    }

    /// Residual of the minimum principle; joint route only.
    #[pyo3(signature = (model, mu_floor = core::MU_FLOOR))]
    fn smp_residual(&self, model: &Model, mu_floor: f64) -> PyResult<f64> {
        match &self.inner.forward {
            ForwardOutput::Joint(f) => {
                core::smp_residual(&model.spec, &self.inner.control, f, &self.inner.backward, mu_floor).map_err(err)
            }
            ForwardOutput::Reduced(_) => Err(PyValueError::new_err("the residual needs a joint-route solution")),
        }
    }
}

#[pyfunction]
#[pyo3(signature = (model, grid, route = "reduced", tol = 1e-6, max_iter = 200, damping = 0.5, noise_seed = None))]
#[allow(clippy::too_many_arguments)]
fn solve_mfc(
    py: Python<'_>,
    model: &Model,
    grid: &Grid,
    route: &str,
    tol: f64,
    max_iter: usize,
    damping: f64,
    noise_seed: Option<u64>,
) -> PyResult<Solution> {
    let opts = MfcOptions { route: self::route(route)?, tol_pi: tol, max_iter, damping, noise_seed, ..Default::default() };
    let inner = py.detach(|| core::solve_mfc(&model.spec, &grid.inner, None, &opts)).map_err(err)?;
    Ok(Solution { inner })
}

/// Forward trajectory of `ν`; the joint solve is used when the feedback is
/// two-dimensional.
#[pyfunction]
#[pyo3(signature = (model, grid, control, noise_seed = None))]
fn solve_forward(model: &Model, grid: &Grid, control: &Feedback, noise_seed: Option<u64>) -> PyResult<Vec<SubProb>> {
    let noise = noise_seed.map(|s| core::CommonNoisePath::for_grid(s, &grid.inner));
    let nu = if control.inner.is_two_d() {
        core::solve_forward_2d(&model.spec, &grid.inner, &control.inner, noise.as_ref()).map_err(err)?.nu
    } else {
        core::solve_forward_1d(&model.spec, &grid.inner, &control.inner, noise.as_ref()).map_err(err)?.nu
    };
    Ok(wrap(&nu))
}

/// Backward solution for a feedback, with the terminal data of the model:
/// the semilinear equation on the line, or the adjoint on the half-plane.
#[pyfunction]
fn solve_backward(model: &Model, grid: &Grid, control: &Feedback) -> PyResult<Vec<Vec<f64>>> {
    let (spec, g) = (&model.spec, &grid.inner);
    let opts = BackwardOptions::default();
    let sol = if control.inner.is_two_d() {
        let fwd = core::solve_forward_2d(spec, g, &control.inner, None).map_err(err)?;
        let term = terminal_derivative_2d(spec, g, &fwd.nu[g.nt]);
        core::solve_backward_2d(spec, g, &fwd, BackwardMode::Adjoint(&control.inner), &term, &opts).map_err(err)?
    } else {
        let fwd = core::solve_forward_1d(spec, g, &control.inner, None).map_err(err)?;
        let term = terminal_derivative(spec, g, &fwd.nu[g.nt]);
        core::solve_backward_1d(spec, g, &fwd.nu, &term, None, &opts).map_err(err)?
    };
    Ok(sol.values)
}

/// Particle simulation driven by its own empirical measure. Returns the
/// final positions, intensities and alive flags with the cost estimate.
#[pyfunction]
#[pyo3(signature = (model, grid, control, n_particles, seed, soft = true))]
fn simulate_particles<'py>(
    py: Python<'py>,
    model: &Model,
    grid: &Grid,
    control: &Feedback,
    n_particles: usize,
    seed: u64,
    soft: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let traj = py
        .detach(|| {
            core::simulate_particles(
                &model.spec,
                &grid.inner,
                &control.inner,
                n_particles,
                Some(seed),
                None,
                core::Coupling::Empirical,
                grid.inner.nt,
            )
        })
        .map_err(err)?;
    let mode = if soft { core::WeightMode::Soft } else { core::WeightMode::Hard };
    let (cost, half_width) = core::estimate_cost_mc(&model.spec, &traj, mode);
    let last = traj.final_state();
    let out = PyDict::new(py);
    out.set_item("x", last.x.clone())?;
    out.set_item("lambda", last.lambda.clone())?;
    out.set_item("alive", last.alive.clone())?;
    out.set_item("alive_fraction", traj.alive_fraction.clone())?;
    out.set_item("mean_weight", traj.mean_weight.clone())?;
    out.set_item("nu", SubProb { inner: core::empirical_subprob(last, mode, &grid.inner) })?;
    out.set_item("cost", cost)?;
    out.set_item("cost_half_width", half_width)?;
    Ok(out)
}

#[pyfunction]
#[pyo3(signature = (a, b, p = 1))]
fn metric_dp(a: &SubProb, b: &SubProb, p: u32) -> PyResult<f64> {
    core::metric_dp(&a.inner, &b.inner, p).map_err(err)
}

#[pyfunction]
fn metric_d0(a: &SubProb, b: &SubProb) -> PyResult<f64> {
    core::metric_d0(&a.inner, &b.inner).map_err(err)
}

#[pyfunction]
fn truncate_measure(a: &SubProb, n: usize) -> SubProb {
    SubProb { inner: core::truncate_measure(&a.inner, n) }
}

#[pyfunction]
fn inf_convolution(grid: Vec<f64>, phi: Vec<f64>, n: f64) -> PyResult<Vec<f64>> {
    core::inf_convolution(&grid, &phi, n).map_err(err)
}

#[pyfunction]
fn mollify(values: Vec<f64>, dx: f64, eps: f64) -> PyResult<Vec<f64>> {
    core::mollify(&values, dx, eps).map_err(err)
}

#[pymodule]
fn mfkill(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_class::<Grid>()?;
    m.add_class::<SubProb>()?;
    m.add_class::<Feedback>()?;
    m.add_class::<Solution>()?;
    m.add_function(wrap_pyfunction!(solve_mfc, m)?)?;
    m.add_function(wrap_pyfunction!(solve_forward, m)?)?;
    m.add_function(wrap_pyfunction!(solve_backward, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_particles, m)?)?;
    m.add_function(wrap_pyfunction!(metric_dp, m)?)?;
    m.add_function(wrap_pyfunction!(metric_d0, m)?)?;
    m.add_function(wrap_pyfunction!(truncate_measure, m)?)?;
    m.add_function(wrap_pyfunction!(inf_convolution, m)?)?;
    m.add_function(wrap_pyfunction!(mollify, m)?)?;
    Ok(())
}
