//! Python bindings for `pnp-core`.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use pnp_core::cli::FileConfig;
use pnp_core::runner::{self, Beta1, DtRule, MethodKind, RunConfig};
use pnp_core::{gamma_of_beta1, PnpError, TimeOrder};

fn solver_err(e: PnpError) -> PyErr {
    match e {
        PnpError::NewtonDiverged { .. } | PnpError::SafeguardExhausted { .. } | PnpError::Singular(_) => {
            PyRuntimeError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse_method(method: &str) -> PyResult<MethodKind> {
    match method {
        "fem" => Ok(MethodKind::Fem),
        "ddg" => Ok(MethodKind::Ddg),
        other => Err(PyValueError::new_err(format!("unknown method {other:?}, expected \"fem\" or \"ddg\""))),
    }
}

#[allow(clippy::too_many_arguments)]
fn build_config(
    problem: &str,
    method: &str,
    k: usize,
    n: usize,
    order: u8,
    dt: Option<f64>,
    dt_coefficient: f64,
    dt_exponent: f64,
    end_time: Option<f64>,
    beta0: f64,
    beta1: Option<f64>,
    limiter: bool,
) -> PyResult<RunConfig> {
    let mut cfg = RunConfig::new(problem, parse_method(method)?, k, n);
    cfg.order = match order {
        1 => TimeOrder::First,
        2 => TimeOrder::Second,
        o => return Err(PyValueError::new_err(format!("order must be 1 or 2, got {o}"))),
    };
    cfg.dt = match dt {
        Some(dt) => DtRule::Absolute(dt),
        None => DtRule::Power { coefficient: dt_coefficient, exponent: dt_exponent },
    };
    cfg.end_time = end_time;
    cfg.beta0 = beta0;
    cfg.beta1 = beta1.map_or(Beta1::Superconvergent, Beta1::Value);
    cfg.limiter = limiter;
    cfg.validate().map_err(solver_err)?;
    Ok(cfg)
}

/// Γ(β1) for polynomial degree `k`.
#[pyfunction]
fn gamma(k: usize, beta1: f64) -> PyResult<f64> {
    if k == 0 {
        return Err(PyValueError::new_err("k must be at least 1"));
    }
    Ok(gamma_of_beta1(k, beta1))
}

/// Runs the oracle-based property suites; returns `(name, passed, detail)`.
#[pyfunction]
#[pyo3(signature = (seed=0))]
fn run_checks(py: Python<'_>, seed: u64) -> Vec<(String, bool, String)> {
    py.allow_threads(|| pnp_core::checks::run_all(seed).into_iter().map(|r| (r.name, r.passed, r.detail)).collect())
}

/// A time-dependent run of one problem.
#[pyclass(unsendable)]
struct Simulation {
    inner: runner::Simulation,
}

#[pymethods]
impl Simulation {
    #[new]
    #[pyo3(signature = (problem, method="ddg", k=1, n=10, order=1, dt=None, dt_coefficient=0.01, dt_exponent=3.0, end_time=None, beta0=4.0, beta1=None, limiter=false))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        problem: &str,
        method: &str,
        k: usize,
        n: usize,
        order: u8,
        dt: Option<f64>,
        dt_coefficient: f64,
        dt_exponent: f64,
        end_time: Option<f64>,
        beta0: f64,
        beta1: Option<f64>,
        limiter: bool,
    ) -> PyResult<Self> {
        let cfg = build_config(problem, method, k, n, order, dt, dt_coefficient, dt_exponent, end_time, beta0, beta1, limiter)?;
        Ok(Self { inner: runner::Simulation::new(cfg).map_err(solver_err)? })
    }

    /// Builds a run from the CLI's TOML configuration text.
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        let cfg = FileConfig::parse(text)
            .and_then(|c| c.to_run_config())
            .map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(Self { inner: runner::Simulation::new(cfg).map_err(solver_err)? })
    }

    #[getter]
    fn t(&self) -> f64 {
        self.inner.state().t
    }

    #[getter]
    fn steps_taken(&self) -> usize {
        self.inner.state().step
    }

    #[getter]
    fn n_steps(&self) -> usize {
        self.inner.n_steps()
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.inner.dt()
    }

    #[getter]
    fn finished(&self) -> bool {
        self.inner.is_finished()
    }

    #[getter]
    fn log(&self) -> String {
        self.inner.log().to_string()
    }

    /// Advances one step and returns the Newton report.
    fn step<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let r = self.inner.step().map_err(solver_err)?;
        let d = PyDict::new(py);
        d.set_item("iterations", r.iterations)?;
        d.set_item("residual", r.residual)?;
        d.set_item("min_c", r.min_c)?;
        d.set_item("limiter_hits", r.limiter_hits)?;
        d.set_item("mobility_floored", r.mobility_floored)?;
        d.set_item("dissipation", r.dissipation)?;
        Ok(d)
    }

    fn run(&mut self) -> PyResult<()> {
        self.inner.run().map_err(solver_err)
    }

    fn run_until(&mut self, t: f64) -> PyResult<()> {
        self.inner.run_until(t).map_err(solver_err)
    }

    /// Collocation values of each concentration.
    fn concentrations(&self) -> Vec<Vec<f64>> {
        self.inner.state().c.iter().map(|c| c.values().to_vec()).collect()
    }

    fn potential(&self) -> Vec<f64> {
        self.inner.state().phi.values().to_vec()
    }

    /// Collocation point coordinates; `y` is 0 in 1D.
    fn points(&self) -> Vec<(f64, f64)> {
        self.inner.space().layout().points().iter().map(|p| (p[0], p[1])).collect()
    }

    /// `(variable, norm, value)` against the exact solution, if any.
    fn errors(&self) -> PyResult<Vec<(String, String, f64)>> {
        Ok(self
            .inner
            .errors()
            .map_err(solver_err)?
            .into_iter()
            .map(|e| (e.variable, e.norm.to_string(), e.value))
            .collect())
    }

    fn monitors<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let m = self.inner.monitors();
        let d = PyDict::new(py);
        d.set_item("initial_mass", m.initial_mass.clone())?;
        d.set_item("max_mass_drift", m.max_mass_drift.clone())?;
        d.set_item("max_energy_increase", m.max_energy_increase)?;
        d.set_item("max_dissipation_residual", m.max_dissipation_residual)?;
        d.set_item("min_cell_average", m.min_cell_average.clone())?;
        d.set_item("min_node", m.min_node.clone())?;
        d.set_item("max_newton_iterations", m.max_newton_iterations)?;
        d.set_item("limiter_hits", m.limiter_hits)?;
        d.set_item("mobility_floored", m.mobility_floored)?;
        Ok(d)
    }
}

/// Convergence sweep over doubling `ns`; returns `{n, metrics, errors, rates}`.
#[pyfunction]
#[pyo3(signature = (problem, ns, method="ddg", k=1, order=1, dt_coefficient=0.01, dt_exponent=3.0, beta0=4.0, beta1=None))]
#[allow(clippy::too_many_arguments)]
fn sweep<'py>(
    py: Python<'py>,
    problem: &str,
    ns: Vec<usize>,
    method: &str,
    k: usize,
    order: u8,
    dt_coefficient: f64,
    dt_exponent: f64,
    beta0: f64,
    beta1: Option<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let first = *ns.first().ok_or_else(|| PyValueError::new_err("empty refinement list"))?;
    let cfg = build_config(problem, method, k, first, order, None, dt_coefficient, dt_exponent, None, beta0, beta1, false)?;
    let out = py.allow_threads(|| runner::sweep(&cfg, &ns)).map_err(solver_err)?;
    if let Some((n, e)) = out.failures.into_iter().next() {
        return Err(PyRuntimeError::new_err(format!("run at N = {n} failed: {e}")));
    }
    let d = PyDict::new(py);
    d.set_item("n", out.table.n)?;
    d.set_item("metrics", out.table.metrics)?;
    d.set_item("errors", out.table.errors)?;
    d.set_item("rates", out.table.rates)?;
    Ok(d)
}

#[pymodule]
fn pnp(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Simulation>()?;
    m.add_function(wrap_pyfunction!(gamma, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(run_checks, m)?)?;
    Ok(())
}
