//! Python bindings. Every solver takes the market, grid and intensity objects
//! defined here and returns plain floats, lists or small result classes.

use std::cell::RefCell;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ratput_core as core;
use ratput_core::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(_) => PyOSError::new_err(e.to_string()),
        Error::LinearSolve { .. }
        | Error::NewtonDivergence { .. }
        | Error::PsorDivergence { .. }
        | Error::BoundViolation { .. }
        | Error::Sweep { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

#[pyclass(name = "MarketParams", frozen)]
pub struct PyMarketParams(core::MarketParams);

#[pymethods]
impl PyMarketParams {
    #[new]
    #[pyo3(signature = (r=0.05, sigma=0.2, strike=100.0, expiry=1.0))]
    fn new(r: f64, sigma: f64, strike: f64, expiry: f64) -> PyResult<Self> {
        core::MarketParams::new(r, sigma, strike, expiry).map(Self).map_err(to_py)
    }

    #[getter]
    fn r(&self) -> f64 {
        self.0.r
    }
    #[getter]
    fn sigma(&self) -> f64 {
        self.0.sigma
    }
    #[getter]
    fn strike(&self) -> f64 {
        self.0.strike
    }
    #[getter]
    fn expiry(&self) -> f64 {
        self.0.expiry
    }

    fn payoff(&self, s: f64) -> f64 {
        self.0.payoff(s)
    }

    fn __repr__(&self) -> String {
        let m = &self.0;
        format!("MarketParams(r={}, sigma={}, strike={}, expiry={})", m.r, m.sigma, m.strike, m.expiry)
    }
}

#[pyclass(name = "GridSpec", frozen)]
pub struct PyGridSpec(core::GridSpec);

#[pymethods]
impl PyGridSpec {
    #[new]
    #[pyo3(signature = (n_space, n_time, log_half_width, anchor_spot))]
    fn new(n_space: usize, n_time: usize, log_half_width: f64, anchor_spot: f64) -> PyResult<Self> {
        core::GridSpec::new(n_space, n_time, log_half_width, anchor_spot).map(Self).map_err(to_py)
    }

    /// Default resolution with the domain sized to the market's volatility.
    #[staticmethod]
    #[pyo3(signature = (market, anchor_spot=100.0))]
    fn default_for(market: &PyMarketParams, anchor_spot: f64) -> PyResult<Self> {
        core::GridSpec::default_for(&market.0, anchor_spot).map(Self).map_err(to_py)
    }

    fn refined(&self) -> Self {
        Self(self.0.refined())
    }

    #[getter]
    fn n_space(&self) -> usize {
        self.0.n_space
    }
    #[getter]
    fn n_time(&self) -> usize {
        self.0.n_time
    }
    #[getter]
    fn log_half_width(&self) -> f64 {
        self.0.log_half_width
    }
    #[getter]
    fn anchor_spot(&self) -> f64 {
        self.0.anchor_spot
    }

    fn __repr__(&self) -> String {
        let g = &self.0;
        format!(
            "GridSpec(n_space={}, n_time={}, log_half_width={}, anchor_spot={})",
            g.n_space, g.n_time, g.log_half_width, g.anchor_spot
        )
    }
}

#[pyclass(name = "IntensityFamily", frozen)]
pub struct PyIntensityFamily(core::IntensityFamily);

#[pymethods]
impl PyIntensityFamily {
    #[staticmethod]
    fn exponential(theta: f64) -> PyResult<Self> {
        core::IntensityFamily::exponential(theta).map(Self).map_err(to_py)
    }

    #[staticmethod]
    fn constant(level: f64) -> PyResult<Self> {
        core::IntensityFamily::constant(level).map(Self).map_err(to_py)
    }

    #[staticmethod]
    fn capped_exponential(theta: f64, cap: f64) -> PyResult<Self> {
        core::IntensityFamily::capped_exponential(theta, cap).map(Self).map_err(to_py)
    }

    fn with_theta(&self, theta: f64) -> PyResult<Self> {
        self.0.with_theta(theta).map(Self).map_err(to_py)
    }

    /// Intensity at exercise gap `x`.
    fn __call__(&self, x: f64) -> f64 {
        core::eval_f(&self.0, x)
    }

    /// Monotone envelope at `x`.
    fn nu(&self, x: f64) -> f64 {
        core::eval_nu(&self.0, x)
    }

    #[getter]
    fn kind(&self) -> &'static str {
        match self.0.kind {
            core::IntensityKind::Exponential => "exp",
            core::IntensityKind::Constant => "const",
            core::IntensityKind::CappedExponential => "capped_exp",
        }
    }
    #[getter]
    fn theta(&self) -> f64 {
        self.0.theta
    }

    fn __repr__(&self) -> String {
        let f = &self.0;
        format!("IntensityFamily(kind={:?}, theta={}, level={}, cap={})", self.kind(), f.theta, f.level, f.cap)
    }
}

#[pyclass(name = "SolverConfig", frozen)]
pub struct PySolverConfig(core::SolverConfig);

#[pymethods]
impl PySolverConfig {
    #[new]
    #[pyo3(signature = (strike=100.0, newton_tol=None, newton_max_iter=None, startup_half_steps=None))]
    fn new(strike: f64, newton_tol: Option<f64>, newton_max_iter: Option<usize>, startup_half_steps: Option<usize>) -> PyResult<Self> {
        let mut cfg = core::SolverConfig::for_strike(strike);
        if let Some(t) = newton_tol {
            cfg.newton_tol = t;
        }
        if let Some(n) = newton_max_iter {
            cfg.newton_max_iter = n;
        }
        if let Some(h) = startup_half_steps {
            cfg.startup_half_steps = h;
        }
        cfg.validate().map_err(to_py)?;
        Ok(Self(cfg))
    }
}

fn solver_or_default(solver: Option<&PySolverConfig>, market: &core::MarketParams) -> core::SolverConfig {
    solver.map_or_else(|| core::SolverConfig::for_strike(market.strike), |s| s.0)
}

#[pyclass(name = "PriceSurface", frozen)]
pub struct PyPriceSurface(core::PriceSurface);

#[pymethods]
impl PyPriceSurface {
    /// Value at the anchor spot at time zero.
    fn anchor_value(&self) -> f64 {
        self.0.anchor_value()
    }

    fn interpolate(&self, t: f64, s: f64) -> PyResult<f64> {
        self.0.interpolate(t, s).map_err(to_py)
    }

    fn spots(&self) -> Vec<f64> {
        self.0.spots().to_vec()
    }

    fn times(&self) -> Vec<f64> {
        self.0.times().to_vec()
    }

    /// Values as one list per time row, earliest time first.
    fn values(&self) -> Vec<Vec<f64>> {
        (0..self.0.times().len()).map(|i| self.0.row(i).to_vec()).collect()
    }

    fn to_csv(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        self.0.write_csv(&mut buf).map_err(to_py)?;
        Ok(String::from_utf8(buf).expect("csv output is ascii"))
    }
}

#[pyclass(name = "RationalSolution", frozen)]
pub struct PyRationalSolution {
    #[pyo3(get)]
    surface: Py<PyPriceSurface>,
    #[pyo3(get)]
    newton_iters_max: usize,
    #[pyo3(get)]
    newton_iters_total: usize,
    #[pyo3(get)]
    damped_steps: usize,
}

#[pyclass(name = "AmericanSolution", frozen)]
pub struct PyAmericanSolution {
    #[pyo3(get)]
    surface: Py<PyPriceSurface>,
    /// Exercise boundary per time row; `None` where no node is exercised.
    #[pyo3(get)]
    boundary: Vec<Option<f64>>,
}

#[pyclass(name = "MCEstimate", frozen, get_all)]
pub struct PyMCEstimate {
    price: f64,
    std_error: f64,
    exercise_fraction: f64,
    mean_exercise_time: f64,
}

#[pyclass(name = "ConditionReport", frozen, get_all)]
pub struct PyConditionReport {
    thetas: Vec<f64>,
    nu_at_zero_plus: Vec<f64>,
    epsilon_of_theta: Vec<f64>,
    term_bad: Vec<f64>,
    term_ok: Vec<f64>,
    passes: bool,
}

#[pyfunction]
#[pyo3(signature = (market, s, t=0.0))]
fn european_put(market: &PyMarketParams, s: f64, t: f64) -> PyResult<f64> {
    core::european_put(&market.0, t, s).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (market, lam, s, t=0.0))]
fn constant_intensity_quadrature(market: &PyMarketParams, lam: f64, s: f64, t: f64) -> PyResult<f64> {
    core::constant_intensity_quadrature(&market.0, lam, t, s).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (market, s, steps=10_000, t=0.0))]
fn binomial_american(py: Python<'_>, market: &PyMarketParams, s: f64, steps: usize, t: f64) -> PyResult<f64> {
    let m = market.0;
    py.detach(|| core::binomial_american(&m, t, s, steps)).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (market, grid, solver=None))]
fn psor_american(py: Python<'_>, market: &PyMarketParams, grid: &PyGridSpec, solver: Option<&PySolverConfig>) -> PyResult<PyAmericanSolution> {
    let (m, g, cfg) = (market.0, grid.0, solver_or_default(solver, &market.0));
    let sol = py.detach(|| core::psor_american(&m, &g, &cfg)).map_err(to_py)?;
    Ok(PyAmericanSolution {
        surface: Py::new(py, PyPriceSurface(sol.surface))?,
        boundary: sol.boundary,
    })
}

#[pyfunction]
#[pyo3(signature = (market, grid, family, solver=None))]
fn solve_rational(
    py: Python<'_>,
    market: &PyMarketParams,
    grid: &PyGridSpec,
    family: &PyIntensityFamily,
    solver: Option<&PySolverConfig>,
) -> PyResult<PyRationalSolution> {
    let (m, g, f, cfg) = (market.0, grid.0, family.0, solver_or_default(solver, &market.0));
    let sol = py.detach(|| core::solve_rational(&m, &g, &f, &cfg)).map_err(to_py)?;
    Ok(PyRationalSolution {
        surface: Py::new(py, PyPriceSurface(sol.surface))?,
        newton_iters_max: sol.stats.newton_iters_max,
        newton_iters_total: sol.stats.newton_iters_total,
        damped_steps: sol.stats.damped_steps,
    })
}

/// Linear solve with a known intensity. `mu` is either a number or a
/// callable `mu(t, s) -> float`.
#[pyfunction]
#[pyo3(signature = (market, grid, mu, solver=None))]
fn solve_exogenous(
    market: &PyMarketParams,
    grid: &PyGridSpec,
    mu: &Bound<'_, PyAny>,
    solver: Option<&PySolverConfig>,
) -> PyResult<PyPriceSurface> {
    let cfg = solver_or_default(solver, &market.0);
    if let Ok(level) = mu.extract::<f64>() {
        let py = mu.py();
        let (m, g) = (market.0, grid.0);
        return py
            .detach(|| core::solve_exogenous(&m, &g, |_, _| level, &cfg))
            .map(PyPriceSurface)
            .map_err(to_py);
    }
    if !mu.is_callable() {
        return Err(PyValueError::new_err("mu must be a number or a callable mu(t, s)"));
    }
    let failure: RefCell<Option<PyErr>> = RefCell::new(None);
    let result = core::solve_exogenous(
        &market.0,
        &grid.0,
        |t, s| {
            if failure.borrow().is_some() {
                return f64::NAN;
            }
            match mu.call1((t, s)).and_then(|v| v.extract::<f64>()) {
                Ok(v) => v,
                Err(e) => {
                    *failure.borrow_mut() = Some(e);
                    f64::NAN
                }
            }
        },
        &cfg,
    );
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    result.map(PyPriceSurface).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (market, surface, family, s0, n_paths=200_000, n_steps=500, seed=42, antithetic=true))]
#[allow(clippy::too_many_arguments)]
fn mc_price(
    py: Python<'_>,
    market: &PyMarketParams,
    surface: &PyPriceSurface,
    family: &PyIntensityFamily,
    s0: f64,
    n_paths: usize,
    n_steps: usize,
    seed: u64,
    antithetic: bool,
) -> PyResult<PyMCEstimate> {
    let mc = core::MCConfig { n_paths, n_steps, seed, antithetic };
    let (m, f) = (market.0, family.0);
    let est = py.detach(|| core::mc_price(&m, &surface.0, &f, &mc, s0)).map_err(to_py)?;
    Ok(PyMCEstimate {
        price: est.price,
        std_error: est.std_error,
        exercise_fraction: est.exercise_fraction,
        mean_exercise_time: est.mean_exercise_time,
    })
}

/// Convergence conditions along `thetas` with `epsilon(theta) = theta^(-epsilon_power)`.
#[pyfunction]
#[pyo3(signature = (family, thetas, epsilon_power=0.5))]
fn check_conditions(family: &PyIntensityFamily, thetas: Vec<f64>, epsilon_power: f64) -> PyResult<PyConditionReport> {
    let r = core::check_conditions(&family.0, &thetas, |t| t.powf(-epsilon_power)).map_err(to_py)?;
    Ok(PyConditionReport {
        thetas: r.thetas,
        nu_at_zero_plus: r.nu_at_zero_plus,
        epsilon_of_theta: r.epsilon_of_theta,
        term_bad: r.term_bad,
        term_ok: r.term_ok,
        passes: r.passes,
    })
}

#[pyfunction]
fn vanishing_terms(family: &PyIntensityFamily, strike: f64, eps1: f64, horizon: f64) -> PyResult<(f64, f64)> {
    core::vanishing_terms(&family.0, strike, eps1, horizon).map_err(to_py)
}

/// Runs the theta sweep. `config` is a JSON run configuration as accepted by
/// the command-line tool; omitted fields take their defaults.
#[pyfunction]
#[pyo3(signature = (config=None, full_surface=false))]
fn run_sweep<'py>(py: Python<'py>, config: Option<&str>, full_surface: bool) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let mut cfg = match config {
        Some(text) => core::RunConfig::from_json(text).map_err(to_py)?,
        None => core::RunConfig::default(),
    };
    cfg.full_surface = full_surface;
    let rows = py.detach(|| core::run_sweep(&cfg)).map_err(to_py)?;
    rows.iter()
        .map(|row| {
            let d = PyDict::new(py);
            d.set_item("theta", row.theta)?;
            d.set_item("p_theta", row.p_theta)?;
            d.set_item("p_american_psor", row.p_american_psor)?;
            d.set_item("p_american_tree", row.p_american_tree)?;
            d.set_item("abs_error", row.abs_error)?;
            d.set_item("term_bad", row.term_bad_regret)?;
            d.set_item("term_ok", row.term_ok_regret)?;
            d.set_item("newton_iters_max", row.newton_iters_max)?;
            d.set_item("max_abs_error_grid", row.max_abs_error_grid)?;
            d.set_item("max_excess_over_american", row.max_excess_over_american)?;
            Ok(d)
        })
        .collect()
}

#[pymodule]
fn ratput(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMarketParams>()?;
    m.add_class::<PyGridSpec>()?;
    m.add_class::<PyIntensityFamily>()?;
    m.add_class::<PySolverConfig>()?;
    m.add_class::<PyPriceSurface>()?;
    m.add_class::<PyRationalSolution>()?;
    m.add_class::<PyAmericanSolution>()?;
    m.add_class::<PyMCEstimate>()?;
    m.add_class::<PyConditionReport>()?;
    m.add_function(wrap_pyfunction!(european_put, m)?)?;
    m.add_function(wrap_pyfunction!(constant_intensity_quadrature, m)?)?;
    m.add_function(wrap_pyfunction!(binomial_american, m)?)?;
    m.add_function(wrap_pyfunction!(psor_american, m)?)?;
    m.add_function(wrap_pyfunction!(solve_rational, m)?)?;
    m.add_function(wrap_pyfunction!(solve_exogenous, m)?)?;
    m.add_function(wrap_pyfunction!(mc_price, m)?)?;
    m.add_function(wrap_pyfunction!(check_conditions, m)?)?;
    m.add_function(wrap_pyfunction!(vanishing_terms, m)?)?;
    m.add_function(wrap_pyfunction!(run_sweep, m)?)?;
    Ok(())
}
