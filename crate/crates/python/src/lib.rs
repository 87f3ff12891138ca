//! Python bindings for the `dphase` core library.

use dphase::cli::resolve_calibration;
use dphase::config::{RunConfig, Setup};
use dphase::energy::EnergyModel;
use dphase::grid::GridFunction;
use dphase::hardy::HardyChecker;
use dphase::modular::{check_modular_norm_relations, luxemburg_norm, modular, Modular};
use dphase::sampling::{sine_bump, Sampler};
use dphase::solver::{certify_with_constants, embedding_constants, ps_monitor, solve_with_geometry};
use dphase::{suites, Error};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde::Serialize;
use serde_json::Value;

fn py_err(e: Error) -> PyErr {
    match dphase::cli::exit_code(&e) {
        dphase::cli::EXIT_NUMERICAL => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match (n.as_i64(), n.as_u64()) {
            (Some(i), _) => i.into_pyobject(py)?.into_any(),
            (None, Some(u)) => u.into_pyobject(py)?.into_any(),
            _ => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(a) => {
            let items = a.iter().map(|x| to_py(py, x)).collect::<PyResult<Vec<_>>>()?;
            PyList::new(py, items)?.into_any()
        }
        Value::Object(o) => {
            let d = PyDict::new(py);
            for (k, x) in o {
                d.set_item(k, to_py(py, x)?)?;
            }
            d.into_any()
        }
    })
}

/// Serializes through JSON values; non-finite floats become `None`.
fn serialize<'py, T: Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let value = serde_json::to_value(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    to_py(py, &value)
}

/// A validated run configuration with its grid and exponent fields.
#[pyclass(name = "Problem", module = "dphase", frozen)]
struct Problem {
    setup: Setup,
}

impl Problem {
    fn function(&self, values: Vec<f64>) -> PyResult<GridFunction> {
        GridFunction::new(&self.setup.grid, values).map_err(py_err)
    }

    fn which<'a>(&'a self, kind: &str) -> PyResult<Modular<'a>> {
        let e = &self.setup.exponents;
        match kind {
            "gradient" => Ok(Modular::Gradient(e)),
            "musielak" => Ok(Modular::Musielak(e)),
            "p" => Ok(Modular::Plain(e.p())),
            "q" => Ok(Modular::Plain(e.q())),
            "beta" => Ok(Modular::Plain(e.beta())),
            other => Err(PyValueError::new_err(format!(
                "unknown modular `{other}` (gradient, musielak, p, q, beta)"
            ))),
        }
    }

    fn model(&self, lam: f64) -> EnergyModel {
        let s = &self.setup;
        EnergyModel::new(&s.grid, &s.exponents, &s.params_for(lam))
    }
}

#[pymethods]
impl Problem {
    /// Builds from TOML text; the pinned default fixture when `config` is None.
    #[new]
    #[pyo3(signature = (config = None))]
    fn new(config: Option<&str>) -> PyResult<Self> {
        let cfg = match config {
            Some(src) => RunConfig::parse(src, "<python>").map_err(py_err)?,
            None => RunConfig::default_config(),
        };
        Ok(Problem {
            setup: cfg.build().map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn default_config() -> &'static str {
        dphase::config::DEFAULT_CONFIG
    }

    fn config_toml(&self) -> String {
        self.setup.config.to_toml()
    }

    #[getter]
    fn config_hash(&self) -> String {
        self.setup.config.hash()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.setup.config.seed
    }

    #[getter]
    fn dim(&self) -> usize {
        self.setup.grid.dim()
    }

    #[getter]
    fn num_nodes(&self) -> usize {
        self.setup.grid.len()
    }

    fn coords(&self) -> Vec<Vec<f64>> {
        let g = &self.setup.grid;
        (0..g.len()).map(|k| g.coords(k)).collect()
    }

    fn weights(&self) -> Vec<f64> {
        self.setup.grid.weights().to_vec()
    }

    fn boundary_mask(&self) -> Vec<bool> {
        self.setup.grid.boundary_mask().to_vec()
    }

    /// Exponent bounds `p-`, `p+`, `q-`, `q+`, `beta-`, ... as a dict.
    fn bounds<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        serialize(py, self.setup.exponents.bounds())
    }

    fn sine_bump(&self) -> Vec<f64> {
        sine_bump(&self.setup.grid).into_values()
    }

    /// `count` seeded random functions vanishing on the boundary.
    #[pyo3(signature = (count, seed = 0))]
    fn sample(&self, count: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut s = Sampler::new(&self.setup.grid, seed);
        (0..count).map(|_| s.next_function().into_values()).collect()
    }

    #[pyo3(signature = (values, kind = "gradient"))]
    fn modular(&self, values: Vec<f64>, kind: &str) -> PyResult<f64> {
        let u = self.function(values)?;
        Ok(modular(&u, self.which(kind)?).value)
    }

    #[pyo3(signature = (values, kind = "gradient"))]
    fn luxemburg_norm(&self, values: Vec<f64>, kind: &str) -> PyResult<f64> {
        let u = self.function(values)?;
        luxemburg_norm(&u, self.which(kind)?).map_err(py_err)
    }

    fn modular_relations<'py>(&self, py: Python<'py>, values: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
        let u = self.function(values)?;
        let r = check_modular_norm_relations(&u, &self.setup.exponents).map_err(py_err)?;
        serialize(py, &r.relations)
    }

    #[pyo3(signature = (values, lam, truncated = false))]
    fn energy<'py>(&self, py: Python<'py>, values: Vec<f64>, lam: f64, truncated: bool) -> PyResult<Bound<'py, PyAny>> {
        let u = self.function(values)?;
        serialize(py, &self.model(lam).energy(u.values(), truncated))
    }

    /// Riesz vector of the derivative; zero on boundary nodes.
    #[pyo3(signature = (values, lam, truncated = false))]
    fn gradient(&self, values: Vec<f64>, lam: f64, truncated: bool) -> PyResult<Vec<f64>> {
        let u = self.function(values)?;
        Ok(self.model(lam).riesz_gradient(u.values(), truncated).into_values())
    }

    /// Hardy upper/lower report; `c_hat` defaults to the stored calibration.
    #[pyo3(signature = (values, c_hat = None))]
    fn hardy_report<'py>(&self, py: Python<'py>, values: Vec<f64>, c_hat: Option<f64>) -> PyResult<Bound<'py, PyAny>> {
        let s = &self.setup;
        let c_hat = match c_hat {
            Some(c) => c,
            None => resolve_calibration(s).map_err(py_err)?.0.c_hat,
        };
        let u = self.function(values)?;
        let checker =
            HardyChecker::new(&s.grid, &s.exponents, s.params.alpha, s.params.sing_floor, c_hat).map_err(py_err)?;
        let r = checker.report(&u).map_err(py_err)?;
        let d = serialize(py, &r)?;
        d.set_item("passed", r.passed())?;
        Ok(d)
    }

    fn embedding_constants<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let s = &self.setup;
        let k = embedding_constants(&s.grid, &s.exponents, &s.params, &s.config.solver, s.config.seed)
            .map_err(py_err)?;
        serialize(py, &k)
    }

    /// Property suites as a list of dicts with `name`, `passed`, `slack`, `checks`.
    #[pyo3(signature = (samples = 20, lam = 1.0))]
    fn verify<'py>(&self, py: Python<'py>, samples: usize, lam: f64) -> PyResult<Bound<'py, PyAny>> {
        let s = &self.setup;
        let rows = suites::run_all(&s.grid, &s.exponents, &s.params_for(lam), samples, s.config.seed)
            .map_err(py_err)?;
        serialize(py, &rows)
    }

    /// Runs the mountain-pass solver. `lam` overrides the configured lambda.
    /// Returns the result fields plus `solution`, `trace`, `ps_monitor` and `lambda_hat`.
    #[pyo3(signature = (lam = None))]
    fn solve<'py>(&self, py: Python<'py>, lam: Option<f64>) -> PyResult<Bound<'py, PyAny>> {
        let s = &self.setup;
        let opts = &s.config.solver;
        let k = embedding_constants(&s.grid, &s.exponents, &s.params, opts, s.config.seed).map_err(py_err)?;
        let lambda = lam.unwrap_or_else(|| s.lambda(&k));
        let prm = s.params_for(lambda);
        let (g, r) = py
            .detach(|| {
                certify_with_constants(&s.grid, &s.exponents, &prm, opts, s.config.seed, k)
                    .and_then(|g| solve_with_geometry(&s.grid, &s.exponents, &prm, opts, g))
            })
            .map_err(py_err)?;
        let b = s.exponents.bounds();
        let d = serialize(py, &r)?;
        d.set_item("lambda", lambda)?;
        d.set_item("lambda_hat", g.lambda_hat)?;
        d.set_item("min_sphere_energy", g.min_sphere_energy)?;
        d.set_item("ps_monitor", serialize(py, &ps_monitor(&r.trace, b.p_minus, b.q_plus, prm.theta))?)?;
        d.set_item("trace", serialize(py, &r.trace)?)?;
        d.set_item("solution", r.solution.values().to_vec())?;
        Ok(d)
    }

    fn __repr__(&self) -> String {
        let g = &self.setup.grid;
        format!(
            "Problem(dim={}, nodes_per_axis={}, hash={})",
            g.dim(),
            g.nodes_per_axis(),
            &self.setup.config.hash()[..12]
        )
    }
}

#[pymodule]
#[pyo3(name = "dphase")]
fn dphase_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Problem>()?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
