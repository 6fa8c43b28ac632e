//! Python bindings for `vgchaos`.
//!
//! Value types (`VgParams`, `SecondChaosElement`, `RosenblattSpec`) are thin
//! wrappers; structured reports are returned as plain dicts and lists built
//! from their JSON form, so the Python side sees the same field names as the
//! CLI artifacts.

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde::Serialize;
use serde_json::Value;

use vgchaos::bounds;
use vgchaos::chaos;
use vgchaos::rosenblatt;
use vgchaos::special;
use vgchaos::stein;
use vgchaos::vg;
use vgchaos::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Numeric(_) => PyRuntimeError::new_err(e.to_string()),
        Error::Io(_) => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn value_to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match (n.as_i64(), n.as_f64()) {
            (Some(i), _) => i.into_pyobject(py)?.into_any(),
            (None, Some(f)) => f.into_pyobject(py)?.into_any(),
            _ => py.None().into_bound(py),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(a) => {
            let list = PyList::empty(py);
            for x in a {
                list.append(value_to_py(py, x)?)?;
            }
            list.into_any()
        }
        Value::Object(m) => {
            let d = PyDict::new(py);
            for (k, x) in m {
                d.set_item(k, value_to_py(py, x)?)?;
            }
            d.into_any()
        }
    })
}

/// Converts a serializable report into Python dicts and lists. Non-finite
/// floats (which JSON cannot carry) come back as `None`.
fn to_py<'py, T: Serialize>(py: Python<'py>, x: &T) -> PyResult<Bound<'py, PyAny>> {
    let v = serde_json::to_value(x).map_err(|e| PyValueError::new_err(e.to_string()))?;
    value_to_py(py, &v)
}

/// Centered Variance-Gamma law `VG_c(r, theta, sigma)`.
#[pyclass(name = "VgParams", module = "vgchaos_py", frozen)]
pub struct PyVgParams {
    inner: vg::VgParams,
}

#[pymethods]
impl PyVgParams {
    #[new]
    fn new(r: f64, theta: f64, sigma: f64) -> PyResult<Self> {
        Ok(Self { inner: vg::VgParams::centered(r, theta, sigma).map_err(py_err)? })
    }

    /// The law of `alpha * sum(N_i^2 - 1) - beta * sum(M_i^2 - 1)` over `r` pairs.
    #[staticmethod]
    fn from_chaos(alpha: f64, beta: f64, r: u32) -> PyResult<Self> {
        let c = vg::ChaosVgParams::new(alpha, beta, r).map_err(py_err)?;
        Ok(Self { inner: vg::VgParams::from_chaos_params(&c) })
    }

    #[getter]
    fn r(&self) -> f64 {
        self.inner.r
    }

    #[getter]
    fn theta(&self) -> f64 {
        self.inner.theta
    }

    #[getter]
    fn sigma(&self) -> f64 {
        self.inner.sigma
    }

    #[getter]
    fn mu(&self) -> f64 {
        self.inner.mu
    }

    /// Density at `x`; `inf` at the singular point when `r <= 1`.
    fn density(&self, x: f64) -> f64 {
        let d = self.inner.density(x);
        if d.singular {
            f64::INFINITY
        } else {
            d.value
        }
    }

    /// `[kappa_2, ..., kappa_6]`.
    fn cumulants(&self) -> PyResult<Vec<f64>> {
        Ok(self.inner.cumulants_2_to_6().map_err(py_err)?.to_vec())
    }

    /// `(residual, scale)` of the linear relation among the first six cumulants.
    fn identity_residual(&self) -> PyResult<(f64, f64)> {
        self.inner.cumulant_identity_residual().map_err(py_err)
    }

    /// `E h(Y)` by quadrature against the density.
    fn expect(&self, h: Bound<'_, PyAny>) -> PyResult<f64> {
        let err: std::cell::RefCell<Option<PyErr>> = std::cell::RefCell::new(None);
        let v = self
            .inner
            .expect(|x| match h.call1((x,)).and_then(|r| r.extract::<f64>()) {
                Ok(y) => y,
                Err(e) => {
                    err.borrow_mut().get_or_insert(e);
                    f64::NAN
                }
            });
        if let Some(e) = err.into_inner() {
            return Err(e);
        }
        v.map_err(py_err)
    }

    fn sample(&self, n: usize, seed: u64) -> Vec<f64> {
        self.inner.sample(n, seed)
    }

    /// `1 / phi_Y(t)^2`.
    fn char_fn_inv_sq(&self, t: f64) -> PyResult<num_complex::Complex64> {
        self.inner.char_fn_inv_sq(t).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!("VgParams(r={}, theta={}, sigma={})", self.inner.r, self.inner.theta, self.inner.sigma)
    }
}

/// Finite-spectrum element `sum_i c_i (N_i^2 - 1)` of the second chaos.
#[pyclass(name = "SecondChaosElement", module = "vgchaos_py", frozen)]
pub struct PySecondChaosElement {
    inner: chaos::SecondChaosElement,
}

#[pymethods]
impl PySecondChaosElement {
    #[new]
    fn new(eigenvalues: Vec<f64>) -> PyResult<Self> {
        Ok(Self { inner: chaos::SecondChaosElement::new(eigenvalues).map_err(py_err)? })
    }

    #[getter]
    fn eigenvalues(&self) -> Vec<f64> {
        self.inner.eigenvalues().to_vec()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn cumulant(&self, p: usize) -> PyResult<f64> {
        self.inner.cumulant(p).map_err(py_err)
    }

    /// `[kappa_2, ..., kappa_6]`.
    fn cumulants(&self) -> Vec<f64> {
        self.inner.cumulants_2_to_6().to_vec()
    }

    fn rescaled_to_kappa2(&self, kappa2: f64) -> PyResult<Self> {
        Ok(Self { inner: self.inner.rescaled_to_kappa2(kappa2).map_err(py_err)? })
    }

    /// Variance of `Gamma_{l+1} - 2 theta Gamma_l - sigma^2 Gamma_{l-1}`.
    fn gamma_lin_variance(&self, ell: usize, theta: f64, sigma: f64) -> PyResult<f64> {
        self.inner.gamma_lin_variance(ell, theta, sigma).map_err(py_err)
    }

    /// Dict with `m`, `m_prime`, `argmax` and `diffs` against a VG target.
    fn m_statistic<'py>(&self, py: Python<'py>, target: &PyVgParams) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.m_statistic(&target.inner).map_err(py_err)?)
    }

    fn sample(&self, n: usize, seed: u64) -> Vec<f64> {
        self.inner.sample(n, seed)
    }

    fn __repr__(&self) -> String {
        format!("SecondChaosElement({:?})", self.inner.eigenvalues())
    }
}

/// Discretization settings for a generalized Rosenblatt variable.
#[pyclass(name = "RosenblattSpec", module = "vgchaos_py", frozen)]
pub struct PyRosenblattSpec {
    inner: rosenblatt::RosenblattSpec,
}

#[pymethods]
impl PyRosenblattSpec {
    #[new]
    #[pyo3(signature = (gamma1, gamma2, n_nodes = rosenblatt::RosenblattSpec::DEFAULT_NODES, mesh = rosenblatt::RosenblattSpec::DEFAULT_MESH))]
    fn new(gamma1: f64, gamma2: f64, n_nodes: usize, mesh: f64) -> PyResult<Self> {
        Ok(Self { inner: rosenblatt::RosenblattSpec::new(gamma1, gamma2, n_nodes, mesh).map_err(py_err)? })
    }

    #[getter]
    fn gamma1(&self) -> f64 {
        self.inner.gamma1
    }

    #[getter]
    fn gamma2(&self) -> f64 {
        self.inner.gamma2
    }

    #[getter]
    fn n_nodes(&self) -> usize {
        self.inner.n_nodes
    }

    /// Unit-variance chaos element from the Galerkin spectrum.
    fn spectrum(&self) -> PyResult<PySecondChaosElement> {
        let ns = rosenblatt::nystrom_spectrum(&self.inner).map_err(py_err)?;
        Ok(PySecondChaosElement { inner: ns.element })
    }

    /// `(value, standard_error)` of `kappa_p` from the cyclic-trace QMC estimator.
    fn cumulant_mc(&self, p: usize, n_mc: usize, seed: u64) -> PyResult<(f64, f64)> {
        let e = rosenblatt::cumulant_trace_mc(&self.inner, p, n_mc, seed).map_err(py_err)?;
        Ok((e.value, e.se))
    }
}

#[pyfunction]
fn bessel_k(nu: f64, x: f64) -> PyResult<f64> {
    special::bessel_k(nu, x).map_err(py_err)
}

#[pyfunction]
fn bessel_i(nu: f64, x: f64) -> PyResult<f64> {
    special::bessel_i(nu, x).map_err(py_err)
}

/// Solves the Stein equation for a built-in test function (`x`, `x2`, `tanh`,
/// `sin`, `bump`, `const`) on a uniform grid; returns the solution as a dict.
#[pyfunction]
#[pyo3(signature = (target, h, x_min = -8.0, x_max = 8.0, n_points = 2048))]
fn stein_solve<'py>(
    py: Python<'py>,
    target: &PyVgParams,
    h: &str,
    x_min: f64,
    x_max: f64,
    n_points: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let h = stein::SteinTestFn::from_name(h).map_err(py_err)?;
    let grid = stein::SteinGrid::uniform(x_min, x_max, n_points).map_err(py_err)?;
    let sol = stein::solve(&target.inner, |x| h.eval(x), &grid).map_err(py_err)?;
    to_py(py, &sol)
}

#[pyfunction]
fn six_moment_bound(f: &PySecondChaosElement, target: &PyVgParams) -> PyResult<f64> {
    bounds::six_moment_bound(&f.inner, &target.inner).map_err(py_err)
}

#[pyfunction]
fn empirical_w1(xs: Vec<f64>, ys: Vec<f64>) -> PyResult<f64> {
    bounds::empirical_w1(&xs, &ys).map_err(py_err)
}

/// Bounds, constants and Monte Carlo distances for a matched pair, as a dict.
#[pyfunction]
#[pyo3(signature = (f, target, n_mc = 1_000_000, seed = 0))]
fn bound_report<'py>(
    py: Python<'py>,
    f: &PySecondChaosElement,
    target: &PyVgParams,
    n_mc: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let rep = py
        .detach(|| bounds::bound_report(&f.inner, &target.inner, n_mc, seed))
        .map_err(py_err)?;
    to_py(py, &rep)
}

/// Rate experiment from `key = value` text (keys: case, rho, gamma2, gamma1,
/// n_nodes, mesh, n_mc, seed); returns the result dict.
#[pyfunction]
fn rosenblatt_rate<'py>(py: Python<'py>, config: &str) -> PyResult<Bound<'py, PyAny>> {
    let cfg = rosenblatt::RateConfig::from_kv(config).map_err(py_err)?;
    let res = py.detach(|| rosenblatt::rate_experiment(&cfg)).map_err(py_err)?;
    to_py(py, &res)
}

#[pymodule]
fn vgchaos_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", vgchaos::VERSION)?;
    m.add_class::<PyVgParams>()?;
    m.add_class::<PySecondChaosElement>()?;
    m.add_class::<PyRosenblattSpec>()?;
    m.add_function(wrap_pyfunction!(bessel_k, m)?)?;
    m.add_function(wrap_pyfunction!(bessel_i, m)?)?;
    m.add_function(wrap_pyfunction!(stein_solve, m)?)?;
    m.add_function(wrap_pyfunction!(six_moment_bound, m)?)?;
    m.add_function(wrap_pyfunction!(empirical_w1, m)?)?;
    m.add_function(wrap_pyfunction!(bound_report, m)?)?;
    m.add_function(wrap_pyfunction!(rosenblatt_rate, m)?)?;
    Ok(())
}
