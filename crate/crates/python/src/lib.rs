//! Python bindings. Reports come back as plain dicts (serialized via json).

use nalgebra::DMatrix;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use gmaslov::error::Error;
use gmaslov::invariance::{constants_report, rho_grid_scan_with};
use gmaslov::maslovbox::{compute_box, localize_eigenvalues_top, monotonicity_audit, renormalized_count, SpectralProblem, EIGEN_TOL};
use gmaslov::multilinear::{psi_rho, BlockLambdaMatrix};
use gmaslov::problems::{builtin_catalog, load_problem, parse_expression, ProblemConfig, CATALOG};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::InvalidInput(_) | Error::Parse { .. } | Error::Config(_) | Error::RankDeficient(_) | Error::Io(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn to_dict<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, |r| r.len());
    if n == 0 || m == 0 || rows.iter().any(|r| r.len() != m) {
        return Err(PyValueError::new_err("expected a non-empty rectangular list of rows"));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

/// A spectral problem on [0, 1] x [lambda1, lambda2].
#[pyclass(name = "Problem", frozen)]
struct PyProblem {
    inner: SpectralProblem,
}

#[pymethods]
impl PyProblem {
    #[staticmethod]
    fn catalog(name: &str) -> PyResult<Self> {
        let cfg = builtin_catalog(name).map_err(to_py)?;
        Ok(PyProblem { inner: load_problem(&cfg).map_err(to_py)? })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let cfg = ProblemConfig::from_json(text).map_err(to_py)?;
        Ok(PyProblem { inner: load_problem(&cfg).map_err(to_py)? })
    }

    /// Copy with a different grid and/or spectral interval.
    #[pyo3(signature = (x_steps=None, lambda_steps=None, lambda1=None, lambda2=None))]
    fn with_options(&self, x_steps: Option<usize>, lambda_steps: Option<usize>, lambda1: Option<f64>, lambda2: Option<f64>) -> PyResult<Self> {
        let p = &self.inner;
        let inner = p
            .clone()
            .with_grid(x_steps.unwrap_or(p.x_steps), lambda_steps.unwrap_or(p.lambda_steps))
            .and_then(|q| q.with_lambda(lambda1.unwrap_or(p.lambda1), lambda2.unwrap_or(p.lambda2)))
            .map_err(to_py)?;
        Ok(PyProblem { inner })
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m()
    }

    #[getter]
    fn lambda_interval(&self) -> (f64, f64) {
        (self.inner.lambda1, self.inner.lambda2)
    }

    fn compute_box(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        let r = py.detach(|| compute_box(&self.inner)).map_err(to_py)?;
        to_dict(py, &r)
    }

    fn eigenvalues(&self, py: Python<'_>) -> PyResult<Vec<f64>> {
        Ok(py.detach(|| localize_eigenvalues_top(&self.inner, EIGEN_TOL)).map_err(to_py)?.eigenvalues)
    }

    fn renormalized_count(&self, py: Python<'_>) -> PyResult<(usize, Vec<f64>)> {
        py.detach(|| renormalized_count(&self.inner)).map_err(to_py)
    }

    fn monotonicity_audit(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        let r = py.detach(|| monotonicity_audit(&self.inner)).map_err(to_py)?;
        to_dict(py, &r)
    }

    fn invariance(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        let r = py.detach(|| constants_report(&self.inner)).map_err(to_py)?;
        to_dict(py, &r)
    }

    #[pyo3(signature = (refine=2))]
    fn rho_scan(&self, py: Python<'_>, refine: usize) -> PyResult<Py<PyAny>> {
        let r = py.detach(|| rho_grid_scan_with(&self.inner, refine)).map_err(to_py)?;
        to_dict(py, &r)
    }
}

/// omega1, omega2, d, psi1, psi2, rho for frames G (n x m), H (n x (n-m)) and the
/// constant-coefficient A-tilde blocks a1, a2.
#[pyfunction]
fn omega_pair(py: Python<'_>, g: Vec<Vec<f64>>, h: Vec<Vec<f64>>, a1: Vec<Vec<f64>>, a2: Vec<Vec<f64>>) -> PyResult<Py<PyAny>> {
    let (g, h) = (matrix(&g)?, matrix(&h)?);
    let at = BlockLambdaMatrix::new(0.0, 1.0, &matrix(&a1)?, &matrix(&a2)?).map_err(to_py)?;
    let v = psi_rho(&g, &h, &at).map_err(to_py)?;
    to_dict(py, &v)
}

/// Canonical (fully parenthesized) form of an expression.
#[pyfunction]
fn normalize_expression(text: &str) -> PyResult<String> {
    Ok(parse_expression(text).map_err(to_py)?.to_string())
}

#[pyfunction]
fn eval_expression(text: &str, x: f64) -> PyResult<f64> {
    parse_expression(text).and_then(|e| e.eval(x)).map_err(to_py)
}

#[pyfunction]
fn catalog_names() -> Vec<&'static str> {
    CATALOG.to_vec()
}

#[pymodule]
pub fn gmaslov_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyProblem>()?;
    m.add_function(wrap_pyfunction!(omega_pair, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_expression, m)?)?;
    m.add_function(wrap_pyfunction!(eval_expression, m)?)?;
    m.add_function(wrap_pyfunction!(catalog_names, m)?)?;
    Ok(())
}
