use pyo3::prelude::*;
use pyo3::types::PyDict;

#[test]
fn module_exposes_problems_and_forms() {
    Python::initialize();
    Python::attach(|py| -> PyResult<()> {
        let m = pyo3::wrap_pymodule!(gmaslov_py::gmaslov_py)(py);
        let m = m.bind(py);
        let names: Vec<String> = m.getattr("catalog_names")?.call0()?.extract()?;
        assert!(names.iter().any(|n| n == "example2"));

        let text: String = m.getattr("normalize_expression")?.call1(("2^3^2",))?.extract()?;
        assert_eq!(text, "(2^(3^2))");

        let problem = m.getattr("Problem")?.getattr("catalog")?.call1(("example1",))?;
        let (count, xs): (usize, Vec<f64>) = problem.call_method0("renormalized_count")?.extract()?;
        assert_eq!(count, 1);
        assert!((xs[0] - 0.535).abs() < 0.01);

        let v = m.getattr("omega_pair")?.call1((vec![vec![1.0], vec![0.0]], vec![vec![0.0], vec![1.0]], vec![vec![0.0, 1.0], vec![0.0, 0.0]], vec![vec![0.0, 1.0], vec![-1.0, 0.0]]))?;
        let d = v.cast::<PyDict>()?;
        let rho: f64 = d.get_item("rho")?.expect("rho key").extract()?;
        assert!(rho > 0.0);

        let err = m.getattr("eval_expression")?.call1(("1/x", 0.0)).unwrap_err();
        assert!(err.is_instance_of::<pyo3::exceptions::PyRuntimeError>(py));
        Ok(())
    })
    .unwrap();
}
