//! Python bindings. Matrices are nested lists indexed `[x][y]`; forbidden
//! surplus cells are `-inf`. Structured results are plain dicts.

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use cupid_core::estimate::{bootstrap_se, entropy_spec_test, estimate as fit, EstimateOptions, Estimator, SpecDocument};
use cupid_core::identify::IdentifyOptions;
use cupid_core::simulate::{gen_benchmark, sample_households};
use cupid_core::solvers::auto_method;
use cupid_core::numerics::mix_seed;
use cupid_core::{Error, Margins, Matching, Method, ModelSet, Sample, SampleCounts, SolveOptions, SurplusMatrix};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::NoConvergence { .. } | Error::Bootstrap { .. } => PyRuntimeError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn matrix<T: nalgebra::Scalar + Copy>(rows: &[Vec<T>], what: &str) -> PyResult<DMatrix<T>> {
    let nx = rows.len();
    let ny = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().find(|r| r.len() != ny) {
        return Err(py_err(Error::dims(what, ny, bad.len())));
    }
    Ok(DMatrix::from_fn(nx, ny, |x, y| rows[x][y]))
}

fn rows<T: nalgebra::Scalar + Copy>(m: &DMatrix<T>) -> Vec<Vec<T>> {
    (0..m.nrows()).map(|x| (0..m.ncols()).map(|y| m[(x, y)]).collect()).collect()
}

fn surplus_rows(phi: &SurplusMatrix) -> Vec<Vec<f64>> {
    (0..phi.nx())
        .map(|x| (0..phi.ny()).map(|y| phi.get(x, y).unwrap_or(f64::NEG_INFINITY)).collect())
        .collect()
}

fn models(json: Option<&str>, groups: usize, n_alt: usize) -> PyResult<ModelSet> {
    match json {
        Some(text) => ModelSet::from_json(text, groups, n_alt).map_err(py_err),
        None => Ok(ModelSet::logit(groups)),
    }
}

fn method(name: &str, men: &ModelSet, women: &ModelSet) -> PyResult<Method> {
    if name == "auto" {
        Ok(auto_method(men, women))
    } else {
        name.parse().map_err(py_err)
    }
}

fn put_matching(d: &Bound<'_, PyDict>, mu: &Matching) -> PyResult<()> {
    d.set_item("mu", rows(&mu.mu))?;
    d.set_item("mu_x0", mu.mu_x0.as_slice().to_vec())?;
    d.set_item("mu_0y", mu.mu_0y.as_slice().to_vec())
}

fn json_object<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn counts(couples: Vec<Vec<u64>>, single_men: Vec<u64>, single_women: Vec<u64>) -> PyResult<Sample> {
    let couples = matrix(&couples, "couple count rows")?;
    if couples.nrows() != single_men.len() {
        return Err(py_err(Error::dims("men groups in the counts", couples.nrows(), single_men.len())));
    }
    if couples.ncols() != single_women.len() {
        return Err(py_err(Error::dims("women groups in the counts", couples.ncols(), single_women.len())));
    }
    let c = SampleCounts { couples, single_men, single_women };
    Sample::from_counts(&c).map_err(py_err)
}

/// Equilibrium matching and utilities of a market.
#[pyfunction]
#[pyo3(signature = (phi, n, m, model_men=None, model_women=None, method="auto", tol=1e-9, max_iter=100_000))]
#[allow(clippy::too_many_arguments)]
fn solve<'py>(
    py: Python<'py>,
    phi: Vec<Vec<f64>>,
    n: Vec<f64>,
    m: Vec<f64>,
    model_men: Option<&str>,
    model_women: Option<&str>,
    method: &str,
    tol: f64,
    max_iter: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let phi = SurplusMatrix::from_values(matrix(&phi, "surplus rows")?).map_err(py_err)?;
    let r = Margins::new(n, m).map_err(py_err)?;
    if (phi.nx(), phi.ny()) != (r.nx(), r.ny()) {
        let (what, e, f) = if phi.nx() != r.nx() {
            ("men groups in the surplus", r.nx(), phi.nx())
        } else {
            ("women groups in the surplus", r.ny(), phi.ny())
        };
        return Err(py_err(Error::dims(what, e, f)));
    }
    let men = models(model_men, r.nx(), r.ny())?;
    let women = models(model_women, r.ny(), r.nx())?;
    let opts = SolveOptions::default()
        .with_tol(tol)
        .with_max_iter(max_iter)
        .with_method(self::method(method, &men, &women)?);
    let sol = py.detach(|| cupid_core::solve(&men, &women, &phi, &r, &opts)).map_err(py_err)?;
    let d = PyDict::new(py);
    put_matching(&d, &sol.matching)?;
    d.set_item("u", sol.utilities.u.as_slice().to_vec())?;
    d.set_item("v", sol.utilities.v.as_slice().to_vec())?;
    d.set_item("report", json_object(py, &sol.report)?)?;
    Ok(d)
}

/// Surplus and utilities rationalizing an observed matching.
#[pyfunction]
#[pyo3(signature = (mu, mu_x0, mu_0y, model_men=None, model_women=None, smoothing=0.0))]
fn identify<'py>(
    py: Python<'py>,
    mu: Vec<Vec<f64>>,
    mu_x0: Vec<f64>,
    mu_0y: Vec<f64>,
    model_men: Option<&str>,
    model_women: Option<&str>,
    smoothing: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let mu = Matching::new(matrix(&mu, "matching rows")?, DVector::from_vec(mu_x0), DVector::from_vec(mu_0y))
        .map_err(py_err)?;
    let r = mu.implied_margins().map_err(py_err)?;
    let men = models(model_men, r.nx(), r.ny())?;
    let women = models(model_women, r.ny(), r.nx())?;
    let id = py
        .detach(|| cupid_core::identify(&men, &women, &mu, &r, &IdentifyOptions { smoothing }))
        .map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("phi", surplus_rows(&id.phi))?;
    d.set_item("u", id.groups.u.as_slice().to_vec())?;
    d.set_item("v", id.groups.v.as_slice().to_vec())?;
    Ok(d)
}

/// Benchmark logit market of `size` groups per side and a household sample
/// drawn from its equilibrium.
#[pyfunction]
#[pyo3(signature = (size, seed=0, households=10_000))]
fn simulate<'py>(py: Python<'py>, size: usize, seed: u64, households: u64) -> PyResult<Bound<'py, PyDict>> {
    let inst = gen_benchmark(size, seed).map_err(py_err)?;
    let (men, women) = (ModelSet::logit(size), ModelSet::logit(size));
    let opts = SolveOptions::default().with_tol(1e-10).with_method(auto_method(&men, &women));
    let sol = cupid_core::solve(&men, &women, &inst.phi, &inst.margins, &opts)
        .and_then(|s| s.require_converged())
        .map_err(py_err)?;
    let c = sample_households(&sol.matching, households, mix_seed(seed, 1)).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("phi", surplus_rows(&inst.phi))?;
    d.set_item("n", inst.margins.n().as_slice().to_vec())?;
    d.set_item("m", inst.margins.m().as_slice().to_vec())?;
    put_matching(&d, &sol.matching)?;
    d.set_item("couples", rows(&c.couples))?;
    d.set_item("single_men", c.single_men)?;
    d.set_item("single_women", c.single_women)?;
    Ok(d)
}

/// Fit the parametric model described by the JSON `spec` to household counts.
#[pyfunction]
#[pyo3(signature = (couples, single_men, single_women, spec, estimator="mm", boot=0, seed=0))]
#[allow(clippy::too_many_arguments)]
fn estimate<'py>(
    py: Python<'py>,
    couples: Vec<Vec<u64>>,
    single_men: Vec<u64>,
    single_women: Vec<u64>,
    spec: &str,
    estimator: &str,
    boot: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let data = counts(couples, single_men, single_women)?;
    let (nx, ny) = data.shape();
    let doc = SpecDocument::from_json(spec).map_err(py_err)?;
    if doc.grid.is_some() {
        return Err(PyValueError::new_err("a single model is expected, not a grid"));
    }
    let model = doc.build(nx, ny).map_err(py_err)?;
    let est: Estimator = estimator.parse().map_err(py_err)?;
    let mut opts = EstimateOptions::new(est);
    opts.theta = doc.theta.clone();
    let (res, se) = py
        .detach(|| {
            let res = fit(&model, &data, &opts)?;
            let se = if boot > 0 { Some(bootstrap_se(&model, &data, &opts, boot, seed)?) } else { None };
            Ok::<_, Error>((res, se))
        })
        .map_err(py_err)?;
    let out = json_object(py, &res)?;
    if let Some(se) = se {
        out.set_item("bootstrap", json_object(py, &se)?)?;
    }
    Ok(out)
}

/// Bootstrap specification test of the JSON `spec` against household counts.
#[pyfunction]
#[pyo3(signature = (couples, single_men, single_women, spec, boot=199, seed=0))]
fn spec_test<'py>(
    py: Python<'py>,
    couples: Vec<Vec<u64>>,
    single_men: Vec<u64>,
    single_women: Vec<u64>,
    spec: &str,
    boot: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let data = counts(couples, single_men, single_women)?;
    let (nx, ny) = data.shape();
    let doc = SpecDocument::from_json(spec).map_err(py_err)?;
    let model = doc.build(nx, ny).map_err(py_err)?;
    let theta = doc.theta.clone().unwrap_or_else(|| model.dist.reference());
    let t = py.detach(|| entropy_spec_test(&model, &data, &theta, boot, seed)).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("statistic", t.statistic)?;
    d.set_item("p_value", t.p_value)?;
    d.set_item("lambda", t.lambda)?;
    d.set_item("replicates", t.replicates)?;
    d.set_item("failed", t.failed)?;
    Ok(d)
}

#[pymodule]
fn cupid(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(identify, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    m.add_function(wrap_pyfunction!(spec_test, m)?)?;
    Ok(())
}
