//! Python bindings. Reports come back as plain dicts and lists; exact
//! rationals are rendered as strings.

use std::collections::BTreeMap;

use mmp::attractiveness::{check_attractiveness as attractiveness, f_diagnostic as f_values};
use mmp::condensation::{build_canonical, fixed_volume_test, max_site_law, thermodynamic_test};
use mmp::coupling::verify_coupling as coupling;
use mmp::invariance::{build_mmtp_rates, build_mmzrp_rates, check_product_invariance, compute_a, exact_stationarity_check};
use mmp::lattice::{Kernel, Torus};
use mmp::measures::{tilt_and_partition, Marginal};
use mmp::num::{parse_rational, to_f64, Rational};
use mmp::rates::{growth_constant, make_builtin, GrowthCondition, RateFamily};
use mmp::seq::Sequence;
use mmp::simulator::{estimate_observables, run_replicas, Init, SimOptions};
use mmp::MmpError;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

fn err(e: MmpError) -> PyErr {
    match e {
        MmpError::Guard { .. } => PyRuntimeError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// Serializes through JSON so nested reports become dicts.
fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn rational(s: &str) -> PyResult<Rational> {
    parse_rational(s).map_err(err)
}

fn torus(kernel: &Kernel, side: usize) -> PyResult<Torus> {
    Torus::new(kernel.dim(), side).map_err(err)
}

/// Single-site weights μ(n), named by a sequence expression such as
/// `zrp_weights(4)` or `geometric(1/2)`.
#[pyclass(name = "Weights", frozen)]
struct PyWeights {
    inner: Marginal,
}

#[pymethods]
impl PyWeights {
    #[new]
    fn new(expr: &str) -> PyResult<Self> {
        let seq = Sequence::parse(expr).map_err(err)?;
        Ok(PyWeights { inner: Marginal::from_sequence(&seq).map_err(err)? })
    }

    /// μ(0..=upto) as floats.
    fn values(&self, upto: usize) -> PyResult<Vec<f64>> {
        self.inner.weights_f64(upto).map_err(err)
    }

    /// The normalized tilt μ_φ(0..=upto).
    fn tilted(&self, phi: &str, upto: usize) -> PyResult<Vec<f64>> {
        tilt_and_partition(&self.inner, &rational(phi)?).and_then(|t| t.probability_f64(upto)).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("Weights({})", self.inner.describe())
    }
}

/// A rate family g^k_{α,β}.
#[pyclass(name = "RateFamily", frozen)]
struct PyFamily {
    inner: RateFamily,
}

#[pymethods]
impl PyFamily {
    /// A built-in family; parameters are strings or numbers.
    #[staticmethod]
    #[pyo3(signature = (name, params = None))]
    fn builtin(name: &str, params: Option<BTreeMap<String, Bound<'_, PyAny>>>) -> PyResult<Self> {
        let mut p = BTreeMap::new();
        for (k, v) in params.unwrap_or_default() {
            p.insert(k, v.str()?.to_string());
        }
        Ok(PyFamily { inner: make_builtin(name, &p).map_err(err)? })
    }

    /// Departure-only rates with `weights` as invariant marginal.
    #[staticmethod]
    #[pyo3(signature = (weights, c, cutoff = 16))]
    fn departure_rates(weights: &PyWeights, c: &str, cutoff: usize) -> PyResult<Self> {
        let c = Sequence::parse(c).map_err(err)?;
        Ok(PyFamily { inner: build_mmzrp_rates(&weights.inner, c, cutoff).map_err(err)? })
    }

    /// Target-only rates with `weights` as invariant marginal.
    #[staticmethod]
    #[pyo3(signature = (weights, g_star_0, cutoff = 16))]
    fn target_rates(weights: &PyWeights, g_star_0: &str, cutoff: usize) -> PyResult<Self> {
        let g = Sequence::parse(g_star_0).map_err(err)?;
        Ok(PyFamily { inner: build_mmtp_rates(&weights.inner, &g, cutoff).map_err(err)? })
    }

    fn rate(&self, k: usize, alpha: usize, beta: usize) -> f64 {
        self.inner.rate_f64(k, alpha, beta)
    }

    fn rate_exact(&self, k: usize, alpha: usize, beta: usize) -> String {
        self.inner.rate(k, alpha, beta).to_string()
    }

    #[getter]
    fn description(&self) -> String {
        self.inner.description().to_string()
    }

    fn __repr__(&self) -> String {
        format!("RateFamily({})", self.inner.description())
    }
}

/// Product-measure invariance of `weights` under `family` on a grid.
#[pyfunction]
#[pyo3(signature = (family, weights, cutoff = 12, kernel = "totally_asymmetric"))]
fn check_invariance<'py>(
    py: Python<'py>,
    family: &PyFamily,
    weights: &PyWeights,
    cutoff: usize,
    kernel: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let k = Kernel::parse(kernel).map_err(err)?;
    let a = compute_a::<Rational>(&family.inner, &weights.inner, cutoff).map_err(err)?;
    to_py(py, &check_product_invariance(&a, k.symmetry(), 1e-9))
}

#[pyfunction]
#[pyo3(signature = (family, cutoff = 20))]
fn check_attractiveness<'py>(py: Python<'py>, family: &PyFamily, cutoff: usize) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &attractiveness(&family.inner, cutoff))
}

/// Coupling checks; the growth constant is scanned when not given.
#[pyfunction]
#[pyo3(signature = (family, quad_cutoff = 6, growth_constant = None))]
fn verify_coupling<'py>(
    py: Python<'py>,
    family: &PyFamily,
    quad_cutoff: usize,
    growth_constant: Option<&str>,
) -> PyResult<Bound<'py, PyAny>> {
    let c = match growth_constant {
        Some(s) => rational(s)?,
        None => self::growth_constant(&family.inner, GrowthCondition::LipschitzJump, 30),
    };
    let report = py.detach(|| coupling(&family.inner, quad_cutoff, &c));
    to_py(py, &report)
}

/// max |μ_{N,L}Q| over the simplex, computed exactly.
#[pyfunction]
#[pyo3(signature = (family, weights, side, particles, kernel = "totally_asymmetric"))]
fn stationarity<'py>(
    py: Python<'py>,
    family: &PyFamily,
    weights: &PyWeights,
    side: usize,
    particles: usize,
    kernel: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let k = Kernel::parse(kernel).map_err(err)?;
    let t = torus(&k, side)?;
    let report = py
        .detach(|| exact_stationarity_check(&family.inner, &weights.inner, t, particles, &k, mmp::invariance::STATE_GUARD))
        .map_err(err)?;
    to_py(py, &report)
}

/// Runs independent replicas and returns the aggregated observables.
#[pyfunction]
#[pyo3(signature = (family, side, init, seed, events, burn_in = 0, replicas = 1, kernel = "totally_asymmetric", target = None, target_phi = None))]
#[allow(clippy::too_many_arguments)]
fn simulate<'py>(
    py: Python<'py>,
    family: &PyFamily,
    side: usize,
    init: &str,
    seed: u64,
    events: u64,
    burn_in: u64,
    replicas: u64,
    kernel: &str,
    target: Option<&PyWeights>,
    target_phi: Option<&str>,
) -> PyResult<Bound<'py, PyAny>> {
    let k = Kernel::parse(kernel).map_err(err)?;
    let t = torus(&k, side)?;
    let init = Init::parse(init).map_err(err)?;
    let target = match (target, target_phi) {
        (Some(w), Some(phi)) => {
            Some(tilt_and_partition(&w.inner, &rational(phi)?).and_then(|f| f.probability_f64(4096)).map_err(err)?)
        }
        (None, None) => None,
        _ => return Err(PyValueError::new_err("target and target_phi go together")),
    };
    let opts = SimOptions { events, burn_in, target: target.clone(), checkpoints: 0 };
    let agg = py
        .detach(|| {
            let reports = run_replicas(&family.inner, &k, t, &init, seed, replicas, &opts)?;
            estimate_observables(&reports, target.as_deref())
        })
        .map_err(err)?;
    to_py(py, &agg)
}

/// Single-site and maximum-site laws of the canonical ensemble, in floats.
#[pyfunction]
fn canonical<'py>(py: Python<'py>, weights: &PyWeights, sites: usize, particles: usize) -> PyResult<Bound<'py, PyAny>> {
    let ens = build_canonical::<f64>(&weights.inner, sites, particles).map_err(err)?;
    let out = serde_json::json!({
        "partition": ens.partition(),
        "single_site": ens.single_site(),
        "max_site_law": max_site_law(&ens),
    });
    to_py(py, &out)
}

#[pyfunction]
fn fixed_volume<'py>(py: Python<'py>, weights: &PyWeights, sites: usize, particles: Vec<usize>) -> PyResult<Bound<'py, PyAny>> {
    let report = py.detach(|| fixed_volume_test(&weights.inner, sites, &particles)).map_err(err)?;
    to_py(py, &report)
}

#[pyfunction]
#[pyo3(signature = (weights, rho, sizes, marginal_sites = 1, exact = false))]
fn thermodynamic<'py>(
    py: Python<'py>,
    weights: &PyWeights,
    rho: &str,
    sizes: Vec<usize>,
    marginal_sites: usize,
    exact: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let rho = rational(rho)?;
    let report = py.detach(|| thermodynamic_test(&weights.inner, &rho, &sizes, marginal_sites, exact)).map_err(err)?;
    to_py(py, &report)
}

/// [(α, F(α))] for the ratio sequence r(n) = π(n)/π(n+1).
#[pyfunction]
fn f_diagnostic(r: &str, alpha_max: usize) -> PyResult<Vec<(usize, f64)>> {
    let r = Sequence::parse(r).map_err(err)?;
    Ok(f_values(&r, alpha_max).iter().map(|(a, f)| (*a, to_f64(f))).collect())
}

#[pymodule]
fn mmp_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyWeights>()?;
    m.add_class::<PyFamily>()?;
    m.add_function(wrap_pyfunction!(check_invariance, m)?)?;
    m.add_function(wrap_pyfunction!(check_attractiveness, m)?)?;
    m.add_function(wrap_pyfunction!(verify_coupling, m)?)?;
    m.add_function(wrap_pyfunction!(stationarity, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(canonical, m)?)?;
    m.add_function(wrap_pyfunction!(fixed_volume, m)?)?;
    m.add_function(wrap_pyfunction!(thermodynamic, m)?)?;
    m.add_function(wrap_pyfunction!(f_diagnostic, m)?)?;
    Ok(())
}
