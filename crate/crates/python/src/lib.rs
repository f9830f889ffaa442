//! Python bindings. Every function takes the same JSON config text the CLI
//! reads and returns plain Python values.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use rwpre_core::annealed::AnnealedModel;
use rwpre_core::config::RunConfig;
use rwpre_core::environment::d2_renewal_speed;
use rwpre_core::green::{self, GreenTable};
use rwpre_core::lace::{self, pi_table, speed_series};
use rwpre_core::lattice::{PathHistory, Site, Step};
use rwpre_core::simulate::{speed_estimate, Method, SimConfig, DEFAULT_GUARD};
use rwpre_core::Error;

fn err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::Spec(_) | Error::Dimensions(_) | Error::Direction(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn load(config: &str) -> PyResult<RunConfig> {
    RunConfig::from_str(config).map_err(err)
}

/// List of (check, pass, detail) for a full environment spec.
#[pyfunction]
fn validate(config: &str) -> PyResult<Vec<(String, bool, String)>> {
    let cfg = load(config)?;
    let report = cfg.spec().map_err(err)?.validate();
    Ok(report.checks.into_iter().map(|c| (c.name, c.pass, c.detail)).collect())
}

/// Annealed kernel at the endpoint of the path given as steps like "+1", "-2".
#[pyfunction]
fn annealed_kernel(config: &str, steps: Vec<String>) -> PyResult<Vec<f64>> {
    let cfg = load(config)?;
    let spec = cfg.spec().map_err(err)?;
    let steps: Vec<Step> = steps.iter().map(|s| Step::parse(s)).collect::<Result<_, _>>().map_err(err)?;
    let h = PathHistory::from_steps(Site::origin(), &steps);
    let model = AnnealedModel::<f64>::new(spec);
    Ok(model.kernel(&h.site_stats(&h.terminal())).map_err(err)?.probs)
}

/// Truncated lace series: speed vector, its β-derivative along e1, partial
/// sums by m and the largest row sum.
#[pyfunction]
#[pyo3(signature = (config, m_max = 6, n_max = None, beta = None))]
fn lace_series<'py>(py: Python<'py>, config: &str, m_max: usize, n_max: Option<usize>, beta: Option<f64>) -> PyResult<Bound<'py, PyDict>> {
    let cfg = load(config)?;
    let spec = cfg.spec().map_err(err)?;
    let spec = beta.map_or_else(|| spec.clone(), |b| spec.with_beta(b));
    let table = pi_table(&spec, m_max, n_max.unwrap_or(m_max.saturating_sub(1).max(1))).map_err(err)?;
    let s = speed_series(&table);
    let out = PyDict::new(py);
    out.set_item("v", s.v().to_vec())?;
    out.set_item("dv1_dbeta", s.dbeta_partial.last().copied().unwrap_or(0.0))?;
    out.set_item("partial", s.partial.clone())?;
    out.set_item("max_row_sum", table.max_abs_row_sum())?;
    Ok(out)
}

/// Green-function diagnostics for the q-walk of a config.
#[pyfunction]
#[pyo3(signature = (config, k = green::DEFAULT_K, box_radius = None))]
fn green_diagnostics<'py>(py: Python<'py>, config: &str, k: usize, box_radius: Option<usize>) -> PyResult<Bound<'py, PyDict>> {
    let cfg = load(config)?;
    let (q, delta) = cfg.walk().map_err(err)?;
    let table = GreenTable::compute(&q, k, box_radius.unwrap_or(k)).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("g_origin", table.g_origin())?;
    let sups: Vec<(usize, f64, f64, bool)> = table.stats.iter().map(|s| (s.i, s.sup_estimate, s.tail_ratio, s.converged)).collect();
    out.set_item("sups", sups)?;
    match green::alpha(delta, &table) {
        Ok(a) => out.set_item("alpha", a.alpha)?,
        Err(_) => out.set_item("alpha", f64::INFINITY)?,
    }
    Ok(out)
}

/// Monte Carlo speed: (point, standard error) per coordinate.
#[pyfunction]
#[pyo3(signature = (config, steps = 100_000, reps = 10, seed = 1, method = "naive", beta = None))]
fn simulate(config: &str, steps: u64, reps: usize, seed: u64, method: &str, beta: Option<f64>) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let cfg = load(config)?;
    let law = cfg.law(beta).map_err(err)?;
    let method = Method::parse(method).map_err(err)?;
    let sim = SimConfig { n: steps, reps, seed, guard: DEFAULT_GUARD };
    let est = speed_estimate(&law, &sim, method).map_err(err)?;
    Ok((est.point, est.se))
}

/// Truncated bound checks as (name, N, k, lhs, rhs, pass).
#[pyfunction]
#[pyo3(signature = (config, m_max = 8, n_max = 3, k = green::DEFAULT_K))]
fn verify_bounds(config: &str, m_max: usize, n_max: usize, k: usize) -> PyResult<Vec<(String, usize, usize, f64, f64, bool)>> {
    let cfg = load(config)?;
    let spec = cfg.spec().map_err(err)?;
    let table = pi_table(spec, m_max, n_max).map_err(err)?;
    let g = GreenTable::compute(&spec.q, k, k).map_err(err)?;
    let report = lace::verify_bounds(spec, &table, &g.constants()).map_err(err)?;
    Ok(report.checks.into_iter().map(|c| (c.name, c.n, c.k, c.lhs, c.rhs, c.pass)).collect())
}

/// Closed-form speed of the two-dimensional renewal example.
#[pyfunction]
fn renewal_speed(p: f64) -> (f64, f64) {
    let v = d2_renewal_speed(p);
    (v[0], v[1])
}

#[pymodule]
fn rwpre(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    m.add_function(wrap_pyfunction!(annealed_kernel, m)?)?;
    m.add_function(wrap_pyfunction!(lace_series, m)?)?;
    m.add_function(wrap_pyfunction!(green_diagnostics, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(verify_bounds, m)?)?;
    m.add_function(wrap_pyfunction!(renewal_speed, m)?)?;
    Ok(())
}
