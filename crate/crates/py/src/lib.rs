//! Python module `daml_py`: ranking estimators, BPR and the synthetic
//! panels, for quick checks from notebooks.

use daml_core::data::{abc_demo_table as demo_table, gen_negbin_panel, gen_synthetic_1d as synthetic_1d, NegBinPanelSpec};
use daml_core::{Estimator, Outcome, RankingVector, SampleBatch};
use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: daml_core::Error) -> PyErr {
    if e.is_io() {
        PyIOError::new_err(e.to_string())
    } else if e.is_numerical() {
        PyArithmeticError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn batch(samples: Vec<Vec<f64>>) -> daml_core::Result<SampleBatch> {
    SampleBatch::from_rows(&samples)
}

/// Ranking vector from forecast samples (rows are draws, columns sites).
fn rank_with(samples: Vec<Vec<f64>>, estimator: Estimator) -> daml_core::Result<Vec<f64>> {
    let b = batch(samples)?;
    let r = match estimator {
        Estimator::Mean => daml_core::mean_rank(&b)?,
        Estimator::Ratio => daml_core::ratio_rank(&b)?,
    };
    Ok(r.as_slice().to_vec())
}

fn bpr_of(scores: Vec<f64>, y: Vec<f64>, k: usize) -> daml_core::Result<f64> {
    if scores.len() != y.len() {
        return Err(daml_core::Error::Shape(format!("{} scores for {} outcomes", scores.len(), y.len())));
    }
    let ids = daml_core::topk_ids(&RankingVector::new(scores)?, k)?;
    daml_core::bpr(&ids, &Outcome::new(y)?, k)
}

/// Mean of the forecast samples per site.
#[pyfunction]
fn mean_rank(samples: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    rank_with(samples, Estimator::Mean).map_err(to_py)
}

/// Expected share of the period's total events per site.
#[pyfunction]
fn ratio_rank(samples: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    rank_with(samples, Estimator::Ratio).map_err(to_py)
}

/// Indices of the `k` highest scores, ties broken by lower index.
#[pyfunction]
fn topk_ids(scores: Vec<f64>, k: usize) -> PyResult<Vec<usize>> {
    let ids = daml_core::topk_ids(&RankingVector::new(scores).map_err(to_py)?, k).map_err(to_py)?;
    Ok(ids.as_slice().to_vec())
}

/// Events reached by the top-`k` of `scores`, relative to the best possible.
#[pyfunction]
fn bpr(scores: Vec<f64>, y: Vec<f64>, k: usize) -> PyResult<f64> {
    bpr_of(scores, y, k).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (ks = vec![1, 3, 6], trials = 10_000, samples = 50_000, seed = 0))]
fn abc_demo_table<'py>(py: Python<'py>, ks: Vec<usize>, trials: usize, samples: usize, seed: u64) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let rows = py.detach(|| demo_table(&ks, trials, samples, seed)).map_err(to_py)?;
    rows.into_iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("estimator", r.estimator.name())?;
            d.set_item("k", r.k)?;
            d.set_item("bpr_mean", r.bpr_mean)?;
            d.set_item("bpr_std_err", r.bpr_std_err)?;
            d.set_item("selection_freq", r.selection_freq)?;
            Ok(d)
        })
        .collect()
}

/// Counts of the seven-site benchmark as a list of periods.
#[pyfunction]
#[pyo3(signature = (seed = 0))]
fn gen_synthetic_1d(seed: u64) -> Vec<Vec<f64>> {
    synthetic_1d(seed).counts().rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Counts and features of a synthetic negative binomial panel. Features are
/// nested as `[period][site][feature]`.
#[pyfunction]
#[pyo3(signature = (n_sites = 20, n_periods = 60, n_features = 2, seed = 0, q_range = (0.1, 0.6)))]
fn gen_negbin<'py>(
    py: Python<'py>,
    n_sites: usize,
    n_periods: usize,
    n_features: usize,
    seed: u64,
    q_range: (f64, f64),
) -> PyResult<Bound<'py, PyDict>> {
    let panel = gen_negbin_panel(NegBinPanelSpec { n_sites, n_periods, n_features, seed, q_range }).map_err(to_py)?;
    let counts: Vec<Vec<f64>> = panel.counts().rows().into_iter().map(|r| r.to_vec()).collect();
    let features: Vec<Vec<Vec<f64>>> = (0..panel.n_periods())
        .map(|t| {
            let p = panel.period(t);
            (0..n_sites).map(|s| p.site_features(s).to_vec()).collect()
        })
        .collect();
    let d = PyDict::new(py);
    d.set_item("counts", counts)?;
    d.set_item("features", features)?;
    d.set_item("feature_names", panel.feature_names().to_vec())?;
    Ok(d)
}

#[pymodule]
fn daml_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(mean_rank, m)?)?;
    m.add_function(wrap_pyfunction!(ratio_rank, m)?)?;
    m.add_function(wrap_pyfunction!(topk_ids, m)?)?;
    m.add_function(wrap_pyfunction!(bpr, m)?)?;
    m.add_function(wrap_pyfunction!(abc_demo_table, m)?)?;
    m.add_function(wrap_pyfunction!(gen_synthetic_1d, m)?)?;
    m.add_function(wrap_pyfunction!(gen_negbin, m)?)?;
    Ok(())
}
