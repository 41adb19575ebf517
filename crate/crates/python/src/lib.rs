//! Python bindings: weighted LASSO fits, panels, ArCo estimates, placebo
//! runs, the synthetic generator and the coverage experiment. Structured
//! results come back as plain dicts and lists.

use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use arco::engine::{fit_state, growth_extrapolation, EngineSettings, FitRecord, GrowthStat, StateEstimate};
use arco::panel::{
    assign_groups, bundled_states_meta, parse_jhu_csv, parse_states_meta, DesignParams, EpiPanel, StateId, StudyDesign,
};
use arco::validation::{
    coverage_experiment, generate_synthetic, run_placebo, PlaceboSettings, PlaceboWindow, SyntheticSpec,
};
use arco::wlasso::{self, DesignMatrix, FitSettings, PenaltyWeights};
use chrono::NaiveDate;
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::de::DeserializeOwned;
use serde::Serialize;

create_exception!(arco_py, ArcoError, PyException);

fn err(e: arco::ArcoError) -> PyErr {
    ArcoError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| ArcoError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: DeserializeOwned>(value: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = value.py().import("json")?.call_method1("dumps", (value,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| ArcoError::new_err(e.to_string()))
}

fn design_of(
    columns: Vec<Vec<f64>>,
    names: Option<Vec<String>>,
    trend_column: Option<usize>,
) -> PyResult<DesignMatrix> {
    let x = match names {
        Some(names) => DesignMatrix::new(columns, names),
        None => DesignMatrix::from_columns(columns),
    }
    .map_err(err)?;
    Ok(match trend_column {
        Some(j) => x.with_trend_column(j),
        None => x,
    })
}

fn kappa_of(x: &DesignMatrix, kappa: Option<Vec<f64>>) -> PyResult<PenaltyWeights> {
    match kappa {
        Some(k) => PenaltyWeights::new(k),
        None => PenaltyWeights::from_design(x),
    }
    .map_err(err)
}

#[pyfunction]
fn soft_threshold(z: f64, gamma: f64) -> f64 {
    wlasso::soft_threshold(z, gamma)
}

/// `κ_j = |x_j| at the last row`, or 1 for the trend column.
#[pyfunction]
#[pyo3(signature = (columns, trend_column=None))]
fn penalty_weights(columns: Vec<Vec<f64>>, trend_column: Option<usize>) -> PyResult<Vec<f64>> {
    let x = design_of(columns, None, trend_column)?;
    Ok(PenaltyWeights::from_design(&x).map_err(err)?.as_slice().to_vec())
}

#[pyclass(name = "WlassoFit", frozen)]
struct PyWlassoFit {
    inner: wlasso::WlassoFit,
}

#[pymethods]
impl PyWlassoFit {
    #[getter]
    fn intercept(&self) -> f64 {
        self.inner.intercept
    }

    #[getter]
    fn omega(&self) -> Vec<f64> {
        self.inner.omega.clone()
    }

    #[getter]
    fn column_names(&self) -> Vec<String> {
        self.inner.column_names.clone()
    }

    #[getter]
    fn lam(&self) -> f64 {
        self.inner.lambda
    }

    #[getter]
    fn bic(&self) -> f64 {
        self.inner.bic
    }

    #[getter]
    fn rss(&self) -> f64 {
        self.inner.rss
    }

    #[getter]
    fn objective(&self) -> f64 {
        self.inner.objective
    }

    #[getter]
    fn residuals(&self) -> Vec<f64> {
        self.inner.in_sample_residuals.clone()
    }

    fn support(&self) -> Vec<usize> {
        self.inner.support()
    }

    fn predict(&self, row: Vec<f64>) -> f64 {
        self.inner.predict_row(&row)
    }

    fn __repr__(&self) -> String {
        format!(
            "WlassoFit(lam={:.4e}, intercept={:.6}, nonzero={})",
            self.inner.lambda,
            self.inner.intercept,
            self.inner.nonzero()
        )
    }
}

/// Fits at one λ. `columns` holds one list per regressor.
#[pyfunction]
#[pyo3(signature = (columns, y, lam, kappa=None, names=None, trend_column=None))]
fn fit_at_lambda(
    columns: Vec<Vec<f64>>,
    y: Vec<f64>,
    lam: f64,
    kappa: Option<Vec<f64>>,
    names: Option<Vec<String>>,
    trend_column: Option<usize>,
) -> PyResult<PyWlassoFit> {
    let x = design_of(columns, names, trend_column)?;
    let kappa = kappa_of(&x, kappa)?;
    let inner = wlasso::fit_at_lambda(&x, &y, &kappa, lam, &FitSettings::default()).map_err(err)?;
    Ok(PyWlassoFit { inner })
}

/// Fits the geometric λ path and returns `(fit, lambda_max)` for the BIC choice.
#[pyfunction]
#[pyo3(signature = (columns, y, kappa=None, grid=100, names=None, trend_column=None))]
fn fit_bic(
    columns: Vec<Vec<f64>>,
    y: Vec<f64>,
    kappa: Option<Vec<f64>>,
    grid: usize,
    names: Option<Vec<String>>,
    trend_column: Option<usize>,
) -> PyResult<(PyWlassoFit, f64)> {
    let x = design_of(columns, names, trend_column)?;
    let kappa = kappa_of(&x, kappa)?;
    let sel = wlasso::select_by_bic(&x, &y, &kappa, grid, &FitSettings::default()).map_err(err)?;
    Ok((PyWlassoFit { inner: sel.fit }, sel.lambda_max))
}

/// Cumulative cases and deaths per state on the epidemic clock.
#[pyclass(name = "Panel", frozen)]
struct PyPanel {
    inner: EpiPanel,
}

#[pymethods]
impl PyPanel {
    /// Reads `state,epi_day,calendar_date,cum_cases,cum_deaths`.
    #[staticmethod]
    fn from_csv(path: PathBuf) -> PyResult<Self> {
        let file = File::open(&path)?;
        let inner = EpiPanel::read_normalized_csv(BufReader::new(file)).map_err(err)?;
        Ok(PyPanel { inner })
    }

    /// Builds a panel from the JHU US cases and deaths time series; `cutoff` is `YYYY-MM-DD`.
    #[staticmethod]
    #[pyo3(signature = (cases_csv, deaths_csv, cutoff="2020-05-11"))]
    fn from_jhu(cases_csv: PathBuf, deaths_csv: PathBuf, cutoff: &str) -> PyResult<Self> {
        let cutoff = NaiveDate::parse_from_str(cutoff, "%Y-%m-%d").map_err(|e| ArcoError::new_err(e.to_string()))?;
        let inner = parse_jhu_csv(&std::fs::read(cases_csv)?, &std::fs::read(deaths_csv)?, cutoff).map_err(err)?;
        Ok(PyPanel { inner })
    }

    fn to_csv(&self, path: PathBuf) -> PyResult<()> {
        self.inner.write_normalized_csv(File::create(path)?).map_err(err)
    }

    fn states(&self) -> Vec<String> {
        self.inner.states().map(|s| s.to_string()).collect()
    }

    /// Cumulative cases over epi-days `[start, end]`.
    fn cases(&self, state: &str, start: u32, end: u32) -> PyResult<Vec<f64>> {
        let series = self.inner.require(&StateId::new(state)).map_err(err)?;
        series.cases_in(start, end).map_err(err)
    }

    fn deaths(&self, state: &str, start: u32, end: u32) -> PyResult<Vec<f64>> {
        let series = self.inner.require(&StateId::new(state)).map_err(err)?;
        series.deaths_in(start, end).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.states().count()
    }

    fn __repr__(&self) -> String {
        format!("Panel({} states)", self.inner.states().count())
    }
}

fn study_design(panel: &EpiPanel, meta_csv: Option<PathBuf>, horizon: u32) -> PyResult<StudyDesign> {
    let meta = match meta_csv {
        Some(path) => parse_states_meta(&std::fs::read(path)?).map_err(err)?,
        None => bundled_states_meta(),
    };
    let params = DesignParams {
        horizon,
        ..DesignParams::default()
    };
    Ok(assign_groups(panel, &meta, &params))
}

fn engine_settings(bootstrap_b: usize, seed: u64, block_len: Option<usize>, refit_lambda: bool) -> EngineSettings {
    let mut s = EngineSettings::default();
    s.bootstrap.replicates = bootstrap_b;
    s.bootstrap.seed = seed;
    s.bootstrap.block_len = block_len;
    s.bootstrap.reselect_lambda = refit_lambda;
    s
}

fn estimate_dict<'py>(py: Python<'py>, e: &StateEstimate) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("fit", to_py(py, &FitRecord::from(e))?)?;
    d.set_item("donors", e.donors.iter().map(|s| s.to_string()).collect::<Vec<_>>())?;
    let p = &e.path;
    d.set_item("days", p.days().collect::<Vec<_>>())?;
    d.set_item("log_point", p.log_point.clone())?;
    d.set_item("log_lower", p.log_lower.clone())?;
    d.set_item("log_upper", p.log_upper.clone())?;
    d.set_item("actual", p.actual_level.clone())?;
    d.set_item("ratio_at_horizon", p.ratio_at(e.horizon))?;
    Ok(d)
}

/// ArCo estimate for one treated state: fit, counterfactual path and band.
#[pyfunction]
#[pyo3(signature = (panel, state, meta_csv=None, horizon=58, bootstrap_b=1000, seed=20200511, block_len=None, refit_lambda=false))]
#[allow(clippy::too_many_arguments)]
fn fit_treated<'py>(
    py: Python<'py>,
    panel: &PyPanel,
    state: &str,
    meta_csv: Option<PathBuf>,
    horizon: u32,
    bootstrap_b: usize,
    seed: u64,
    block_len: Option<usize>,
    refit_lambda: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let design = study_design(&panel.inner, meta_csv, horizon)?;
    let settings = engine_settings(bootstrap_b, seed, block_len, refit_lambda);
    let e = py
        .detach(|| fit_state(&panel.inner, &design, &StateId::new(state), &settings))
        .map_err(err)?;
    estimate_dict(py, &e)
}

/// Placebo run for a control state at `pseudo_t0` (`window` is `at-intervention` or `plus-lag`).
#[pyfunction]
#[pyo3(signature = (panel, state, meta_csv=None, pseudo_t0=36, window="at-intervention", bootstrap_b=1000, seed=20200511))]
#[allow(clippy::too_many_arguments)]
fn placebo<'py>(
    py: Python<'py>,
    panel: &PyPanel,
    state: &str,
    meta_csv: Option<PathBuf>,
    pseudo_t0: u32,
    window: &str,
    bootstrap_b: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let window = match window {
        "at-intervention" => PlaceboWindow::AtIntervention,
        "plus-lag" => PlaceboWindow::PlusLag,
        other => return Err(ArcoError::new_err(format!("unknown placebo window `{other}`"))),
    };
    let design = study_design(&panel.inner, meta_csv, 58)?;
    let settings = engine_settings(bootstrap_b, seed, None, false);
    let placebo = PlaceboSettings { pseudo_t0, window };
    let run = py
        .detach(|| run_placebo(&panel.inner, &design, &StateId::new(state), &placebo, &settings))
        .map_err(err)?;
    let d = estimate_dict(py, &run.estimate)?;
    d.set_item("last_in_sample", run.last_in_sample)?;
    d.set_item("ratio_series", run.ratio_series)?;
    Ok(d)
}

/// Growth-rate extrapolation of cases from day `last`; `stat` is `mean` or `median`.
#[pyfunction]
#[pyo3(signature = (panel, state, last, horizon=58, stat="mean", window=7, in_sample_start=10))]
fn growth_path(
    panel: &PyPanel,
    state: &str,
    last: u32,
    horizon: u32,
    stat: &str,
    window: u32,
    in_sample_start: u32,
) -> PyResult<(f64, Vec<f64>)> {
    let stat = match stat {
        "mean" => GrowthStat::Mean,
        "median" => GrowthStat::Median,
        other => return Err(ArcoError::new_err(format!("unknown statistic `{other}`"))),
    };
    let series = panel.inner.require(&StateId::new(state)).map_err(err)?;
    let g = growth_extrapolation(series, in_sample_start, last, horizon, stat, window).map_err(err)?;
    Ok((g.growth, g.level))
}

/// The default synthetic specification as a dict.
#[pyfunction]
fn default_synthetic_spec(py: Python<'_>) -> PyResult<Bound<'_, PyAny>> {
    to_py(py, &SyntheticSpec::default())
}

/// Generates a synthetic panel; returns `(panel, treated, controls, true_ratio_at_horizon)`.
#[pyfunction]
#[pyo3(signature = (spec=None))]
fn synthetic_panel(spec: Option<&Bound<'_, PyAny>>) -> PyResult<(PyPanel, String, Vec<String>, f64)> {
    let spec: SyntheticSpec = match spec {
        Some(s) => from_py(s)?,
        None => SyntheticSpec::default(),
    };
    let syn = generate_synthetic(&spec).map_err(err)?;
    let ratio = syn.true_ratio_at(spec.horizon);
    Ok((
        PyPanel { inner: syn.panel },
        syn.treated.to_string(),
        syn.controls.iter().map(|s| s.to_string()).collect(),
        ratio,
    ))
}

/// Bootstrap coverage experiment over `reps` synthetic panels (at least 200).
#[pyfunction]
#[pyo3(signature = (spec=None, reps=500, bootstrap_b=500, seed=1))]
fn coverage<'py>(
    py: Python<'py>,
    spec: Option<&Bound<'py, PyAny>>,
    reps: usize,
    bootstrap_b: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let spec: SyntheticSpec = match spec {
        Some(s) => from_py(s)?,
        None => SyntheticSpec::default(),
    };
    let settings = engine_settings(bootstrap_b, seed, None, false);
    let report = py
        .detach(|| coverage_experiment(&spec, reps, &settings, seed))
        .map_err(err)?;
    to_py(py, &report)
}

/// Runs the command-line interface with `args` (without the program name); returns the exit code.
#[pyfunction]
fn cli(py: Python<'_>, args: Vec<String>) -> PyResult<i32> {
    use clap::Parser;
    let argv = std::iter::once("arco".to_string()).chain(args);
    let parsed = arco::cli::Cli::try_parse_from(argv).map_err(|e| ArcoError::new_err(e.to_string()))?;
    Ok(py.detach(|| arco::cli::run(&parsed)))
}

#[pymodule]
fn arco_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    register(m)
}

/// Adds the classes and functions to `m`; the extension module entry point calls this.
pub fn register(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("ArcoError", m.py().get_type::<ArcoError>())?;
    m.add_class::<PyWlassoFit>()?;
    m.add_class::<PyPanel>()?;
    m.add_function(wrap_pyfunction!(soft_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(penalty_weights, m)?)?;
    m.add_function(wrap_pyfunction!(fit_at_lambda, m)?)?;
    m.add_function(wrap_pyfunction!(fit_bic, m)?)?;
    m.add_function(wrap_pyfunction!(fit_treated, m)?)?;
    m.add_function(wrap_pyfunction!(placebo, m)?)?;
    m.add_function(wrap_pyfunction!(growth_path, m)?)?;
    m.add_function(wrap_pyfunction!(default_synthetic_spec, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_panel, m)?)?;
    m.add_function(wrap_pyfunction!(coverage, m)?)?;
    m.add_function(wrap_pyfunction!(cli, m)?)?;
    Ok(())
}
