//! Per-state estimation: design construction, WLASSO fit, counterfactual
//! projection with bootstrap bands, and the quantities derived from it.

mod bootstrap;
mod levels;
mod report;

use serde::Serialize;

use crate::error::{ArcoError, Result};
use crate::panel::{EpiPanel, StateId, StudyDesign};
use crate::wlasso::{select_by_bic, DesignMatrix, FitSettings, PathPoint, PenaltyWeights, WlassoFit};

pub use bootstrap::{
    bootstrap_band, default_block_len, moving_block_resample, BootstrapBand, BootstrapSettings, ReplicateFit,
};
pub use levels::{anchored_level_path, deaths_counterfactual, growth_extrapolation, GrowthPath, GrowthStat, LevelPath};
pub use report::{
    gap_path, ratio_report, write_level_paths_csv, write_paths_csv, AggregateRatio, FitRecord, GapPath, PathRow,
    RatioReport, StateRatio,
};

/// Name of the logarithmic trend column.
pub const TREND_COLUMN: &str = "log_t";

#[derive(Debug, Clone, PartialEq)]
pub struct EngineSettings {
    pub fit: FitSettings,
    pub lambda_grid: usize,
    pub bootstrap: BootstrapSettings,
}

impl Default for EngineSettings {
    fn default() -> Self {
        EngineSettings {
            fit: FitSettings::default(),
            lambda_grid: 100,
            bootstrap: BootstrapSettings::default(),
        }
    }
}

/// Regressors and response for one unit, in-sample and out-of-sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ArcoData {
    pub state: StateId,
    pub donors: Vec<StateId>,
    pub in_sample_start: u32,
    pub last_in_sample: u32,
    pub horizon: u32,
    pub x_in: DesignMatrix,
    pub y_in: Vec<f64>,
    pub x_out: DesignMatrix,
    pub actual_out: Vec<f64>,
}

fn design_rows(panel: &EpiPanel, donors: &[StateId], start: u32, end: u32) -> Result<DesignMatrix> {
    let mut columns = Vec::with_capacity(donors.len() + 1);
    let mut names = Vec::with_capacity(donors.len() + 1);
    for d in donors {
        columns.push(panel.require(d)?.log_cases(start, end)?);
        names.push(d.to_string());
    }
    columns.push((start..=end).map(|t| f64::from(t).ln()).collect());
    names.push(TREND_COLUMN.to_string());
    Ok(DesignMatrix::new(columns, names)?.with_trend_column(donors.len()))
}

/// Log cumulative cases of `donors` plus `log t` over `[start, end]` as
/// regressors, the unit's own log cumulative cases as response, and the
/// same regressors over `[end + 1, horizon]` for projection.
pub fn build_arco_data(
    panel: &EpiPanel,
    state: &StateId,
    donors: &[StateId],
    start: u32,
    end: u32,
    horizon: u32,
    min_in_sample: u32,
) -> Result<ArcoData> {
    if donors.is_empty() {
        return Err(ArcoError::Config(format!("empty donor pool for {state}")));
    }
    if donors.contains(state) {
        return Err(ArcoError::Config(format!("{state} appears in its own donor pool")));
    }
    if end < start || end - start + 1 < min_in_sample {
        return Err(ArcoError::DesignViolation {
            state: state.to_string(),
            message: format!("in-sample window [{start}, {end}] is shorter than {min_in_sample} days"),
        });
    }
    if end >= horizon {
        return Err(ArcoError::DesignViolation {
            state: state.to_string(),
            message: format!("last in-sample day {end} leaves no projection window before {horizon}"),
        });
    }
    let series = panel.require(state)?;
    Ok(ArcoData {
        state: state.clone(),
        donors: donors.to_vec(),
        in_sample_start: start,
        last_in_sample: end,
        horizon,
        x_in: design_rows(panel, donors, start, end)?,
        y_in: series.log_cases(start, end)?,
        x_out: design_rows(panel, donors, end + 1, horizon)?,
        actual_out: series.cases_in(end + 1, horizon)?,
    })
}

/// `b₀ + Σ_j ω_j x_jt` for each row of `x`.
pub fn predict(intercept: f64, omega: &[f64], x: &DesignMatrix) -> Vec<f64> {
    (0..x.n_rows())
        .map(|t| intercept + (0..x.n_cols()).map(|j| omega[j] * x.column(j)[t]).sum::<f64>())
        .collect()
}

/// Projects `fit` over `[t_start, t_end]` by reading each named column from
/// the panel (and `log t` for the trend column).
pub fn project(fit: &WlassoFit, panel: &EpiPanel, t_start: u32, t_end: u32) -> Result<Vec<f64>> {
    let mut out = vec![fit.intercept; (t_end + 1).saturating_sub(t_start) as usize];
    for (name, &w) in fit.column_names.iter().zip(&fit.omega) {
        let values = if name == TREND_COLUMN {
            (t_start..=t_end).map(|t| f64::from(t).ln()).collect()
        } else {
            panel.require(&StateId::new(name.as_str()))?.log_cases(t_start, t_end)?
        };
        for (o, v) in out.iter_mut().zip(values) {
            *o += w * v;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InSampleFit {
    pub t_start: u32,
    pub fitted_log: Vec<f64>,
    pub actual_log: Vec<f64>,
}

/// Out-of-sample counterfactual over `[t_start, t_start + len − 1]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CounterfactualPath {
    pub state: StateId,
    pub t_start: u32,
    pub log_point: Vec<f64>,
    pub log_lower: Vec<f64>,
    pub log_upper: Vec<f64>,
    pub level_point: Vec<f64>,
    pub level_lower: Vec<f64>,
    pub level_upper: Vec<f64>,
    pub actual_level: Vec<f64>,
    pub in_sample: InSampleFit,
}

impl CounterfactualPath {
    /// Assembles a path from log-space point and band; levels are their exponentials.
    pub fn from_log(
        state: StateId,
        t_start: u32,
        log_point: Vec<f64>,
        log_lower: Vec<f64>,
        log_upper: Vec<f64>,
        actual_level: Vec<f64>,
        in_sample: InSampleFit,
    ) -> Self {
        let exp = |v: &[f64]| v.iter().map(|x| x.exp()).collect::<Vec<_>>();
        CounterfactualPath {
            state,
            t_start,
            level_point: exp(&log_point),
            level_lower: exp(&log_lower),
            level_upper: exp(&log_upper),
            log_point,
            log_lower,
            log_upper,
            actual_level,
            in_sample,
        }
    }

    pub fn len(&self) -> usize {
        self.log_point.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_point.is_empty()
    }

    pub fn t_end(&self) -> u32 {
        self.t_start + self.len() as u32 - 1
    }

    pub fn days(&self) -> impl Iterator<Item = u32> {
        self.t_start..self.t_start + self.len() as u32
    }

    fn index(&self, t: u32) -> Option<usize> {
        let i = t.checked_sub(self.t_start)? as usize;
        (i < self.len()).then_some(i)
    }

    /// Counterfactual over actual at day `t`.
    pub fn ratio_at(&self, t: u32) -> Option<f64> {
        self.index(t).map(|i| self.level_point[i] / self.actual_level[i])
    }

    pub fn actual_log(&self) -> Vec<f64> {
        self.actual_level.iter().map(|v| v.ln()).collect()
    }

    /// Counterfactual over actual on every day from the first in-sample day to the end.
    pub fn ratio_series(&self) -> Vec<(u32, f64)> {
        let ins = &self.in_sample;
        let mut out: Vec<(u32, f64)> = ins
            .fitted_log
            .iter()
            .zip(&ins.actual_log)
            .enumerate()
            .map(|(i, (f, a))| (ins.t_start + i as u32, (f - a).exp()))
            .collect();
        out.extend(
            self.days()
                .zip(self.level_point.iter().zip(&self.actual_level))
                .map(|(t, (p, a))| (t, p / a)),
        );
        out
    }
}

/// Everything estimated for one unit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateEstimate {
    pub state: StateId,
    pub donors: Vec<StateId>,
    pub last_in_sample: u32,
    pub horizon: u32,
    pub kappa: Vec<f64>,
    pub lambda_max: f64,
    pub fit: WlassoFit,
    pub lambda_path: Vec<PathPoint>,
    pub path: CounterfactualPath,
    #[serde(skip)]
    pub band: BootstrapBand,
}

/// Fits by BIC, projects, and attaches the bootstrap band.
pub fn estimate(data: &ArcoData, settings: &EngineSettings) -> Result<StateEstimate> {
    let kappa = PenaltyWeights::from_design(&data.x_in)?;
    let selection = select_by_bic(&data.x_in, &data.y_in, &kappa, settings.lambda_grid, &settings.fit)?;
    let fit = selection.fit;
    let log_point = predict(fit.intercept, &fit.omega, &data.x_out);
    let label = format!("bootstrap/{}/{}", data.state, data.last_in_sample);
    let band = bootstrap_band(&fit, &data.x_in, &data.y_in, &kappa, &data.x_out, settings, &label)?;

    let log_lower = band.log_lower.iter().zip(&log_point).map(|(l, p)| l.min(*p)).collect();
    let log_upper = band.log_upper.iter().zip(&log_point).map(|(u, p)| u.max(*p)).collect();
    let in_sample = InSampleFit {
        t_start: data.in_sample_start,
        fitted_log: data
            .y_in
            .iter()
            .zip(&fit.in_sample_residuals)
            .map(|(y, r)| y - r)
            .collect(),
        actual_log: data.y_in.clone(),
    };
    let path = CounterfactualPath::from_log(
        data.state.clone(),
        data.last_in_sample + 1,
        log_point,
        log_lower,
        log_upper,
        data.actual_out.clone(),
        in_sample,
    );
    Ok(StateEstimate {
        state: data.state.clone(),
        donors: data.donors.clone(),
        last_in_sample: data.last_in_sample,
        horizon: data.horizon,
        kappa: kappa.as_slice().to_vec(),
        lambda_max: selection.lambda_max,
        fit,
        lambda_path: selection.path,
        path,
        band,
    })
}

/// Estimates a treated state against every control, over `[in_sample_start, L]`.
pub fn fit_state(
    panel: &EpiPanel,
    design: &StudyDesign,
    state: &StateId,
    settings: &EngineSettings,
) -> Result<StateEstimate> {
    let last = design
        .assignment(state)
        .and_then(|a| a.last_in_sample)
        .ok_or_else(|| ArcoError::DesignViolation {
            state: state.to_string(),
            message: "no lockdown day in the study design".into(),
        })?;
    let donors = design.donors_for(state);
    let data = build_arco_data(
        panel,
        state,
        &donors,
        design.params.in_sample_start,
        last,
        design.params.horizon,
        design.params.min_in_sample,
    )?;
    estimate(&data, settings)
}
