use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use super::{CounterfactualPath, LevelPath, StateEstimate};
use crate::error::{ArcoError, Result};
use crate::panel::StateId;
use crate::stats::{mean, median};

/// Unit excluded from the `Treated-NY` aggregate.
const OUTLIER_STATE: &str = "NY";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateRatio {
    pub state: StateId,
    pub group: String,
    pub ratio_point: f64,
    pub ratio_lb: f64,
    pub ratio_ub: f64,
    /// Mean of actual over counterfactual across the out-of-sample days.
    pub mean_actual_over_cf: f64,
    pub median_actual_over_cf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRatio {
    pub group: String,
    pub n: usize,
    pub mean: f64,
    pub median: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioReport {
    pub horizon: u32,
    pub states: Vec<StateRatio>,
    pub aggregates: Vec<AggregateRatio>,
}

fn state_ratio(path: &CounterfactualPath, group: &str, horizon: u32) -> Result<StateRatio> {
    let i = horizon
        .checked_sub(path.t_start)
        .map(|i| i as usize)
        .filter(|&i| i < path.len())
        .ok_or_else(|| ArcoError::Window(format!("path for {} does not reach day {horizon}", path.state)))?;
    let actual = path.actual_level[i];
    let inverse: Vec<f64> = path
        .actual_level
        .iter()
        .zip(&path.level_point)
        .map(|(a, p)| a / p)
        .collect();
    Ok(StateRatio {
        state: path.state.clone(),
        group: group.to_string(),
        ratio_point: path.level_point[i] / actual,
        ratio_lb: path.level_lower[i] / actual,
        ratio_ub: path.level_upper[i] / actual,
        mean_actual_over_cf: mean(&inverse),
        median_actual_over_cf: median(&inverse),
    })
}

fn aggregate(group: &str, rows: &[&StateRatio]) -> Option<AggregateRatio> {
    if rows.is_empty() {
        return None;
    }
    let r: Vec<f64> = rows.iter().map(|s| s.ratio_point).collect();
    Some(AggregateRatio {
        group: group.to_string(),
        n: r.len(),
        mean: mean(&r),
        median: median(&r),
    })
}

/// Counterfactual-to-actual ratios at `horizon` for treated units and
/// placebo controls, with `Control`, `Treated` and `Treated-NY` aggregates.
pub fn ratio_report(
    treated: &[CounterfactualPath],
    controls: &[CounterfactualPath],
    horizon: u32,
) -> Result<RatioReport> {
    let mut states = Vec::with_capacity(treated.len() + controls.len());
    for p in controls {
        states.push(state_ratio(p, "control", horizon)?);
    }
    for p in treated {
        states.push(state_ratio(p, "treated", horizon)?);
    }
    let of = |g: &str| states.iter().filter(|s| s.group == g).collect::<Vec<_>>();
    let treated_rows = of("treated");
    let without: Vec<&StateRatio> = treated_rows
        .iter()
        .copied()
        .filter(|s| s.state.as_str() != OUTLIER_STATE)
        .collect();
    let aggregates = [
        aggregate("Control", &of("control")),
        aggregate("Treated", &treated_rows),
        aggregate("Treated-NY", &without),
    ]
    .into_iter()
    .flatten()
    .collect();
    Ok(RatioReport {
        horizon,
        states,
        aggregates,
    })
}

impl RatioReport {
    pub fn state(&self, state: &str) -> Option<&StateRatio> {
        self.states.iter().find(|s| s.state.as_str() == state)
    }

    pub fn aggregate(&self, group: &str) -> Option<&AggregateRatio> {
        self.aggregates.iter().find(|a| a.group == group)
    }

    pub fn write_states_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for s in &self.states {
            w.serialize(s)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_aggregates_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for a in &self.aggregates {
            w.serialize(a)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Log-space gap between actual and counterfactual.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapPath {
    pub state: StateId,
    pub t_start: u32,
    pub gap: Vec<f64>,
}

impl GapPath {
    pub fn median(&self) -> f64 {
        median(&self.gap)
    }
}

pub fn gap_path(path: &CounterfactualPath) -> GapPath {
    GapPath {
        state: path.state.clone(),
        t_start: path.t_start,
        gap: path
            .actual_log()
            .iter()
            .zip(&path.log_point)
            .map(|(a, p)| a - p)
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathRow {
    pub state: StateId,
    pub t: u32,
    pub actual: f64,
    pub point: f64,
    pub lb: f64,
    pub ub: f64,
}

fn write_rows<W: Write>(writer: W, rows: impl Iterator<Item = PathRow>) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Level-space rows `state,t,actual,point,lb,ub`.
pub fn write_paths_csv<W: Write>(writer: W, paths: &[&CounterfactualPath]) -> Result<()> {
    write_rows(
        writer,
        paths.iter().flat_map(|p| {
            p.days().enumerate().map(move |(i, t)| PathRow {
                state: p.state.clone(),
                t,
                actual: p.actual_level[i],
                point: p.level_point[i],
                lb: p.level_lower[i],
                ub: p.level_upper[i],
            })
        }),
    )
}

pub fn write_level_paths_csv<W: Write>(writer: W, paths: &[&LevelPath]) -> Result<()> {
    write_rows(
        writer,
        paths.iter().flat_map(|p| {
            p.days().enumerate().map(move |(i, t)| PathRow {
                state: p.state.clone(),
                t,
                actual: p.actual[i],
                point: p.point[i],
                lb: p.lower[i],
                ub: p.upper[i],
            })
        }),
    )
}

/// JSON form of a fit: coefficients keyed by column name.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitRecord {
    pub state: StateId,
    pub intercept: f64,
    pub omega: BTreeMap<String, f64>,
    pub lambda: f64,
    pub bic: f64,
    pub lambda_max: f64,
    pub last_in_sample: u32,
    pub rss: f64,
    pub kappa: BTreeMap<String, f64>,
}

impl From<&StateEstimate> for FitRecord {
    fn from(e: &StateEstimate) -> Self {
        let names = &e.fit.column_names;
        FitRecord {
            state: e.state.clone(),
            intercept: e.fit.intercept,
            omega: names.iter().cloned().zip(e.fit.omega.iter().copied()).collect(),
            lambda: e.fit.lambda,
            bic: e.fit.bic,
            lambda_max: e.lambda_max,
            last_in_sample: e.last_in_sample,
            rss: e.fit.rss,
            kappa: names.iter().cloned().zip(e.kappa.iter().copied()).collect(),
        }
    }
}
