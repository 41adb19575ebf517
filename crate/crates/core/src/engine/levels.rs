use serde::{Deserialize, Serialize};

use super::{ReplicateFit, StateEstimate, TREND_COLUMN};
use crate::error::{ArcoError, Result};
use crate::panel::{EpiPanel, StateId, StateSeries};
use crate::stats::{mean, median, quantile_sorted};

/// Counterfactual in levels over `[t_start, t_start + len − 1]`, anchored at `t_start`.
/// Levels may be zero or negative, so no log-space view is kept.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelPath {
    pub state: StateId,
    pub t_start: u32,
    pub point: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub actual: Vec<f64>,
}

impl LevelPath {
    pub fn len(&self) -> usize {
        self.point.len()
    }

    pub fn is_empty(&self) -> bool {
        self.point.is_empty()
    }

    pub fn days(&self) -> impl Iterator<Item = u32> {
        self.t_start..self.t_start + self.len() as u32
    }
}

/// Applies the intercept-shift construction
///
/// ```text
/// y^C_t = Σ_j β_j D_j(t) − Σ_j β_j D_j(t̄) + D_s(t̄),   t ∈ [t̄, horizon]
/// ```
///
/// to an arbitrary level series. Only donor columns enter; the trend column
/// is skipped. Band endpoints are per-day percentiles over the bootstrap
/// replicates' coefficients, widened to contain the point.
#[allow(clippy::too_many_arguments)]
pub fn anchored_level_path(
    state: &StateId,
    column_names: &[String],
    omega: &[f64],
    replicates: &[ReplicateFit],
    t_bar: u32,
    horizon: u32,
    level: f64,
    own: impl Fn(u32) -> Result<f64>,
    donor: impl Fn(&StateId, u32) -> Result<f64>,
) -> Result<LevelPath> {
    if horizon < t_bar {
        return Err(ArcoError::Window(format!(
            "anchor day {t_bar} is after horizon {horizon}"
        )));
    }
    let columns: Vec<(usize, StateId)> = column_names
        .iter()
        .enumerate()
        .filter(|(_, n)| n.as_str() != TREND_COLUMN)
        .map(|(j, n)| (j, StateId::new(n.as_str())))
        .collect();
    // donor moves relative to the anchor day, one vector per column
    let mut moves = Vec::with_capacity(columns.len());
    for (_, d) in &columns {
        let base = donor(d, t_bar)?;
        let mut v = Vec::with_capacity((horizon - t_bar + 1) as usize);
        for t in t_bar..=horizon {
            v.push(donor(d, t)? - base);
        }
        moves.push(v);
    }
    let anchor = own(t_bar)?;
    let actual = (t_bar..=horizon).map(&own).collect::<Result<Vec<f64>>>()?;

    let path_for = |w: &[f64]| -> Vec<f64> {
        (0..actual.len())
            .map(|i| columns.iter().zip(&moves).map(|((j, _), m)| w[*j] * m[i]).sum::<f64>() + anchor)
            .collect()
    };
    let point = path_for(omega);
    let (lower, upper) = if replicates.is_empty() {
        (point.clone(), point.clone())
    } else {
        let draws: Vec<Vec<f64>> = replicates.iter().map(|r| path_for(&r.omega)).collect();
        let tail = (1.0 - level) / 2.0;
        (0..point.len())
            .map(|i| {
                let mut day: Vec<f64> = draws.iter().map(|d| d[i]).collect();
                day.sort_by(f64::total_cmp);
                (
                    quantile_sorted(&day, tail).min(point[i]),
                    quantile_sorted(&day, 1.0 - tail).max(point[i]),
                )
            })
            .unzip()
    };
    Ok(LevelPath {
        state: state.clone(),
        t_start: t_bar,
        point,
        lower,
        upper,
        actual,
    })
}

fn deaths_of(panel: &EpiPanel, state: &StateId, t: u32) -> Result<f64> {
    panel
        .require(state)?
        .deaths_at(t)
        .map(|d| d as f64)
        .ok_or_else(|| ArcoError::MissingObservation {
            state: state.to_string(),
            t,
        })
}

/// Cumulative-deaths counterfactual in levels, anchored at the last in-sample day,
/// using the cases weights of `estimate`.
pub fn deaths_counterfactual(estimate: &StateEstimate, panel: &EpiPanel, level: f64) -> Result<LevelPath> {
    anchored_level_path(
        &estimate.state,
        &estimate.fit.column_names,
        &estimate.fit.omega,
        &estimate.band.replicates,
        estimate.last_in_sample,
        estimate.horizon,
        level,
        |t| deaths_of(panel, &estimate.state, t),
        |d, t| deaths_of(panel, d, t),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GrowthStat {
    Mean,
    Median,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthPath {
    pub state: StateId,
    pub stat: GrowthStat,
    pub growth: f64,
    pub t_start: u32,
    pub level: Vec<f64>,
}

/// Extrapolates cases from day `last` with the mean or median daily growth
/// rate `cases_t / cases_{t−1} − 1` over the last `window` in-sample days.
pub fn growth_extrapolation(
    series: &StateSeries,
    in_sample_start: u32,
    last: u32,
    horizon: u32,
    stat: GrowthStat,
    window: u32,
) -> Result<GrowthPath> {
    if window == 0 || last < in_sample_start || window > last - in_sample_start {
        return Err(ArcoError::Window(format!(
            "growth window of {window} days does not fit in [{in_sample_start}, {last}]"
        )));
    }
    let first = last - window;
    let cases = series.cases_in(first, last)?;
    let mut rates = Vec::with_capacity(window as usize);
    for (i, pair) in cases.windows(2).enumerate() {
        if pair[0] <= 0.0 {
            return Err(ArcoError::Domain {
                state: series.state.to_string(),
                t: first + i as u32,
            });
        }
        rates.push(pair[1] / pair[0] - 1.0);
    }
    let growth = match stat {
        GrowthStat::Mean => mean(&rates),
        GrowthStat::Median => median(&rates),
    };
    let base = *cases.last().expect("window is non-empty");
    let level = (1..=horizon.saturating_sub(last))
        .map(|h| base * (1.0 + growth).powi(h as i32))
        .collect();
    Ok(GrowthPath {
        state: series.state.clone(),
        stat,
        growth,
        t_start: last + 1,
        level,
    })
}
