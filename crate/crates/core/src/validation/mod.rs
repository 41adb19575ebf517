//! Placebo studies on control states, synthetic panels with known
//! counterfactuals, and bootstrap coverage experiments.

mod synthetic;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{build_arco_data, estimate, EngineSettings, StateEstimate};
use crate::error::{ArcoError, Result};
use crate::panel::{DesignParams, EpiPanel, Group, StateId, StudyDesign};
use crate::rng::substream;
use crate::stats::median;

pub use synthetic::{generate_synthetic, SyntheticPanel, SyntheticSpec, TreatedUnit, TreatmentEffect};

/// End of the placebo in-sample window relative to the pseudo intervention day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlaceboWindow {
    /// In-sample `[10, T₀]`.
    #[default]
    AtIntervention,
    /// In-sample `[10, T₀ + lag]`.
    PlusLag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlaceboSettings {
    pub pseudo_t0: u32,
    pub window: PlaceboWindow,
}

impl Default for PlaceboSettings {
    fn default() -> Self {
        PlaceboSettings {
            pseudo_t0: 36,
            window: PlaceboWindow::AtIntervention,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlaceboRun {
    pub state: StateId,
    pub pseudo_t0: u32,
    pub last_in_sample: u32,
    pub estimate: StateEstimate,
    /// Counterfactual over actual for every day of `[in_sample_start, horizon]`.
    pub ratio_series: Vec<(u32, f64)>,
}

/// Treats control `state` as if it had intervened at the pseudo day and fits
/// it against the remaining controls.
pub fn run_placebo(
    panel: &EpiPanel,
    design: &StudyDesign,
    state: &StateId,
    placebo: &PlaceboSettings,
    settings: &EngineSettings,
) -> Result<PlaceboRun> {
    if design.assignment(state).map(|a| a.group) != Some(Group::Control) {
        return Err(ArcoError::Config(format!("{state} is not a control state")));
    }
    let donors = design.donors_for(state);
    if donors.len() < 2 {
        return Err(ArcoError::Config(format!(
            "placebo for {state} needs at least 2 donors, found {}",
            donors.len()
        )));
    }
    let last = match placebo.window {
        PlaceboWindow::AtIntervention => placebo.pseudo_t0,
        PlaceboWindow::PlusLag => placebo.pseudo_t0 + design.params.lag_days,
    };
    let data = build_arco_data(
        panel,
        state,
        &donors,
        design.params.in_sample_start,
        last,
        design.params.horizon,
        design.params.min_in_sample,
    )?;
    let estimate = estimate(&data, settings)?;
    let ratio_series = estimate.path.ratio_series();
    Ok(PlaceboRun {
        state: state.clone(),
        pseudo_t0: placebo.pseudo_t0,
        last_in_sample: last,
        estimate,
        ratio_series,
    })
}

/// One Monte Carlo replication of the coverage experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageRep {
    pub rep: usize,
    pub covered: Vec<bool>,
    pub estimated_ratio: f64,
    pub ratio_lb: f64,
    pub ratio_ub: f64,
    pub true_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageReport {
    pub reps: usize,
    pub replicates: usize,
    pub days: Vec<u32>,
    /// Share of reps whose band contains the true counterfactual, per day.
    pub coverage: Vec<f64>,
    pub median_estimated_ratio: f64,
    pub median_true_ratio: f64,
    /// Share of reps whose ratio band at the horizon contains the true ratio.
    pub ratio_in_band: f64,
    #[serde(skip)]
    pub runs: Vec<CoverageRep>,
}

impl CoverageReport {
    pub fn min_coverage(&self) -> f64 {
        self.coverage.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_coverage(&self) -> f64 {
        self.coverage.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

fn coverage_rep(spec: &SyntheticSpec, settings: &EngineSettings, seed: u64, rep: usize) -> Result<CoverageRep> {
    let mut rng = substream(seed, "coverage", rep as u64);
    let rep_spec = SyntheticSpec {
        seed: rand::Rng::random(&mut rng),
        ..spec.clone()
    };
    let mut rep_settings = settings.clone();
    rep_settings.bootstrap.seed = rand::Rng::random(&mut rng);

    let syn = generate_synthetic(&rep_spec)?;
    let data = build_arco_data(
        &syn.panel,
        &syn.treated,
        &syn.controls,
        10,
        spec.last_in_sample,
        spec.horizon,
        DesignParams::default().min_in_sample,
    )?;
    let est = estimate(&data, &rep_settings)?;
    let path = &est.path;
    let covered = path
        .days()
        .enumerate()
        .map(|(i, t)| {
            let truth = syn.true_counterfactual_at(t);
            path.log_lower[i] <= truth && truth <= path.log_upper[i]
        })
        .collect();
    let last = path.len() - 1;
    let actual = syn.treated_log[(spec.horizon - 1) as usize].exp();
    Ok(CoverageRep {
        rep,
        covered,
        estimated_ratio: path.level_point[last] / actual,
        ratio_lb: path.level_lower[last] / actual,
        ratio_ub: path.level_upper[last] / actual,
        true_ratio: syn.true_ratio_at(spec.horizon),
    })
}

/// Repeats generate → estimate → band `reps` times and reports, per
/// out-of-sample day, how often the band contains the true counterfactual.
/// Ratios use the unrounded treated series as the actual.
pub fn coverage_experiment(
    spec: &SyntheticSpec,
    reps: usize,
    settings: &EngineSettings,
    seed: u64,
) -> Result<CoverageReport> {
    if reps < 200 {
        return Err(ArcoError::Config(format!(
            "coverage experiment needs at least 200 reps, got {reps}"
        )));
    }
    coverage_runs(spec, reps, settings, seed)
}

/// [`coverage_experiment`] without the minimum-reps guard, for quick checks.
pub fn coverage_runs(
    spec: &SyntheticSpec,
    reps: usize,
    settings: &EngineSettings,
    seed: u64,
) -> Result<CoverageReport> {
    let runs: Vec<CoverageRep> = (0..reps)
        .into_par_iter()
        .map(|r| coverage_rep(spec, settings, seed, r))
        .collect::<Result<_>>()?;
    let days: Vec<u32> = (spec.last_in_sample + 1..=spec.horizon).collect();
    let coverage = (0..days.len())
        .map(|i| runs.iter().filter(|r| r.covered[i]).count() as f64 / reps as f64)
        .collect();
    let est: Vec<f64> = runs.iter().map(|r| r.estimated_ratio).collect();
    let truth: Vec<f64> = runs.iter().map(|r| r.true_ratio).collect();
    let in_band = runs
        .iter()
        .filter(|r| r.ratio_lb <= r.true_ratio && r.true_ratio <= r.ratio_ub)
        .count() as f64
        / reps as f64;
    Ok(CoverageReport {
        reps,
        replicates: settings.bootstrap.replicates,
        days,
        coverage,
        median_estimated_ratio: median(&est),
        median_true_ratio: median(&truth),
        ratio_in_band: in_band,
        runs,
    })
}
