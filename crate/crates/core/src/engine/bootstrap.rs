use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{predict, EngineSettings};
use crate::error::{ArcoError, Result};
use crate::rng::substream;
use crate::stats::quantile_sorted;
use crate::wlasso::{select_by_bic, DesignMatrix, PenaltyWeights, WlassoFit, WlassoProblem};

/// Largest share of replicates that may fail to converge.
const MAX_DROPPED_SHARE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapSettings {
    pub replicates: usize,
    /// Defaults to `⌈rows^{1/3}⌉`.
    pub block_len: Option<usize>,
    pub seed: u64,
    /// Re-run the BIC path on every replicate instead of refitting at the selected λ.
    pub reselect_lambda: bool,
    /// Rescale residuals by `√(n / (n − k))`, `k` = nonzero coefficients plus intercept.
    pub df_correction: bool,
    pub level: f64,
}

impl Default for BootstrapSettings {
    fn default() -> Self {
        BootstrapSettings {
            replicates: 1000,
            block_len: None,
            seed: 20200511,
            reselect_lambda: false,
            df_correction: true,
            level: 0.95,
        }
    }
}

/// Intercept and coefficients of one bootstrap refit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateFit {
    pub intercept: f64,
    pub omega: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct BootstrapBand {
    pub log_lower: Vec<f64>,
    pub log_upper: Vec<f64>,
    pub replicates: Vec<ReplicateFit>,
    pub dropped: usize,
    pub block_len: usize,
}

/// Smallest `b` with `b³ ≥ rows`.
pub fn default_block_len(rows: usize) -> usize {
    (1..).find(|b: &usize| b.pow(3) >= rows).unwrap_or(1)
}

/// Concatenates uniformly chosen contiguous blocks of `residuals` to length `len`.
pub fn moving_block_resample<R: Rng + ?Sized>(residuals: &[f64], len: usize, block: usize, rng: &mut R) -> Vec<f64> {
    let n = residuals.len();
    let block = block.clamp(1, n.max(1));
    let mut out = Vec::with_capacity(len + block);
    while out.len() < len {
        let start = rng.random_range(0..=n - block);
        out.extend_from_slice(&residuals[start..start + block]);
    }
    out.truncate(len);
    out
}

fn refit(
    fit: &WlassoFit,
    x_in: &DesignMatrix,
    y_star: &[f64],
    kappa: &PenaltyWeights,
    settings: &EngineSettings,
) -> Result<WlassoFit> {
    if settings.bootstrap.reselect_lambda {
        select_by_bic(x_in, y_star, kappa, settings.lambda_grid, &settings.fit).map(|s| s.fit)
    } else {
        WlassoProblem::new(x_in, y_star, kappa, &settings.fit)?.fit(fit.lambda, Some(&fit.omega))
    }
}

/// Moving-block bootstrap of the in-sample residuals. Each replicate refits
/// on `fitted + resampled residuals`, projects over `x_out`, and adds a
/// resampled innovation; the band is the per-day percentile interval.
/// Replicate `i` draws from its own substream of `(seed, label, i)`, so the
/// result does not depend on scheduling.
pub fn bootstrap_band(
    fit: &WlassoFit,
    x_in: &DesignMatrix,
    y_in: &[f64],
    kappa: &PenaltyWeights,
    x_out: &DesignMatrix,
    settings: &EngineSettings,
    label: &str,
) -> Result<BootstrapBand> {
    let bs = &settings.bootstrap;
    if bs.replicates < 200 {
        return Err(ArcoError::Config(format!(
            "bootstrap needs at least 200 replicates, got {}",
            bs.replicates
        )));
    }
    if !(bs.level > 0.0 && bs.level < 1.0) {
        return Err(ArcoError::Config(format!(
            "band level must lie in (0, 1), got {}",
            bs.level
        )));
    }
    let rows = fit.in_sample_residuals.len();
    let k = fit.nonzero() + 1;
    let scale = if bs.df_correction && rows > k {
        (rows as f64 / (rows - k) as f64).sqrt()
    } else {
        1.0
    };
    let residuals: Vec<f64> = fit.in_sample_residuals.iter().map(|r| r * scale).collect();
    let residuals = &residuals;
    let block = bs.block_len.unwrap_or_else(|| default_block_len(rows));
    if block == 0 {
        return Err(ArcoError::Config("bootstrap block length must be at least 1".into()));
    }
    let fitted: Vec<f64> = y_in.iter().zip(&fit.in_sample_residuals).map(|(y, r)| y - r).collect();
    let horizon = x_out.n_rows();

    let draws: Vec<Option<(ReplicateFit, Vec<f64>)>> = (0..bs.replicates)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(bs.seed, label, i as u64);
            let resampled = moving_block_resample(residuals, rows, block, &mut rng);
            let y_star: Vec<f64> = fitted.iter().zip(&resampled).map(|(f, r)| f + r).collect();
            let star = match refit(fit, x_in, &y_star, kappa, settings) {
                Ok(f) => f,
                Err(ArcoError::NonConvergence { .. }) => return Ok(None),
                Err(e) => return Err(e),
            };
            let innovations = moving_block_resample(residuals, horizon, block, &mut rng);
            let values = predict(star.intercept, &star.omega, x_out)
                .into_iter()
                .zip(innovations)
                .map(|(p, e)| p + e)
                .collect();
            Ok(Some((
                ReplicateFit {
                    intercept: star.intercept,
                    omega: star.omega,
                },
                values,
            )))
        })
        .collect::<Result<_>>()?;

    let dropped = draws.iter().filter(|d| d.is_none()).count();
    if dropped as f64 > MAX_DROPPED_SHARE * bs.replicates as f64 {
        return Err(ArcoError::Bootstrap {
            dropped,
            total: bs.replicates,
        });
    }
    if dropped > 0 {
        log::warn!(
            "{label}: dropped {dropped} of {} non-convergent replicates",
            bs.replicates
        );
    }
    let (replicates, values): (Vec<ReplicateFit>, Vec<Vec<f64>>) = draws.into_iter().flatten().unzip();

    let tail = (1.0 - bs.level) / 2.0;
    let mut log_lower = Vec::with_capacity(horizon);
    let mut log_upper = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let mut day: Vec<f64> = values.iter().map(|v| v[t]).collect();
        day.sort_by(f64::total_cmp);
        log_lower.push(quantile_sorted(&day, tail));
        log_upper.push(quantile_sorted(&day, 1.0 - tail));
    }
    Ok(BootstrapBand {
        log_lower,
        log_upper,
        replicates,
        dropped,
        block_len: block,
    })
}
