use serde::Serialize;

use super::{DesignMatrix, FitSettings, PenaltyWeights, WlassoFit, WlassoProblem};
use crate::error::{ArcoError, Result};

/// Ratio between the smallest and largest λ on the grid.
const PATH_RATIO: f64 = 1e-4;

/// `grid` geometrically spaced values from `lambda_max` down to `lambda_max · 1e−4`.
/// A zero `lambda_max` (constant response) yields the single value `0`.
pub fn lambda_path(lambda_max: f64, grid: usize) -> Result<Vec<f64>> {
    if !(lambda_max.is_finite() && lambda_max >= 0.0) {
        return Err(ArcoError::Config(format!("invalid lambda_max {lambda_max}")));
    }
    if grid < 2 {
        return Err(ArcoError::Config(format!(
            "lambda grid needs at least 2 points, got {grid}"
        )));
    }
    if lambda_max == 0.0 {
        return Ok(vec![0.0]);
    }
    let step = PATH_RATIO.ln() / (grid - 1) as f64;
    let mut path: Vec<f64> = (0..grid).map(|i| lambda_max * (step * i as f64).exp()).collect();
    path[0] = lambda_max;
    Ok(path)
}

/// `n ln(RSS/n) + k ln(n)`; `−∞` when the fit is exact.
pub fn bic_value(rss: f64, n_obs: usize, k: usize) -> f64 {
    let n = n_obs as f64;
    if rss <= 0.0 {
        return f64::NEG_INFINITY;
    }
    n * (rss / n).ln() + k as f64 * n.ln()
}

/// Scores each fit with `k = nnz(ω) + 1` and returns the minimizer, breaking
/// ties toward the larger λ.
pub fn bic_select(fits: &[WlassoFit], n_obs: usize) -> Result<WlassoFit> {
    let mut order: Vec<usize> = (0..fits.len()).collect();
    order.sort_by(|&a, &b| fits[b].lambda.total_cmp(&fits[a].lambda));
    let mut best: Option<(usize, f64)> = None;
    for i in order {
        let bic = bic_value(fits[i].rss, n_obs, fits[i].nonzero() + 1);
        if best.is_none_or(|(_, b)| bic < b) {
            best = Some((i, bic));
        }
    }
    let (i, bic) = best.ok_or_else(|| ArcoError::Config("no fits to select from".into()))?;
    if bic == f64::NEG_INFINITY {
        log::warn!(
            "selected fit at lambda {:e} has zero residual sum of squares",
            fits[i].lambda
        );
    }
    let mut fit = fits[i].clone();
    fit.bic = bic;
    Ok(fit)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathPoint {
    pub lambda: f64,
    pub bic: f64,
    pub rss: f64,
    pub nonzero: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Selection {
    pub fit: WlassoFit,
    pub lambda_max: f64,
    pub path: Vec<PathPoint>,
}

/// Fits the warm-started λ path and selects by BIC, with `n` equal to the row count.
pub fn select_by_bic(
    x: &DesignMatrix,
    y: &[f64],
    kappa: &PenaltyWeights,
    grid: usize,
    settings: &FitSettings,
) -> Result<Selection> {
    let problem = WlassoProblem::new(x, y, kappa, settings)?;
    let lambda_max = problem.lambda_max();
    let lambdas = lambda_path(lambda_max, grid)?;
    let mut fits = Vec::with_capacity(lambdas.len());
    let mut warm: Option<Vec<f64>> = None;
    for &lambda in &lambdas {
        let fit = problem.fit(lambda, warm.as_deref())?;
        warm = Some(fit.omega.clone());
        fits.push(fit);
    }
    let n_obs = x.n_rows();
    let fit = bic_select(&fits, n_obs)?;
    let path = fits
        .iter()
        .map(|f| PathPoint {
            lambda: f.lambda,
            bic: bic_value(f.rss, n_obs, f.nonzero() + 1),
            rss: f.rss,
            nonzero: f.nonzero(),
        })
        .collect();
    Ok(Selection { fit, lambda_max, path })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fit_with(lambda: f64, rss: f64, omega: Vec<f64>) -> WlassoFit {
        WlassoFit {
            intercept: 0.0,
            column_names: (0..omega.len()).map(|j| format!("x{j}")).collect(),
            omega,
            lambda,
            bic: f64::NAN,
            rss,
            objective: 0.0,
            in_sample_residuals: vec![],
            sweeps: 1,
            objective_trace: vec![],
        }
    }

    #[test]
    fn path_is_geometric_and_descending() {
        let p = lambda_path(2.0, 100).unwrap();
        assert_eq!(p.len(), 100);
        assert_eq!(p[0], 2.0);
        assert!((p[99] - 2e-4).abs() < 1e-15);
        let r = p[1] / p[0];
        for w in p.windows(2) {
            assert!((w[1] / w[0] - r).abs() < 1e-12);
        }
        assert_eq!(lambda_path(0.0, 100).unwrap(), vec![0.0]);
        assert!(lambda_path(1.0, 1).is_err());
    }

    #[test]
    fn bic_formula() {
        // 20 ln(2/20) + 3 ln 20
        let expected = 20.0 * (0.1f64).ln() + 3.0 * 20f64.ln();
        assert!((bic_value(2.0, 20, 3) - expected).abs() < 1e-12);
        assert_eq!(bic_value(0.0, 20, 3), f64::NEG_INFINITY);
    }

    #[test]
    fn ties_go_to_the_larger_lambda() {
        let fits = vec![
            fit_with(0.1, 1.0, vec![0.0, 1.0]),
            fit_with(0.5, 1.0, vec![1.0, 0.0]),
            fit_with(0.3, 1.0, vec![0.0, 2.0]),
        ];
        let chosen = bic_select(&fits, 10).unwrap();
        assert_eq!(chosen.lambda, 0.5);
        assert!((chosen.bic - bic_value(1.0, 10, 2)).abs() < 1e-12);
    }

    #[test]
    fn exact_fit_selected_with_negative_infinity() {
        let fits = vec![fit_with(0.5, 1.0, vec![0.0]), fit_with(0.0, 0.0, vec![1.0])];
        let chosen = bic_select(&fits, 10).unwrap();
        assert_eq!(chosen.lambda, 0.0);
        assert_eq!(chosen.bic, f64::NEG_INFINITY);
    }

    #[test]
    fn constant_response_gives_degenerate_path() {
        let x = DesignMatrix::from_columns(vec![vec![1.0, 2.0, 4.0, 3.0], vec![2.0, 1.0, 0.5, 3.0]]).unwrap();
        let y = vec![5.0; 4];
        let k = PenaltyWeights::new(vec![1.0, 1.0]).unwrap();
        let sel = select_by_bic(&x, &y, &k, 100, &FitSettings::default()).unwrap();
        assert_eq!(sel.lambda_max, 0.0);
        assert_eq!(sel.path.len(), 1);
        assert_eq!(sel.fit.omega, vec![0.0, 0.0]);
        assert_eq!(sel.fit.intercept, 5.0);
    }
}
