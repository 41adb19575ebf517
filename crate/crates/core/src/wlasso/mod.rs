//! Weighted LASSO with an unpenalized intercept.
//!
//! Minimizes
//!
//! ```text
//! (1/n) Σ_t (y_t − b₀ − x_t'ω)² + λ Σ_j κ_j |ω_j|
//! ```
//!
//! by cyclic coordinate descent, where `n` is either the row count minus one
//! (the default) or the row count. Penalty weights `κ_j = |x_{j,last}|`
//! rescale nonstationary regressors; a trend column carries weight one.

mod path;
mod solver;

use std::sync::atomic::{AtomicU64, Ordering};

use serde::Serialize;

use crate::error::{ArcoError, Result};

pub use path::{bic_select, bic_value, lambda_path, select_by_bic, PathPoint, Selection};
pub use solver::{fit_at_lambda, WlassoProblem};

/// `sign(z) · max(|z| − γ, 0)`.
pub fn soft_threshold(z: f64, gamma: f64) -> f64 {
    debug_assert!(gamma >= 0.0);
    let shrunk = z.abs() - gamma;
    if shrunk > 0.0 {
        shrunk.copysign(z)
    } else {
        0.0
    }
}

/// Column-major regressor matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    columns: Vec<Vec<f64>>,
    names: Vec<String>,
    trend_column: Option<usize>,
}

impl DesignMatrix {
    pub fn new(columns: Vec<Vec<f64>>, names: Vec<String>) -> Result<Self> {
        if columns.is_empty() {
            return Err(ArcoError::Window("design matrix has no columns".into()));
        }
        if names.len() != columns.len() {
            return Err(ArcoError::Window(format!(
                "{} column names for {} columns",
                names.len(),
                columns.len()
            )));
        }
        let rows = columns[0].len();
        for (name, col) in names.iter().zip(&columns) {
            if col.len() != rows {
                return Err(ArcoError::Window(format!(
                    "column `{name}` has {} rows, expected {rows}",
                    col.len()
                )));
            }
            if col.iter().any(|v| !v.is_finite()) {
                return Err(ArcoError::DegenerateRegressor { column: name.clone() });
            }
        }
        Ok(DesignMatrix {
            columns,
            names,
            trend_column: None,
        })
    }

    /// Same as [`DesignMatrix::new`] with names `x1, x2, …`.
    pub fn from_columns(columns: Vec<Vec<f64>>) -> Result<Self> {
        let names = (1..=columns.len()).map(|j| format!("x{j}")).collect();
        Self::new(columns, names)
    }

    /// Marks `index` as the trend column, whose penalty weight is fixed at one.
    pub fn with_trend_column(mut self, index: usize) -> Self {
        assert!(index < self.columns.len());
        self.trend_column = Some(index);
        self
    }

    pub fn n_rows(&self) -> usize {
        self.columns[0].len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn trend_column(&self) -> Option<usize> {
        self.trend_column
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[i]).collect()
    }

    /// Returns a copy with columns reordered so that new column `k` is old column `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        DesignMatrix {
            columns: order.iter().map(|&j| self.columns[j].clone()).collect(),
            names: order.iter().map(|&j| self.names[j].clone()).collect(),
            trend_column: self.trend_column.and_then(|t| order.iter().position(|&j| j == t)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct PenaltyWeights(Vec<f64>);

impl PenaltyWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        for (j, &k) in weights.iter().enumerate() {
            if !(k.is_finite() && k > 0.0) {
                return Err(ArcoError::DegenerateRegressor {
                    column: format!("#{}", j + 1),
                });
            }
        }
        Ok(PenaltyWeights(weights))
    }

    /// `κ_j = |x_{j,last}|` for regressors, `κ = 1` for the trend column.
    pub fn from_design(x: &DesignMatrix) -> Result<Self> {
        let last = x
            .n_rows()
            .checked_sub(1)
            .ok_or_else(|| ArcoError::Window("design matrix has no rows".into()))?;
        let mut weights = Vec::with_capacity(x.n_cols());
        for j in 0..x.n_cols() {
            let k = if x.trend_column() == Some(j) {
                1.0
            } else {
                x.column(j)[last].abs()
            };
            if !(k.is_finite() && k > 0.0) {
                return Err(ArcoError::DegenerateRegressor {
                    column: x.names()[j].clone(),
                });
            }
            weights.push(k);
        }
        Ok(PenaltyWeights(weights))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.0.iter().map(|k| k * factor).collect())
    }

    pub fn permuted(&self, order: &[usize]) -> Self {
        PenaltyWeights(order.iter().map(|&j| self.0[j]).collect())
    }
}

/// Divisor of the residual sum of squares in the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// `n = rows − 1`, i.e. `L − 10` for the window `[10, L]`.
    #[default]
    RowsMinusOne,
    Rows,
}

impl Normalization {
    pub fn divisor(self, rows: usize) -> Result<f64> {
        let n = match self {
            Normalization::RowsMinusOne => rows as i64 - 1,
            Normalization::Rows => rows as i64,
        };
        if n <= 0 {
            return Err(ArcoError::Window(format!("normalization divisor {n} from {rows} rows")));
        }
        Ok(n as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitSettings {
    pub max_sweeps: usize,
    /// Convergence threshold on the largest coefficient change in a sweep.
    pub tol: f64,
    pub normalization: Normalization,
    pub record_trace: bool,
}

impl Default for FitSettings {
    fn default() -> Self {
        FitSettings {
            max_sweeps: 10_000,
            tol: 1e-9,
            normalization: Normalization::RowsMinusOne,
            record_trace: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WlassoFit {
    pub intercept: f64,
    pub omega: Vec<f64>,
    pub column_names: Vec<String>,
    pub lambda: f64,
    /// NaN until the fit has been scored by [`bic_select`].
    pub bic: f64,
    pub rss: f64,
    pub objective: f64,
    pub in_sample_residuals: Vec<f64>,
    pub sweeps: usize,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub objective_trace: Vec<f64>,
}

impl WlassoFit {
    pub fn nonzero(&self) -> usize {
        self.omega.iter().filter(|w| **w != 0.0).count()
    }

    pub fn support(&self) -> Vec<usize> {
        (0..self.omega.len()).filter(|&j| self.omega[j] != 0.0).collect()
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.intercept + row.iter().zip(&self.omega).map(|(x, w)| x * w).sum::<f64>()
    }

    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.column_names.iter().position(|n| n == name).map(|j| self.omega[j])
    }
}

/// Largest KKT violation of `fit`, each term divided by its tolerance, so a
/// value `<= 1` means the conditions hold. With residuals `r`:
/// active coefficients need `|(2/n) Σ x_j r − λ κ_j sign(ω_j)| ≤ 1e−8·max(1, λκ_j)`,
/// inactive ones `|(2/n) Σ x_j r| ≤ λ κ_j + 1e−8`.
pub fn kkt_violation(x: &DesignMatrix, fit: &WlassoFit, kappa: &PenaltyWeights, normalization: Normalization) -> f64 {
    const TOL: f64 = 1e-8;
    let n = normalization.divisor(x.n_rows()).unwrap_or(f64::NAN);
    let r = &fit.in_sample_residuals;
    let mut worst: f64 = 0.0;
    for j in 0..x.n_cols() {
        let grad = 2.0 / n * x.column(j).iter().zip(r).map(|(a, b)| a * b).sum::<f64>();
        let pen = fit.lambda * kappa.as_slice()[j];
        let w = fit.omega[j];
        let ratio = if w != 0.0 {
            (grad - pen * w.signum()).abs() / (TOL * pen.max(1.0))
        } else {
            let excess = grad.abs() - pen;
            if excess <= 0.0 {
                0.0
            } else {
                excess / TOL
            }
        };
        worst = worst.max(ratio);
    }
    worst
}

pub fn satisfies_kkt(x: &DesignMatrix, fit: &WlassoFit, kappa: &PenaltyWeights, normalization: Normalization) -> bool {
    kkt_violation(x, fit, kappa, normalization) <= 1.0
}

static FITS_AUDITED: AtomicU64 = AtomicU64::new(0);
static KKT_FAILURES: AtomicU64 = AtomicU64::new(0);

/// Process-wide count of `(fits produced, fits failing the KKT check)`.
/// Every successful fit is checked before it is returned.
pub fn kkt_audit() -> (u64, u64) {
    (
        FITS_AUDITED.load(Ordering::Relaxed),
        KKT_FAILURES.load(Ordering::Relaxed),
    )
}

fn record_audit(passed: bool) {
    FITS_AUDITED.fetch_add(1, Ordering::Relaxed);
    if !passed {
        KKT_FAILURES.fetch_add(1, Ordering::Relaxed);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn soft_threshold_cases() {
        assert_eq!(soft_threshold(3.0, 1.0), 2.0);
        assert_eq!(soft_threshold(-0.5, 1.0), 0.0);
        assert_eq!(soft_threshold(-3.0, 1.0), -2.0);
        for x in [-2.5, 0.0, 1e-12, 7.25] {
            assert_eq!(soft_threshold(x, 0.0), x);
        }
    }

    #[test]
    fn penalty_weights_from_last_row() {
        let x = DesignMatrix::new(
            vec![vec![1.0, 100f64.ln()], vec![2.0, 100f64.ln()], vec![0.0, 3f64.ln()]],
            vec!["a".into(), "b".into(), "log_t".into()],
        )
        .unwrap()
        .with_trend_column(2);
        let k = PenaltyWeights::from_design(&x).unwrap();
        assert!((k.as_slice()[0] - 4.605_170_185_988_091).abs() < 1e-12);
        assert_eq!(k.as_slice()[0], k.as_slice()[1]);
        assert_eq!(k.as_slice()[2], 1.0);
    }

    #[test]
    fn zero_weight_names_column() {
        let x = DesignMatrix::new(vec![vec![1.0, 0.0], vec![2.0, 3.0]], vec!["flat".into(), "b".into()]).unwrap();
        match PenaltyWeights::from_design(&x) {
            Err(ArcoError::DegenerateRegressor { column }) => assert_eq!(column, "flat"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn design_rejects_non_finite_and_ragged() {
        assert!(DesignMatrix::from_columns(vec![vec![1.0, f64::NAN]]).is_err());
        assert!(DesignMatrix::from_columns(vec![vec![1.0, 2.0], vec![1.0]]).is_err());
    }

    #[test]
    fn normalization_window() {
        assert_eq!(Normalization::RowsMinusOne.divisor(23).unwrap(), 22.0);
        assert_eq!(Normalization::Rows.divisor(23).unwrap(), 23.0);
        assert!(Normalization::RowsMinusOne.divisor(1).is_err());
    }
}
