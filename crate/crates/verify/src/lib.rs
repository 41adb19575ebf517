//! Reference implementations used to check `arco` independently of its
//! solver, and the location of optional frozen data snapshots.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};

/// Minimizer of `(1/n_div) Σ (y − b₀ − x'ω)² + λ Σ κ_j |ω_j|`.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleFit {
    pub intercept: f64,
    pub omega: Vec<f64>,
    pub objective: f64,
}

/// Exhaustive search over sign patterns in {−1, 0, +1}^p. On each pattern the
/// stationarity conditions are linear in the active coefficients; a solution
/// is admissible when its signs agree with the pattern and every inactive
/// coordinate satisfies the subgradient bound. The lowest objective wins.
/// Feasible only for small `p` (3^p linear solves).
pub fn sign_pattern_oracle(cols: &[Vec<f64>], y: &[f64], kappa: &[f64], lambda: f64, n_div: f64) -> OracleFit {
    let p = cols.len();
    let rows = y.len();
    let ybar = y.iter().sum::<f64>() / rows as f64;
    let xbar: Vec<f64> = cols.iter().map(|c| c.iter().sum::<f64>() / rows as f64).collect();
    let xc = DMatrix::from_fn(rows, p, |i, j| cols[j][i] - xbar[j]);
    let yc = DVector::from_fn(rows, |i, _| y[i] - ybar);
    let objective = |w: &DVector<f64>| {
        let r = &yc - &xc * w;
        r.dot(&r) / n_div + lambda * (0..p).map(|j| kappa[j] * w[j].abs()).sum::<f64>()
    };

    let mut best: Option<(f64, DVector<f64>)> = None;
    for code in 0..3usize.pow(p as u32) {
        let mut signs = vec![0i32; p];
        let mut c = code;
        for s in signs.iter_mut() {
            *s = (c % 3) as i32 - 1;
            c /= 3;
        }
        let active: Vec<usize> = (0..p).filter(|&j| signs[j] != 0).collect();
        let mut w = DVector::zeros(p);
        if !active.is_empty() {
            let xa = DMatrix::from_fn(rows, active.len(), |i, a| xc[(i, active[a])]);
            let rhs = DVector::from_fn(active.len(), |a, _| {
                let j = active[a];
                xa.column(a).dot(&yc) - 0.5 * n_div * lambda * kappa[j] * f64::from(signs[j])
            });
            let Some(sol) = (xa.transpose() * &xa).lu().solve(&rhs) else {
                continue;
            };
            if active
                .iter()
                .enumerate()
                .any(|(a, &j)| sol[a] * f64::from(signs[j]) <= 0.0)
            {
                continue;
            }
            for (a, &j) in active.iter().enumerate() {
                w[j] = sol[a];
            }
        }
        let r = &yc - &xc * &w;
        let inactive_ok = (0..p)
            .filter(|&j| signs[j] == 0)
            .all(|j| (2.0 / n_div * xc.column(j).dot(&r)).abs() <= lambda * kappa[j] * (1.0 + 1e-9) + 1e-12);
        if !inactive_ok {
            continue;
        }
        let obj = objective(&w);
        if best.as_ref().is_none_or(|(b, _)| obj < *b) {
            best = Some((obj, w));
        }
    }
    let (objective, w) = best.expect("some sign pattern is optimal");
    OracleFit {
        intercept: ybar - (0..p).map(|j| xbar[j] * w[j]).sum::<f64>(),
        omega: w.iter().copied().collect(),
        objective,
    }
}

pub const CASES_FILE: &str = "time_series_covid19_confirmed_US.csv";
pub const DEATHS_FILE: &str = "time_series_covid19_deaths_US.csv";
pub const MOBILITY_FILES: [&str; 2] = ["2020_US_Region_Mobility_Report.csv", "Global_Mobility_Report.csv"];
pub const TRENDS_FILE: &str = "trends.csv";

/// Files of a frozen data snapshot, looked up in `ARCO_SNAPSHOT_DIR` or in
/// `data/snapshot/` of this crate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Snapshot {
    pub dir: PathBuf,
    pub cases: Option<PathBuf>,
    pub deaths: Option<PathBuf>,
    pub mobility: Option<PathBuf>,
    pub trends: Option<PathBuf>,
}

impl Snapshot {
    pub fn locate() -> Self {
        let dir = std::env::var_os("ARCO_SNAPSHOT_DIR")
            .map(PathBuf::from)
            .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("data/snapshot"));
        Self::in_dir(dir)
    }

    pub fn in_dir(dir: PathBuf) -> Self {
        let file = |name: &str| Some(dir.join(name)).filter(|p| p.is_file());
        Snapshot {
            cases: file(CASES_FILE),
            deaths: file(DEATHS_FILE),
            mobility: MOBILITY_FILES.iter().find_map(|n| file(n)),
            trends: file(TRENDS_FILE),
            dir,
        }
    }

    /// Both JHU files, when present.
    pub fn jhu(&self) -> Option<(&Path, &Path)> {
        Some((self.cases.as_deref()?, self.deaths.as_deref()?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_solves_a_two_column_problem_by_hand() {
        // orthogonal centred columns: ω_j = S(x_j'y, λκ_j n/2) / x_j'x_j
        let cols = vec![vec![1.0, -1.0, 1.0, -1.0], vec![1.0, 1.0, -1.0, -1.0]];
        let y = vec![5.0, 1.0, 3.0, -1.0];
        let fit = sign_pattern_oracle(&cols, &y, &[1.0, 1.0], 1.0, 3.0);
        assert!((fit.omega[0] - 1.625).abs() < 1e-12, "{:?}", fit.omega);
        assert!((fit.omega[1] - 0.625).abs() < 1e-12, "{:?}", fit.omega);
        assert!((fit.intercept - 2.0).abs() < 1e-12);
        let big = sign_pattern_oracle(&cols, &y, &[1.0, 1.0], 10.0, 3.0);
        assert_eq!(big.omega, vec![0.0, 0.0]);
    }

    #[test]
    fn missing_snapshot_is_reported_as_absent() {
        let s = Snapshot::in_dir(PathBuf::from("/nonexistent/snapshot"));
        assert!(s.jhu().is_none() && s.mobility.is_none() && s.trends.is_none());
    }
}
