use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::engine::{BootstrapSettings, EngineSettings};
use crate::error::{ArcoError, Result};
use crate::panel::DesignParams;
use crate::validation::{PlaceboSettings, PlaceboWindow, SyntheticSpec};
use crate::wlasso::FitSettings;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// JHU confirmed-cases time series; used together with `deaths_csv`.
    pub cases_csv: Option<PathBuf>,
    pub deaths_csv: Option<PathBuf>,
    /// Normalized panel (`state,epi_day,calendar_date,cum_cases,cum_deaths`), instead of the JHU pair.
    pub panel_csv: Option<PathBuf>,
    pub mobility_csv: Option<PathBuf>,
    pub trends_csv: Option<PathBuf>,
    /// Defaults to the bundled table of first-case and lockdown dates.
    pub meta_csv: Option<PathBuf>,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    pub horizon: u32,
    pub in_sample_start: u32,
    pub lag_days: u32,
    pub bootstrap_b: usize,
    /// Omit for `⌈(L − 9)^{1/3}⌉`.
    pub block_len: Option<usize>,
    pub seed: u64,
    pub lambda_grid: usize,
    pub placebo_t0: u32,
    pub cutoff_date: NaiveDate,
    pub level: f64,
    pub event_window: u32,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            horizon: 58,
            in_sample_start: 10,
            lag_days: 10,
            bootstrap_b: 1000,
            block_len: None,
            seed: 20200511,
            lambda_grid: 100,
            placebo_t0: 36,
            cutoff_date: NaiveDate::from_ymd_opt(2020, 5, 11).expect("valid date"),
            level: 0.95,
            event_window: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Modes {
    pub refit_lambda_in_bootstrap: bool,
    pub placebo_window: PlaceboWindow,
    /// Skip the residual degrees-of-freedom rescaling in the bootstrap.
    pub raw_residuals: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Selection {
    /// Restricts `fit`, `deaths` and `mobility` to these treated states when set.
    pub treated: Option<Vec<String>>,
    /// Search terms averaged for the event study; all terms when empty.
    pub terms: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Simulation {
    pub reps: usize,
    pub spec: SyntheticSpec,
}

impl Default for Simulation {
    fn default() -> Self {
        Simulation {
            reps: 500,
            spec: SyntheticSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub params: Params,
    pub modes: Modes,
    pub states: Selection,
    pub simulate: Simulation,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Reads a TOML file; relative data paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => ArcoError::FileNotFound(path.to_path_buf()),
            _ => ArcoError::Io(e),
        })?;
        let mut config = Self::from_toml_str(&text)?;
        if let Some(base) = path.parent() {
            config.paths.rebase(base);
        }
        Ok(config)
    }

    /// Checks parameter ranges and that every configured input file exists.
    pub fn validate(&self) -> Result<()> {
        let p = &self.params;
        if p.horizon <= p.in_sample_start {
            return Err(ArcoError::Config(format!(
                "horizon {} must exceed in_sample_start {}",
                p.horizon, p.in_sample_start
            )));
        }
        if p.bootstrap_b < 200 {
            return Err(ArcoError::Config(format!(
                "bootstrap_b must be at least 200, got {}",
                p.bootstrap_b
            )));
        }
        if p.block_len == Some(0) {
            return Err(ArcoError::Config("block_len must be at least 1".into()));
        }
        if p.lambda_grid < 2 {
            return Err(ArcoError::Config("lambda_grid must be at least 2".into()));
        }
        if !(p.level > 0.0 && p.level < 1.0) {
            return Err(ArcoError::Config(format!("level must lie in (0, 1), got {}", p.level)));
        }
        let paths = &self.paths;
        for file in [
            &paths.cases_csv,
            &paths.deaths_csv,
            &paths.panel_csv,
            &paths.mobility_csv,
            &paths.trends_csv,
            &paths.meta_csv,
        ]
        .into_iter()
        .flatten()
        {
            if !file.is_file() {
                return Err(ArcoError::FileNotFound(file.clone()));
            }
        }
        Ok(())
    }

    pub fn design_params(&self) -> DesignParams {
        DesignParams {
            in_sample_start: self.params.in_sample_start,
            horizon: self.params.horizon,
            lag_days: self.params.lag_days,
            ..DesignParams::default()
        }
    }

    pub fn engine_settings(&self) -> EngineSettings {
        let p = &self.params;
        EngineSettings {
            fit: FitSettings::default(),
            lambda_grid: p.lambda_grid,
            bootstrap: BootstrapSettings {
                replicates: p.bootstrap_b,
                block_len: p.block_len,
                seed: p.seed,
                reselect_lambda: self.modes.refit_lambda_in_bootstrap,
                df_correction: !self.modes.raw_residuals,
                level: p.level,
            },
        }
    }

    pub fn placebo_settings(&self) -> PlaceboSettings {
        PlaceboSettings {
            pseudo_t0: self.params.placebo_t0,
            window: self.modes.placebo_window,
        }
    }

    /// SHA-256 of the canonical JSON form of the effective configuration.
    /// Output locations are left out so moving a run does not change it.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.paths.out_dir = PathBuf::new();
        let json = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

impl Paths {
    fn rebase(&mut self, base: &Path) {
        for p in [
            &mut self.cases_csv,
            &mut self.deaths_csv,
            &mut self.panel_csv,
            &mut self.mobility_csv,
            &mut self.trends_csv,
            &mut self.meta_csv,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if self.out_dir.is_relative() && !self.out_dir.as_os_str().is_empty() {
            self.out_dir = base.join(&self.out_dir);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_study() {
        let c = RunConfig::from_toml_str("").unwrap();
        assert_eq!(c.params.horizon, 58);
        assert_eq!(c.params.bootstrap_b, 1000);
        assert_eq!(c.params.placebo_t0, 36);
        assert!(!c.modes.refit_lambda_in_bootstrap);
        c.validate().unwrap();
    }

    #[test]
    fn sections_parse_and_unknown_keys_fail() {
        let c = RunConfig::from_toml_str(
            "[params]\nseed = 7\nblock_len = 4\n[modes]\nplacebo_window = \"plus-lag\"\n[simulate]\nreps = 200\n[simulate.spec]\nsigma = 0.025\n",
        )
        .unwrap();
        assert_eq!(c.params.seed, 7);
        assert_eq!(c.params.block_len, Some(4));
        assert_eq!(c.modes.placebo_window, PlaceboWindow::PlusLag);
        assert_eq!(c.simulate.spec.sigma, 0.025);
        assert!(RunConfig::from_toml_str("[params]\nhorizn = 3\n").is_err());
    }

    #[test]
    fn validation_errors() {
        let mut c = RunConfig::default();
        c.params.bootstrap_b = 100;
        assert!(matches!(c.validate(), Err(ArcoError::Config(_))));
        let mut c = RunConfig::default();
        c.params.horizon = 10;
        assert!(matches!(c.validate(), Err(ArcoError::Config(_))));
        let mut c = RunConfig::default();
        c.paths.cases_csv = Some("/nonexistent/cases.csv".into());
        assert!(matches!(c.validate(), Err(ArcoError::FileNotFound(_))));
    }

    #[test]
    fn hash_ignores_out_dir_but_not_seed() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.paths.out_dir = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        b.params.seed += 1;
        assert_ne!(a.hash(), b.hash());
    }
}
