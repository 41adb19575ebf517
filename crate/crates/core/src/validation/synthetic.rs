use chrono::NaiveDate;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{ArcoError, Result};
use crate::panel::{DesignParams, EpiPanel, Group, StateAssignment, StateId, StateMeta, StateSeries, StudyDesign};
use crate::rng::substream;

/// Additive log-scale effect applied to the treated unit after the last in-sample day.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TreatmentEffect {
    None,
    Constant {
        value: f64,
    },
    /// `δ(t) = slope · (t − T₀)`.
    Linear {
        slope: f64,
    },
}

impl TreatmentEffect {
    pub fn at(&self, t: u32, t0: u32) -> f64 {
        if t <= t0 {
            return 0.0;
        }
        match *self {
            TreatmentEffect::None => 0.0,
            TreatmentEffect::Constant { value } => value,
            TreatmentEffect::Linear { slope } => slope * f64::from(t - t0),
        }
    }
}

/// How the treated unit's systematic part is formed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TreatedUnit {
    /// Own intercept, trend and loadings, drawn like a control.
    FactorModel,
    /// `c + Σ_j w_j · log y_jt + d · log t` over the controls' log series.
    Combination {
        constant: f64,
        weights: Vec<f64>,
        trend: f64,
    },
}

/// Log-level factor model
/// `log y_st = a_s + b_s log t + Λ_s' f_t + ε_st`, with random-walk factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_controls: usize,
    pub horizon: u32,
    /// T₀: last day before the effect starts.
    pub last_in_sample: u32,
    pub intercept_range: (f64, f64),
    pub trend_range: (f64, f64),
    pub n_factors: usize,
    pub loading_range: (f64, f64),
    pub factor_step_sd: f64,
    pub sigma: f64,
    pub effect: TreatmentEffect,
    pub treated: TreatedUnit,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_controls: 6,
            horizon: 58,
            last_in_sample: 36,
            intercept_range: (4.0, 6.0),
            trend_range: (1.0, 2.0),
            n_factors: 2,
            loading_range: (0.5, 1.5),
            factor_step_sd: 0.05,
            sigma: 0.05,
            effect: TreatmentEffect::None,
            treated: TreatedUnit::FactorModel,
            seed: 1,
        }
    }
}

/// A generated panel with its ground truth. Log vectors are indexed by epi-day `t − 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPanel {
    pub panel: EpiPanel,
    pub treated: StateId,
    pub controls: Vec<StateId>,
    /// Treated unit without the effect, before rounding.
    pub true_counterfactual_log: Vec<f64>,
    /// Treated unit with the effect, before rounding.
    pub treated_log: Vec<f64>,
    pub spec: SyntheticSpec,
}

impl SyntheticPanel {
    pub fn true_counterfactual_at(&self, t: u32) -> f64 {
        self.true_counterfactual_log[(t - 1) as usize]
    }

    /// True counterfactual over actual (both in levels, before rounding) at day `t`.
    pub fn true_ratio_at(&self, t: u32) -> f64 {
        let i = (t - 1) as usize;
        (self.true_counterfactual_log[i] - self.treated_log[i]).exp()
    }

    /// Metadata rows that make [`crate::panel::assign_groups`] reproduce
    /// [`SyntheticPanel::study_design`]: every unit's first case is on the
    /// start date, the treated unit's lagged lockdown falls on day T₀.
    pub fn states_meta(&self) -> Vec<StateMeta> {
        let (y, m, d) = START_DATE;
        let start = NaiveDate::from_ymd_opt(y, m, d).expect("valid start date");
        let row = |state: &StateId, lockdown| StateMeta {
            state: state.clone(),
            first_case: Some(start),
            lockdown_plus10: lockdown,
            group_hint: None,
            reopen_plus10: None,
        };
        let mut out: Vec<StateMeta> = self.controls.iter().map(|c| row(c, None)).collect();
        let lockdown = start + chrono::Duration::days(i64::from(self.spec.last_in_sample));
        out.push(row(&self.treated, Some(lockdown)));
        out
    }

    /// Controls form the control group; the treated unit's last in-sample day is T₀.
    pub fn study_design(&self) -> StudyDesign {
        let assignment = |group, last_in_sample| StateAssignment {
            group,
            lockdown_date: None,
            last_in_sample,
            partial_lockdown: false,
        };
        let mut states: std::collections::BTreeMap<_, _> = self
            .controls
            .iter()
            .map(|c| (c.clone(), assignment(Group::Control, None)))
            .collect();
        states.insert(
            self.treated.clone(),
            assignment(Group::Treated, Some(self.spec.last_in_sample)),
        );
        StudyDesign {
            params: DesignParams {
                horizon: self.spec.horizon,
                ..DesignParams::default()
            },
            states,
        }
    }
}

const START_DATE: (i32, u32, u32) = (2020, 3, 1);

fn uniform(range: (f64, f64)) -> Result<Uniform<f64>> {
    if range.0 == range.1 {
        return Uniform::new_inclusive(range.0, range.1).map_err(|e| ArcoError::Config(e.to_string()));
    }
    Uniform::new(range.0, range.1).map_err(|e| ArcoError::Config(format!("invalid range {range:?}: {e}")))
}

fn to_counts(log_values: &[f64]) -> Vec<u64> {
    log_values.iter().map(|v| v.exp().round().max(1.0) as u64).collect()
}

fn series(name: &str, log_values: &[f64]) -> Result<StateSeries> {
    let (y, m, d) = START_DATE;
    let start = NaiveDate::from_ymd_opt(y, m, d).expect("valid start date");
    let cases = to_counts(log_values);
    let deaths = vec![0; cases.len()];
    StateSeries::new(StateId::new(name), start, cases, deaths)
}

/// Draws a panel from `spec`. A pure function of the spec, including its seed.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticPanel> {
    if spec.n_controls == 0 || spec.horizon < 2 || spec.last_in_sample >= spec.horizon {
        return Err(ArcoError::Config(format!(
            "synthetic spec needs controls and 1 ≤ T₀ < horizon, got {} controls, T₀ {}, horizon {}",
            spec.n_controls, spec.last_in_sample, spec.horizon
        )));
    }
    if !(spec.sigma >= 0.0 && spec.factor_step_sd >= 0.0) {
        return Err(ArcoError::Config("noise scales must be non-negative".into()));
    }
    let mut rng = substream(spec.seed, "synthetic", 0);
    let n = spec.horizon as usize;
    let step = Normal::new(0.0, spec.factor_step_sd).map_err(|e| ArcoError::Config(e.to_string()))?;
    let noise = Normal::new(0.0, spec.sigma).map_err(|e| ArcoError::Config(e.to_string()))?;
    let intercept = uniform(spec.intercept_range)?;
    let trend = uniform(spec.trend_range)?;
    let loading = uniform(spec.loading_range)?;

    let factors: Vec<Vec<f64>> = (0..spec.n_factors)
        .map(|_| {
            let mut level = 0.0;
            (0..n)
                .map(|_| {
                    level += step.sample(&mut rng);
                    level
                })
                .collect()
        })
        .collect();

    let draw_unit = |rng: &mut crate::rng::StreamRng| -> Vec<f64> {
        let a = intercept.sample(rng);
        let b = trend.sample(rng);
        let lambda: Vec<f64> = (0..spec.n_factors).map(|_| loading.sample(rng)).collect();
        (0..n)
            .map(|i| {
                let t = (i + 1) as f64;
                let common: f64 = lambda.iter().zip(&factors).map(|(l, f)| l * f[i]).sum();
                a + b * t.ln() + common + noise.sample(rng)
            })
            .collect()
    };

    let control_logs: Vec<Vec<f64>> = (0..spec.n_controls).map(|_| draw_unit(&mut rng)).collect();
    let true_cf: Vec<f64> = match &spec.treated {
        TreatedUnit::FactorModel => draw_unit(&mut rng),
        TreatedUnit::Combination {
            constant,
            weights,
            trend,
        } => {
            if weights.len() != spec.n_controls {
                return Err(ArcoError::Config(format!(
                    "{} combination weights for {} controls",
                    weights.len(),
                    spec.n_controls
                )));
            }
            // combine the controls as observed (after rounding) so the identity is exact in the data
            let observed: Vec<Vec<f64>> = control_logs
                .iter()
                .map(|c| to_counts(c).iter().map(|&v| (v as f64).ln()).collect())
                .collect();
            (0..n)
                .map(|i| {
                    let t = (i + 1) as f64;
                    constant
                        + trend * t.ln()
                        + weights.iter().zip(&observed).map(|(w, c)| w * c[i]).sum::<f64>()
                        + noise.sample(&mut rng)
                })
                .collect()
        }
    };
    let treated_log: Vec<f64> = true_cf
        .iter()
        .enumerate()
        .map(|(i, v)| v + spec.effect.at(i as u32 + 1, spec.last_in_sample))
        .collect();

    let controls: Vec<StateId> = (1..=spec.n_controls).map(|j| StateId::new(format!("C{j}"))).collect();
    let treated = StateId::new("T1");
    let mut all = Vec::with_capacity(spec.n_controls + 1);
    for (id, logs) in controls.iter().zip(&control_logs) {
        all.push(series(id.as_str(), logs)?);
    }
    all.push(series(treated.as_str(), &treated_log)?);

    Ok(SyntheticPanel {
        panel: EpiPanel::from_series(all),
        treated,
        controls,
        true_counterfactual_log: true_cf,
        treated_log,
        spec: spec.clone(),
    })
}
