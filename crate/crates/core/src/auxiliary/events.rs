use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{ArcoError, Result};
use crate::panel::states::{code_for_name, name_for_code};
use crate::panel::StateId;
use crate::stats::mean;

/// One row of a Google Trends export.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrendsRow {
    pub date: NaiveDate,
    pub term: String,
    pub value: f64,
    pub state: StateId,
}

/// Value used for the `<1` entries Trends reports for very low volume.
const BELOW_ONE: f64 = 0.5;

/// Parses `date,term,value,state`. States may be given by code or full name.
pub fn parse_trends_csv(raw: &[u8]) -> Result<Vec<TrendsRow>> {
    let mut reader = csv::Reader::from_reader(raw);
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim().eq_ignore_ascii_case(name))
            .ok_or_else(|| ArcoError::Parse {
                column: name.to_string(),
                message: "required column is missing".into(),
            })
    };
    let (c_date, c_term, c_value, c_state) = (col("date")?, col("term")?, col("value")?, col("state")?);
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let raw_state = record[c_state].trim();
        let code = if name_for_code(raw_state).is_some() {
            raw_state.to_ascii_uppercase()
        } else {
            code_for_name(raw_state)
                .ok_or_else(|| ArcoError::Parse {
                    column: "state".into(),
                    message: format!("unknown state `{raw_state}`"),
                })?
                .to_string()
        };
        let raw_value = record[c_value].trim();
        let value = if raw_value == "<1" {
            BELOW_ONE
        } else {
            raw_value.parse().map_err(|_| ArcoError::Parse {
                column: "value".into(),
                message: format!("`{raw_value}` is not a number"),
            })?
        };
        let date = NaiveDate::parse_from_str(record[c_date].trim(), "%Y-%m-%d").map_err(|e| ArcoError::Parse {
            column: "date".into(),
            message: format!("`{}` is not an ISO-8601 date ({e})", &record[c_date]),
        })?;
        rows.push(TrendsRow {
            date,
            term: record[c_term].trim().to_string(),
            value,
            state: StateId::new(code),
        });
    }
    Ok(rows)
}

/// Daily search intensity per state.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct SearchPanel {
    pub states: BTreeMap<StateId, BTreeMap<NaiveDate, f64>>,
}

impl SearchPanel {
    /// Averages the selected terms (all terms when `terms` is empty) per state and date.
    pub fn from_rows(rows: &[TrendsRow], terms: &[String]) -> Self {
        let mut acc: BTreeMap<StateId, BTreeMap<NaiveDate, Vec<f64>>> = BTreeMap::new();
        for r in rows {
            if terms.is_empty() || terms.iter().any(|t| t.eq_ignore_ascii_case(&r.term)) {
                acc.entry(r.state.clone())
                    .or_default()
                    .entry(r.date)
                    .or_default()
                    .push(r.value);
            }
        }
        SearchPanel {
            states: acc
                .into_iter()
                .map(|(s, days)| (s, days.into_iter().map(|(d, v)| (d, mean(&v))).collect()))
                .collect(),
        }
    }

    /// Z-scores every state's series with the mean and sample standard deviation
    /// over `[from, to]`. A state that is flat over the window maps to zeros.
    pub fn standardized(&self, from: NaiveDate, to: NaiveDate) -> Self {
        let states = self
            .states
            .iter()
            .map(|(s, days)| {
                let window: Vec<f64> = days.range(from..=to).map(|(_, v)| *v).collect();
                let m = mean(&window);
                let sd = if window.len() > 1 {
                    (window.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (window.len() - 1) as f64).sqrt()
                } else {
                    0.0
                };
                let z = days
                    .iter()
                    .map(|(d, v)| (*d, if sd > 0.0 { (v - m) / sd } else { 0.0 }))
                    .collect();
                (s.clone(), z)
            })
            .collect();
        SearchPanel { states }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventCoefficient {
    pub r: i32,
    pub coef: f64,
    pub se: f64,
    pub lb: f64,
    pub ub: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventStudyResult {
    pub k: u32,
    /// One row per estimated relative day plus the reference `r = −1`, ascending.
    pub rows: Vec<EventCoefficient>,
    /// Relative days without at least two states.
    pub dropped: Vec<i32>,
    pub n_obs: usize,
    pub n_states: usize,
}

impl EventStudyResult {
    pub fn coefficient(&self, r: i32) -> Option<f64> {
        self.rows.iter().find(|c| c.r == r).map(|c| c.coef)
    }
}

const REFERENCE: i32 = -1;
const Z_95: f64 = 1.959963984540054;

/// Two-way event study over `r ∈ [−k, k]` days around each state's event date:
/// state fixed effects, one indicator per relative day with `r = −1` omitted,
/// and HC1 standard errors.
pub fn event_study(panel: &SearchPanel, events: &BTreeMap<StateId, NaiveDate>, k: u32) -> Result<EventStudyResult> {
    let k_i = k as i32;
    let mut obs: Vec<(usize, i32, f64)> = Vec::new();
    let mut states_at: BTreeMap<i32, BTreeSet<usize>> = BTreeMap::new();
    for (g, (state, event)) in events.iter().enumerate() {
        let Some(days) = panel.states.get(state) else {
            continue;
        };
        for (date, y) in days {
            let r = (*date - *event).num_days();
            if r.abs() <= i64::from(k) {
                let r = r as i32;
                obs.push((g, r, *y));
                states_at.entry(r).or_default().insert(g);
            }
        }
    }
    let dropped: Vec<i32> = (-k_i..=k_i)
        .filter(|r| states_at.get(r).is_none_or(|s| s.len() < 2))
        .collect();
    for r in &dropped {
        log::warn!("event study: relative day {r} has fewer than 2 states and is dropped");
    }
    if dropped.contains(&REFERENCE) {
        return Err(ArcoError::DataSufficiency {
            state: "event study".into(),
            message: "reference day r = -1 has fewer than 2 states".into(),
        });
    }
    obs.retain(|(_, r, _)| !dropped.contains(r));
    let regressors: Vec<i32> = (-k_i..=k_i)
        .filter(|r| *r != REFERENCE && !dropped.contains(r))
        .collect();
    let groups: BTreeSet<usize> = obs.iter().map(|o| o.0).collect();
    let (n, p) = (obs.len(), regressors.len());
    if n <= p + groups.len() {
        return Err(ArcoError::DataSufficiency {
            state: "event study".into(),
            message: format!("{n} observations for {p} relative days and {} states", groups.len()),
        });
    }

    // within transform: subtract state means from the response and every indicator
    let mut x = DMatrix::<f64>::zeros(n, p);
    let mut y = DVector::<f64>::zeros(n);
    for (i, (_, r, v)) in obs.iter().enumerate() {
        y[i] = *v;
        if let Some(j) = regressors.iter().position(|q| q == r) {
            x[(i, j)] = 1.0;
        }
    }
    for g in &groups {
        let members: Vec<usize> = (0..n).filter(|&i| obs[i].0 == *g).collect();
        let m = members.len() as f64;
        let y_bar = members.iter().map(|&i| y[i]).sum::<f64>() / m;
        for &i in &members {
            y[i] -= y_bar;
        }
        for j in 0..p {
            let x_bar = members.iter().map(|&i| x[(i, j)]).sum::<f64>() / m;
            for &i in &members {
                x[(i, j)] -= x_bar;
            }
        }
    }

    let xtx = x.transpose() * &x;
    let inv = xtx.clone().try_inverse().ok_or_else(|| ArcoError::DataSufficiency {
        state: "event study".into(),
        message: "relative-day indicators are collinear with the state effects".into(),
    })?;
    let beta = &inv * (x.transpose() * &y);
    let resid = &y - &x * &beta;
    let mut meat = DMatrix::<f64>::zeros(p, p);
    for i in 0..n {
        let row = x.row(i);
        meat += row.transpose() * row * resid[i].powi(2);
    }
    let dof = (n - p - groups.len()) as f64;
    let cov = &inv * meat * &inv * (n as f64 / dof);

    let mut rows: Vec<EventCoefficient> = regressors
        .iter()
        .enumerate()
        .map(|(j, &r)| {
            let se = cov[(j, j)].max(0.0).sqrt();
            EventCoefficient {
                r,
                coef: beta[j],
                se,
                lb: beta[j] - Z_95 * se,
                ub: beta[j] + Z_95 * se,
            }
        })
        .collect();
    rows.push(EventCoefficient {
        r: REFERENCE,
        coef: 0.0,
        se: 0.0,
        lb: 0.0,
        ub: 0.0,
    });
    rows.sort_by_key(|c| c.r);
    Ok(EventStudyResult {
        k,
        rows,
        dropped,
        n_obs: n,
        n_states: groups.len(),
    })
}

#[derive(Serialize)]
struct EventRow {
    r: i32,
    coef: f64,
    lb: f64,
    ub: f64,
}

/// Rows `r,coef,lb,ub`.
pub fn write_event_study_csv<W: Write>(writer: W, result: &EventStudyResult) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for c in &result.rows {
        w.serialize(EventRow {
            r: c.r,
            coef: c.coef,
            lb: c.lb,
            ub: c.ub,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_codes_names_and_low_volume() {
        let csv = "date,term,value,state\n2020-03-01,pandemic,<1,Alabama\n2020-03-01,covid-19,40,ny\n";
        let rows = parse_trends_csv(csv.as_bytes()).unwrap();
        assert_eq!(rows[0].state.as_str(), "AL");
        assert_eq!(rows[0].value, BELOW_ONE);
        assert_eq!(rows[1].state.as_str(), "NY");
        let panel = SearchPanel::from_rows(&rows, &["Pandemic".to_string()]);
        assert_eq!(panel.states.len(), 1);
    }

    #[test]
    fn flat_series_standardize_to_zero() {
        let d = |i| NaiveDate::from_ymd_opt(2020, 3, 1).unwrap() + chrono::Duration::days(i);
        let mut panel = SearchPanel::default();
        panel
            .states
            .insert(StateId::new("AL"), (0..5).map(|i| (d(i), 7.0)).collect());
        let z = panel.standardized(d(0), d(4));
        assert!(z.states[&StateId::new("AL")].values().all(|v| *v == 0.0));
    }
}
