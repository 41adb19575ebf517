//! Cumulative-count panels in epidemiological time.
//!
//! A [`StateSeries`] holds one state's cumulative cases and deaths on a daily
//! calendar. Epidemiological day 1 is the first date with at least one
//! confirmed case; every other day is counted from there.

mod design;
mod jhu;
pub mod states;

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{ArcoError, Result};

pub use design::{
    assign_groups, assign_groups_from_meta, bundled_states_meta, parse_states_meta, write_states_meta_csv,
    DesignParams, ExclusionReason, Group, GroupHint, StateAssignment, StateMeta, StudyDesign,
};
pub use jhu::parse_jhu_csv;

/// State identifier; two-letter postal codes for US data.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateId(String);

impl StateId {
    pub fn new(code: impl Into<String>) -> Self {
        StateId(code.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for StateId {
    fn from(s: &str) -> Self {
        StateId(s.to_string())
    }
}

impl AsRef<str> for StateId {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateSeries {
    pub state: StateId,
    pub calendar_dates: Vec<NaiveDate>,
    pub cum_cases: Vec<u64>,
    pub cum_deaths: Vec<u64>,
    /// Calendar date of epidemiological day 1; `None` when no case was ever confirmed.
    pub epi_day_offset: Option<NaiveDate>,
}

impl StateSeries {
    /// Builds a daily series starting at `start`. Counts must already be
    /// non-decreasing; use [`repair_monotone`] on raw data first.
    pub fn new(state: StateId, start: NaiveDate, cum_cases: Vec<u64>, cum_deaths: Vec<u64>) -> Result<Self> {
        if cum_cases.len() != cum_deaths.len() {
            return Err(ArcoError::Window(format!(
                "{state}: {} case observations but {} death observations",
                cum_cases.len(),
                cum_deaths.len()
            )));
        }
        let calendar_dates: Vec<NaiveDate> = (0..cum_cases.len()).map(|i| start + Duration::days(i as i64)).collect();
        let epi_day_offset = cum_cases.iter().position(|&c| c >= 1).map(|i| calendar_dates[i]);
        Ok(StateSeries {
            state,
            calendar_dates,
            cum_cases,
            cum_deaths,
            epi_day_offset,
        })
    }

    pub fn is_usable(&self) -> bool {
        self.epi_day_offset.is_some()
    }

    fn index_of_epi_day(&self, t: u32) -> Option<usize> {
        let offset = self.epi_day_offset?;
        let first = *self.calendar_dates.first()?;
        let idx = (offset - first).num_days() + i64::from(t) - 1;
        (t >= 1 && idx >= 0 && (idx as usize) < self.cum_cases.len()).then_some(idx as usize)
    }

    /// Calendar date of epidemiological day `t` (day 1 is the first case).
    pub fn date_of_epi_day(&self, t: u32) -> Option<NaiveDate> {
        let offset = self.epi_day_offset?;
        (t >= 1).then(|| offset + Duration::days(i64::from(t) - 1))
    }

    /// Epidemiological day of a calendar date; may be zero or negative before the first case.
    pub fn epi_day_of(&self, date: NaiveDate) -> Option<i64> {
        self.epi_day_offset.map(|o| (date - o).num_days() + 1)
    }

    pub fn cases_at(&self, t: u32) -> Option<u64> {
        self.index_of_epi_day(t).map(|i| self.cum_cases[i])
    }

    pub fn deaths_at(&self, t: u32) -> Option<u64> {
        self.index_of_epi_day(t).map(|i| self.cum_deaths[i])
    }

    /// Last epidemiological day with an observation.
    pub fn last_epi_day(&self) -> Option<u32> {
        let offset = self.epi_day_offset?;
        let last = *self.calendar_dates.last()?;
        u32::try_from((last - offset).num_days() + 1).ok()
    }

    /// `(t, cum_cases_t)` for `t = 1, 2, …` up to the end of the series.
    pub fn align_epi(&self) -> Result<Vec<(u32, u64)>> {
        let last = self
            .last_epi_day()
            .ok_or_else(|| ArcoError::Alignment(self.state.to_string()))?;
        Ok((1..=last)
            .map(|t| (t, self.cases_at(t).expect("within aligned range")))
            .collect())
    }

    /// Natural log of cumulative cases for every epi-day in `start..=end`.
    pub fn log_cases(&self, start: u32, end: u32) -> Result<Vec<f64>> {
        let counts = self.counts_in(start, end, |s, t| s.cases_at(t))?;
        ln_counts(self.state.as_str(), start, &counts)
    }

    pub fn cases_in(&self, start: u32, end: u32) -> Result<Vec<f64>> {
        self.counts_in(start, end, |s, t| s.cases_at(t))
    }

    pub fn deaths_in(&self, start: u32, end: u32) -> Result<Vec<f64>> {
        self.counts_in(start, end, |s, t| s.deaths_at(t))
    }

    fn counts_in(&self, start: u32, end: u32, get: impl Fn(&Self, u32) -> Option<u64>) -> Result<Vec<f64>> {
        if !self.is_usable() {
            return Err(ArcoError::Alignment(self.state.to_string()));
        }
        (start..=end)
            .map(|t| {
                get(self, t)
                    .map(|c| c as f64)
                    .ok_or_else(|| ArcoError::MissingObservation {
                        state: self.state.to_string(),
                        t,
                    })
            })
            .collect()
    }
}

/// Element-wise natural log of counts observed on epi-days `t_start, t_start + 1, …`.
pub fn ln_counts(state: &str, t_start: u32, counts: &[f64]) -> Result<Vec<f64>> {
    counts
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            if c > 0.0 {
                Ok(c.ln())
            } else {
                Err(ArcoError::Domain {
                    state: state.to_string(),
                    t: t_start + i as u32,
                })
            }
        })
        .collect()
}

/// Running maximum over time. Returns the indices that were raised.
pub fn repair_monotone(values: &mut [i64]) -> Vec<usize> {
    let mut repaired = Vec::new();
    let mut running = 0i64;
    for (i, v) in values.iter_mut().enumerate() {
        if *v < running {
            *v = running;
            repaired.push(i);
        } else {
            running = *v;
        }
    }
    repaired
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CountKind {
    Cases,
    Deaths,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepairedCell {
    pub state: StateId,
    pub date: NaiveDate,
    pub kind: CountKind,
    pub original: i64,
    pub repaired: i64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DataQualityReport {
    pub repaired_cells: Vec<RepairedCell>,
    pub unusable_states: Vec<StateId>,
    pub cutoff_date: Option<NaiveDate>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EpiPanel {
    pub series: BTreeMap<StateId, StateSeries>,
    pub quality: DataQualityReport,
}

impl EpiPanel {
    pub fn from_series(series: impl IntoIterator<Item = StateSeries>) -> Self {
        let series: BTreeMap<_, _> = series.into_iter().map(|s| (s.state.clone(), s)).collect();
        let unusable_states = series
            .values()
            .filter(|s| !s.is_usable())
            .map(|s| s.state.clone())
            .collect();
        EpiPanel {
            series,
            quality: DataQualityReport {
                unusable_states,
                ..Default::default()
            },
        }
    }

    pub fn get(&self, state: &StateId) -> Option<&StateSeries> {
        self.series.get(state)
    }

    pub fn require(&self, state: &StateId) -> Result<&StateSeries> {
        self.series
            .get(state)
            .ok_or_else(|| ArcoError::MissingStates(vec![state.to_string()]))
    }

    pub fn states(&self) -> impl Iterator<Item = &StateId> {
        self.series.keys()
    }

    /// Writes `state,epi_day,calendar_date,cum_cases,cum_deaths`. `epi_day`
    /// is blank for states without a first case.
    pub fn write_normalized_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["state", "epi_day", "calendar_date", "cum_cases", "cum_deaths"])?;
        for s in self.series.values() {
            for (i, date) in s.calendar_dates.iter().enumerate() {
                let epi = s.epi_day_of(*date).map(|t| t.to_string()).unwrap_or_default();
                w.write_record([
                    s.state.as_str(),
                    &epi,
                    &date.to_string(),
                    &s.cum_cases[i].to_string(),
                    &s.cum_deaths[i].to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the normalized schema written by [`EpiPanel::write_normalized_csv`].
    pub fn read_normalized_csv<R: Read>(reader: R) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            state: String,
            calendar_date: NaiveDate,
            cum_cases: u64,
            cum_deaths: u64,
        }
        let mut grouped: BTreeMap<String, Vec<Row>> = BTreeMap::new();
        for row in csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(reader)
            .deserialize()
        {
            let row: Row = row?;
            grouped.entry(row.state.clone()).or_default().push(row);
        }
        let mut series = Vec::with_capacity(grouped.len());
        for (state, mut rows) in grouped {
            rows.sort_by_key(|r| r.calendar_date);
            for pair in rows.windows(2) {
                if (pair[1].calendar_date - pair[0].calendar_date).num_days() != 1 {
                    return Err(ArcoError::Parse {
                        column: "calendar_date".into(),
                        message: format!("{state}: gap or duplicate after {}", pair[0].calendar_date),
                    });
                }
            }
            let start = match rows.first() {
                Some(r) => r.calendar_date,
                None => continue,
            };
            let cases = rows.iter().map(|r| r.cum_cases).collect();
            let deaths = rows.iter().map(|r| r.cum_deaths).collect();
            series.push(StateSeries::new(StateId::new(state), start, cases, deaths)?);
        }
        Ok(EpiPanel::from_series(series))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    fn series(start: NaiveDate, cases: &[u64]) -> StateSeries {
        StateSeries::new("XX".into(), start, cases.to_vec(), vec![0; cases.len()]).unwrap()
    }

    #[test]
    fn offset_is_first_confirmed_case() {
        let s = series(d(2020, 3, 10), &[0, 0, 0, 1, 1, 3]);
        assert_eq!(s.epi_day_offset, Some(d(2020, 3, 13)));
        assert_eq!(s.cases_at(1), Some(1));
        assert_eq!(s.cases_at(3), Some(3));
        assert_eq!(s.cases_at(4), None);
        assert_eq!(s.cases_at(0), None);
    }

    #[test]
    fn new_york_epi_calendar() {
        let cases: Vec<u64> = (1..=60).collect();
        let s = series(d(2020, 3, 2), &cases);
        assert_eq!(s.date_of_epi_day(1), Some(d(2020, 3, 2)));
        assert_eq!(s.date_of_epi_day(30), Some(d(2020, 3, 31)));
        assert_eq!(s.epi_day_of(d(2020, 3, 31)), Some(30));
    }

    #[test]
    fn align_is_identity_on_series_starting_at_day_one() {
        let s = series(d(2020, 3, 1), &[5, 5, 5, 5]);
        let aligned = s.align_epi().unwrap();
        assert_eq!(aligned, vec![(1, 5), (2, 5), (3, 5), (4, 5)]);
    }

    #[test]
    fn all_zero_series_is_unusable() {
        let s = series(d(2020, 3, 1), &[0, 0, 0]);
        assert!(!s.is_usable());
        assert!(matches!(s.align_epi(), Err(ArcoError::Alignment(_))));
        let panel = EpiPanel::from_series([s]);
        assert_eq!(panel.quality.unusable_states, vec![StateId::from("XX")]);
    }

    #[test]
    fn log_of_one_is_zero_and_length_matches_window() {
        let cases: Vec<u64> = std::iter::repeat_n(1, 40).collect();
        let s = series(d(2020, 3, 1), &cases);
        let logs = s.log_cases(10, 32).unwrap();
        assert_eq!(logs.len(), 32 - 9);
        assert!(logs.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn log_of_real_valued_fixture() {
        let e2 = std::f64::consts::E.powi(2);
        let logs = ln_counts("XX", 10, &[e2]).unwrap();
        assert!((logs[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn zero_count_inside_range_names_state_and_day() {
        let err = ln_counts("XX", 10, &[3.0, 0.0]).unwrap_err();
        match err {
            ArcoError::Domain { state, t } => {
                assert_eq!(state, "XX");
                assert_eq!(t, 11);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn monotone_repair_is_running_max() {
        let mut v = vec![0, 2, 5, 4, 6, 6, 3, 7];
        let fixed = repair_monotone(&mut v);
        assert_eq!(v, vec![0, 2, 5, 5, 6, 6, 6, 7]);
        assert_eq!(fixed, vec![3, 6]);
    }

    #[test]
    fn normalized_csv_round_trip() {
        let a = series(d(2020, 3, 1), &[0, 1, 2, 4]);
        let b = StateSeries::new("YY".into(), d(2020, 3, 1), vec![3, 3, 5, 9], vec![0, 0, 1, 1]).unwrap();
        let panel = EpiPanel::from_series([a, b]);
        let mut buf = Vec::new();
        panel.write_normalized_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("state,epi_day,calendar_date,cum_cases,cum_deaths\n"));
        assert!(text.contains("XX,0,2020-03-01,0,0\n"));
        let back = EpiPanel::read_normalized_csv(buf.as_slice()).unwrap();
        assert_eq!(back.series, panel.series);
    }
}
