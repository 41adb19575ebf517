//! Treated / control / excluded assignment.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use super::{EpiPanel, StateId};
use crate::error::{ArcoError, Result};

const BUNDLED_META: &str = include_str!("../../data/states_meta.csv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroupHint {
    Treated,
    Control,
    Excluded,
    LowVariation,
    PartialLockdown,
}

impl fmt::Display for GroupHint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GroupHint::Treated => "treated",
            GroupHint::Control => "control",
            GroupHint::Excluded => "excluded",
            GroupHint::LowVariation => "low-variation",
            GroupHint::PartialLockdown => "partial-lockdown",
        })
    }
}

impl FromStr for GroupHint {
    type Err = ArcoError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "treated" => Ok(GroupHint::Treated),
            "control" => Ok(GroupHint::Control),
            "excluded" => Ok(GroupHint::Excluded),
            "low-variation" => Ok(GroupHint::LowVariation),
            "partial-lockdown" | "partial" => Ok(GroupHint::PartialLockdown),
            other => Err(ArcoError::Parse {
                column: "group_hint".into(),
                message: format!("unknown group hint `{other}`"),
            }),
        }
    }
}

/// One row of `states_meta.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateMeta {
    pub state: StateId,
    pub first_case: Option<NaiveDate>,
    /// Lockdown date shifted by the reporting lag.
    pub lockdown_plus10: Option<NaiveDate>,
    pub group_hint: Option<GroupHint>,
    pub reopen_plus10: Option<NaiveDate>,
}

impl StateMeta {
    /// Days from first case to the lagged lockdown date.
    pub fn lockdown_days(&self) -> Option<i64> {
        Some((self.lockdown_plus10? - self.first_case?).num_days())
    }

    pub fn reopen_days(&self) -> Option<i64> {
        Some((self.reopen_plus10? - self.first_case?).num_days())
    }
}

fn parse_opt_date(raw: &str, column: &str) -> Result<Option<NaiveDate>> {
    let raw = raw.trim();
    if raw.is_empty() || raw == "-" {
        return Ok(None);
    }
    NaiveDate::parse_from_str(raw, "%Y-%m-%d")
        .map(Some)
        .map_err(|e| ArcoError::Parse {
            column: column.to_string(),
            message: format!("`{raw}` is not an ISO-8601 date ({e})"),
        })
}

/// Parses `state,first_case,lockdown_plus10,group_hint,reopen_plus10`.
pub fn parse_states_meta(raw: &[u8]) -> Result<Vec<StateMeta>> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(raw);
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| ArcoError::Parse {
                column: name.to_string(),
                message: "required column is missing".into(),
            })
    };
    let (c_state, c_first, c_lock, c_hint, c_reopen) = (
        col("state")?,
        col("first_case")?,
        col("lockdown_plus10")?,
        col("group_hint")?,
        col("reopen_plus10")?,
    );
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        let hint = record[c_hint].trim();
        out.push(StateMeta {
            state: StateId::new(record[c_state].trim()),
            first_case: parse_opt_date(&record[c_first], "first_case")?,
            lockdown_plus10: parse_opt_date(&record[c_lock], "lockdown_plus10")?,
            group_hint: if hint.is_empty() { None } else { Some(hint.parse()?) },
            reopen_plus10: parse_opt_date(&record[c_reopen], "reopen_plus10")?,
        });
    }
    Ok(out)
}

/// Writes rows in the layout read by [`parse_states_meta`].
pub fn write_states_meta_csv<W: std::io::Write>(writer: W, meta: &[StateMeta]) -> Result<()> {
    let date = |d: Option<NaiveDate>| d.map(|d| d.to_string()).unwrap_or_default();
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["state", "first_case", "lockdown_plus10", "group_hint", "reopen_plus10"])?;
    for m in meta {
        let hint = m.group_hint.map(|h| h.to_string()).unwrap_or_default();
        w.write_record([
            m.state.as_str(),
            &date(m.first_case),
            &date(m.lockdown_plus10),
            &hint,
            &date(m.reopen_plus10),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// First-case, lagged-lockdown and lagged-reopen dates for the 50 states and DC.
pub fn bundled_states_meta() -> Vec<StateMeta> {
    parse_states_meta(BUNDLED_META.as_bytes()).expect("bundled metadata is well formed")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignParams {
    pub in_sample_start: u32,
    pub horizon: u32,
    pub lag_days: u32,
    pub min_in_sample: u32,
    /// Earliest lockdown epi-day still compatible with the control group.
    pub control_min_lockdown_day: u32,
    pub low_variation_end: u32,
    pub low_variation_min_distinct: usize,
}

impl Default for DesignParams {
    fn default() -> Self {
        DesignParams {
            in_sample_start: 10,
            horizon: 58,
            lag_days: 10,
            min_in_sample: 20,
            control_min_lockdown_day: 48,
            low_variation_end: 36,
            low_variation_min_distinct: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExclusionReason {
    TooEarlyLockdown,
    PartialLockdown,
    LowVariation,
    NoFirstCase,
    ReopenedBeforeHorizon,
}

impl fmt::Display for ExclusionReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExclusionReason::TooEarlyLockdown => "too-early-lockdown",
            ExclusionReason::PartialLockdown => "partial-lockdown",
            ExclusionReason::LowVariation => "low-variation",
            ExclusionReason::NoFirstCase => "no-first-case",
            ExclusionReason::ReopenedBeforeHorizon => "reopened-before-horizon",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "group", content = "reason")]
pub enum Group {
    Treated,
    Control,
    Excluded(ExclusionReason),
}

impl Group {
    pub fn label(&self) -> &'static str {
        match self {
            Group::Treated => "treated",
            Group::Control => "control",
            Group::Excluded(_) => "excluded",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateAssignment {
    pub group: Group,
    pub lockdown_date: Option<NaiveDate>,
    /// Last in-sample epi-day: lockdown epi-day plus the reporting lag.
    pub last_in_sample: Option<u32>,
    pub partial_lockdown: bool,
}

impl StateAssignment {
    pub fn exclusion_reason(&self) -> Option<ExclusionReason> {
        match self.group {
            Group::Excluded(r) => Some(r),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyDesign {
    pub params: DesignParams,
    pub states: BTreeMap<StateId, StateAssignment>,
}

impl StudyDesign {
    pub fn assignment(&self, state: &StateId) -> Option<&StateAssignment> {
        self.states.get(state)
    }

    pub fn treated(&self) -> Vec<StateId> {
        self.with_group(Group::Treated)
    }

    pub fn controls(&self) -> Vec<StateId> {
        self.with_group(Group::Control)
    }

    fn with_group(&self, group: Group) -> Vec<StateId> {
        self.states
            .iter()
            .filter(|(_, a)| a.group == group)
            .map(|(s, _)| s.clone())
            .collect()
    }

    /// Donor pool for `state`: every control except the state itself.
    pub fn donors_for(&self, state: &StateId) -> Vec<StateId> {
        self.controls().into_iter().filter(|s| s != state).collect()
    }
}

fn classify(meta: &StateMeta, params: &DesignParams) -> StateAssignment {
    let lag = Duration::days(i64::from(params.lag_days));
    let partial = meta.group_hint == Some(GroupHint::PartialLockdown);
    let lockdown_date = meta.lockdown_plus10.map(|d| d - lag);
    let mut assignment = StateAssignment {
        group: Group::Control,
        lockdown_date,
        last_in_sample: None,
        partial_lockdown: partial,
    };
    if partial {
        assignment.group = Group::Excluded(ExclusionReason::PartialLockdown);
        return assignment;
    }
    if meta.first_case.is_none() {
        assignment.group = Group::Excluded(ExclusionReason::NoFirstCase);
        return assignment;
    }
    let Some(lagged) = meta.lockdown_days() else {
        return assignment;
    };
    // lockdown epi-day on the same day-count scale as the lagged date
    let lockdown_day = lagged - i64::from(params.lag_days);
    if lockdown_day >= i64::from(params.control_min_lockdown_day) {
        return assignment;
    }
    let l = lagged.max(0) as u32;
    assignment.last_in_sample = Some(l);
    assignment.group = if l < params.in_sample_start + params.min_in_sample || l >= params.horizon {
        Group::Excluded(ExclusionReason::TooEarlyLockdown)
    } else if meta.reopen_days().is_some_and(|r| r < i64::from(params.horizon)) {
        Group::Excluded(ExclusionReason::ReopenedBeforeHorizon)
    } else {
        Group::Treated
    };
    assignment
}

/// Applies the date rules to metadata alone. Low-variation exclusions come
/// only from the `group_hint` column here; see [`assign_groups`] for the
/// data-driven rule.
pub fn assign_groups_from_meta(meta: &[StateMeta], params: &DesignParams) -> StudyDesign {
    let states = meta
        .iter()
        .map(|m| {
            let mut a = classify(m, params);
            if a.group == Group::Control && m.group_hint == Some(GroupHint::LowVariation) {
                a.group = Group::Excluded(ExclusionReason::LowVariation);
            }
            (m.state.clone(), a)
        })
        .collect();
    StudyDesign {
        params: params.clone(),
        states,
    }
}

fn distinct_counts(panel: &EpiPanel, state: &StateId, start: u32, end: u32) -> Option<usize> {
    let series = panel.get(state)?;
    let values: Option<BTreeSet<u64>> = (start..=end).map(|t| series.cases_at(t)).collect();
    values.map(|v| v.len())
}

/// Full assignment: metadata rules, then states without data become
/// `no-first-case`, and potential controls with fewer than
/// `low_variation_min_distinct` distinct counts over
/// `[in_sample_start, low_variation_end]` become `low-variation`.
pub fn assign_groups(panel: &EpiPanel, meta: &[StateMeta], params: &DesignParams) -> StudyDesign {
    let mut design = assign_groups_from_meta(meta, params);
    for (state, a) in design.states.iter_mut() {
        if matches!(a.group, Group::Excluded(_)) {
            continue;
        }
        if !panel.get(state).is_some_and(|s| s.is_usable()) {
            a.group = Group::Excluded(ExclusionReason::NoFirstCase);
            continue;
        }
        if a.group == Group::Control {
            let distinct = distinct_counts(panel, state, params.in_sample_start, params.low_variation_end);
            if distinct.is_none_or(|n| n < params.low_variation_min_distinct) {
                a.group = Group::Excluded(ExclusionReason::LowVariation);
            }
        }
    }
    design
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::StateSeries;

    /// Days-from-first-case-to-lagged-lockdown column of the published table.
    const TABLE_DAYS: [(&str, i64); 43] = [
        ("AL", 32),
        ("AK", 25),
        ("AZ", 75),
        ("CA", 63),
        ("CO", 30),
        ("CT", 23),
        ("DE", 23),
        ("DC", 18),
        ("FL", 40),
        ("GA", 41),
        ("HI", 25),
        ("ID", 22),
        ("IL", 67),
        ("IN", 27),
        ("KS", 32),
        ("KY", 30),
        ("LA", 22),
        ("ME", 31),
        ("MD", 34),
        ("MA", 61),
        ("MI", 23),
        ("MN", 29),
        ("MS", 32),
        ("MO", 39),
        ("MT", 25),
        ("NV", 37),
        ("NH", 35),
        ("NJ", 26),
        ("NM", 23),
        ("NY", 30),
        ("NC", 37),
        ("OH", 23),
        ("OR", 33),
        ("PA", 36),
        ("RI", 37),
        ("SC", 41),
        ("TN", 36),
        ("TX", 38),
        ("VT", 27),
        ("VA", 27),
        ("WA", 71),
        ("WV", 16),
        ("WI", 25),
    ];

    fn meta_by_state() -> BTreeMap<StateId, StateMeta> {
        bundled_states_meta()
            .into_iter()
            .map(|m| (m.state.clone(), m))
            .collect()
    }

    #[test]
    fn bundled_dates_reproduce_published_day_differences() {
        let meta = meta_by_state();
        assert_eq!(meta.len(), 51);
        for (code, days) in TABLE_DAYS {
            assert_eq!(meta[&code.into()].lockdown_days(), Some(days), "{code}");
        }
        assert_eq!(meta[&"KS".into()].lockdown_days(), Some(32));
        assert_eq!(meta[&"AL".into()].reopen_days(), Some(58));
        assert_eq!(meta[&"ME".into()].reopen_days(), Some(59));
    }

    #[test]
    fn metadata_yields_twenty_treated_and_six_controls() {
        let design = assign_groups_from_meta(&bundled_states_meta(), &DesignParams::default());
        let treated: Vec<String> = design.treated().iter().map(|s| s.to_string()).collect();
        assert_eq!(
            treated,
            [
                "AL", "CO", "FL", "GA", "KS", "KY", "MD", "ME", "MO", "MS", "NC", "NH", "NV", "NY", "OR", "PA", "RI",
                "SC", "TN", "TX"
            ]
        );
        let controls: Vec<String> = design.controls().iter().map(|s| s.to_string()).collect();
        assert_eq!(controls, ["AR", "CA", "IA", "ND", "NE", "SD"]);
        assert_eq!(design.states.len(), 51);
    }

    #[test]
    fn named_exclusions() {
        let design = assign_groups_from_meta(&bundled_states_meta(), &DesignParams::default());
        let reason = |s: &str| design.assignment(&s.into()).unwrap().exclusion_reason();
        assert_eq!(reason("WA"), Some(ExclusionReason::LowVariation));
        for s in ["AZ", "IL", "MA"] {
            assert_eq!(reason(s), Some(ExclusionReason::LowVariation));
        }
        for s in ["OK", "UT", "WY"] {
            assert_eq!(reason(s), Some(ExclusionReason::PartialLockdown));
            assert!(design.assignment(&s.into()).unwrap().partial_lockdown);
        }
        for s in ["CT", "NJ", "OH", "DC"] {
            assert_eq!(reason(s), Some(ExclusionReason::TooEarlyLockdown));
        }
        assert_eq!(design.assignment(&"KS".into()).unwrap().last_in_sample, Some(32));
        assert_eq!(
            design.assignment(&"KS".into()).unwrap().lockdown_date,
            NaiveDate::from_ymd_opt(2020, 3, 30)
        );
    }

    #[test]
    fn treated_invariants_hold() {
        let p = DesignParams::default();
        let design = assign_groups_from_meta(&bundled_states_meta(), &p);
        let meta = meta_by_state();
        for s in design.treated() {
            let l = design.assignment(&s).unwrap().last_in_sample.unwrap();
            assert!(l - p.in_sample_start >= p.min_in_sample, "{s}");
            if let Some(r) = meta[&s].reopen_days() {
                assert!(r >= i64::from(p.horizon), "{s}");
            }
        }
        for s in design.controls() {
            if let Some(days) = meta[&s].lockdown_days() {
                assert!(days - i64::from(p.lag_days) >= i64::from(p.control_min_lockdown_day));
            }
        }
        let agg = |g: &str| design.states.values().filter(|a| a.group.label() == g).count();
        assert_eq!(agg("treated") + agg("control") + agg("excluded"), 51);
    }

    #[test]
    fn early_reopening_excludes() {
        let mut meta = bundled_states_meta();
        let al = meta.iter_mut().find(|m| m.state.as_str() == "AL").unwrap();
        al.reopen_plus10 = NaiveDate::from_ymd_opt(2020, 5, 1);
        let design = assign_groups_from_meta(&meta, &DesignParams::default());
        assert_eq!(
            design.assignment(&"AL".into()).unwrap().group,
            Group::Excluded(ExclusionReason::ReopenedBeforeHorizon)
        );
    }

    #[test]
    fn flat_control_is_low_variation_on_data() {
        let start = NaiveDate::from_ymd_opt(2020, 3, 1).unwrap();
        let flat = vec![1u64; 60];
        let growing: Vec<u64> = (1..=60).collect();
        let meta = vec![
            StateMeta {
                state: "AA".into(),
                first_case: Some(start),
                lockdown_plus10: None,
                group_hint: Some(GroupHint::Control),
                reopen_plus10: None,
            },
            StateMeta {
                state: "BB".into(),
                first_case: Some(start),
                lockdown_plus10: None,
                group_hint: None,
                reopen_plus10: None,
            },
            StateMeta {
                state: "CC".into(),
                first_case: Some(start),
                lockdown_plus10: None,
                group_hint: None,
                reopen_plus10: None,
            },
        ];
        let panel = EpiPanel::from_series([
            StateSeries::new("AA".into(), start, flat.clone(), vec![0; 60]).unwrap(),
            StateSeries::new("BB".into(), start, growing, vec![0; 60]).unwrap(),
            StateSeries::new("CC".into(), start, vec![0; 60], vec![0; 60]).unwrap(),
        ]);
        let design = assign_groups(&panel, &meta, &DesignParams::default());
        let group = |s: &str| design.assignment(&s.into()).unwrap().group;
        assert_eq!(group("AA"), Group::Excluded(ExclusionReason::LowVariation));
        assert_eq!(group("BB"), Group::Control);
        assert_eq!(group("CC"), Group::Excluded(ExclusionReason::NoFirstCase));
    }
}
