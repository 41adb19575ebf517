use std::collections::BTreeMap;
use std::io::Write;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::engine::{anchored_level_path, LevelPath, StateEstimate};
use crate::error::{ArcoError, Result};
use crate::panel::states::code_for_name;
use crate::panel::{EpiPanel, StateId};
use crate::stats::median;

/// Google Community Mobility Report categories, in file order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MobilityCategory {
    RetailRecreation,
    GroceryPharmacy,
    Parks,
    Transit,
    Workplaces,
    Residential,
}

impl MobilityCategory {
    pub const ALL: [MobilityCategory; 6] = [
        MobilityCategory::RetailRecreation,
        MobilityCategory::GroceryPharmacy,
        MobilityCategory::Parks,
        MobilityCategory::Transit,
        MobilityCategory::Workplaces,
        MobilityCategory::Residential,
    ];

    pub const OUTDOOR: [MobilityCategory; 5] = [
        MobilityCategory::RetailRecreation,
        MobilityCategory::GroceryPharmacy,
        MobilityCategory::Parks,
        MobilityCategory::Transit,
        MobilityCategory::Workplaces,
    ];

    pub fn column(self) -> &'static str {
        match self {
            MobilityCategory::RetailRecreation => "retail_and_recreation_percent_change_from_baseline",
            MobilityCategory::GroceryPharmacy => "grocery_and_pharmacy_percent_change_from_baseline",
            MobilityCategory::Parks => "parks_percent_change_from_baseline",
            MobilityCategory::Transit => "transit_stations_percent_change_from_baseline",
            MobilityCategory::Workplaces => "workplaces_percent_change_from_baseline",
            MobilityCategory::Residential => "residential_percent_change_from_baseline",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Which mobility series a summary or counterfactual is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MobilityMeasure {
    /// Median of the five non-residential categories.
    Outdoor,
    Residential,
}

/// One state-day of percent changes from baseline; `None` where Google withheld the value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MobilityRow {
    pub date: NaiveDate,
    pub values: [Option<f64>; 6],
}

impl MobilityRow {
    pub fn get(&self, category: MobilityCategory) -> Option<f64> {
        self.values[category.index()]
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct MobilityPanel {
    pub states: BTreeMap<StateId, BTreeMap<NaiveDate, MobilityRow>>,
}

fn parse_value(raw: &str, column: &str) -> Result<Option<f64>> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Ok(None);
    }
    raw.parse().map(Some).map_err(|_| ArcoError::Parse {
        column: column.to_string(),
        message: format!("`{raw}` is not a number"),
    })
}

/// Reads the US mobility report, keeping state-level rows (`sub_region_1`
/// set, `sub_region_2` and `metro_area` empty when those columns exist).
/// Rows naming something other than a state or DC are skipped.
pub fn parse_mobility_csv(raw: &[u8]) -> Result<MobilityPanel> {
    let mut reader = csv::Reader::from_reader(raw);
    let headers = reader.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);
    let require = |name: &str| {
        find(name).ok_or_else(|| ArcoError::Parse {
            column: name.to_string(),
            message: "required column is missing".into(),
        })
    };
    let c_region = require("sub_region_1")?;
    let c_date = require("date")?;
    let c_values: Vec<usize> = MobilityCategory::ALL
        .iter()
        .map(|c| require(c.column()))
        .collect::<Result<_>>()?;
    let c_sub2 = find("sub_region_2");
    let c_metro = find("metro_area");
    let c_country = find("country_region_code");

    let mut panel = MobilityPanel::default();
    for record in reader.records() {
        let record = record?;
        let blank = |c: Option<usize>| c.is_none_or(|i| record.get(i).is_none_or(|v| v.trim().is_empty()));
        if !blank(c_sub2) || !blank(c_metro) {
            continue;
        }
        if c_country.is_some_and(|i| record.get(i).is_some_and(|v| v.trim() != "US")) {
            continue;
        }
        let region = record[c_region].trim();
        if region.is_empty() {
            continue;
        }
        let Some(code) = code_for_name(region) else {
            log::debug!("skipping mobility rows for `{region}`");
            continue;
        };
        let date = NaiveDate::parse_from_str(record[c_date].trim(), "%Y-%m-%d").map_err(|e| ArcoError::Parse {
            column: "date".into(),
            message: format!("`{}` is not an ISO-8601 date ({e})", &record[c_date]),
        })?;
        let mut values = [None; 6];
        for (slot, (&i, cat)) in values.iter_mut().zip(c_values.iter().zip(MobilityCategory::ALL)) {
            *slot = parse_value(&record[i], cat.column())?;
        }
        panel
            .states
            .entry(StateId::new(code))
            .or_default()
            .insert(date, MobilityRow { date, values });
    }
    Ok(panel)
}

/// Median of the five outdoor categories.
pub fn outdoor_composite(state: &StateId, row: &MobilityRow) -> Result<f64> {
    let mut values = Vec::with_capacity(5);
    for cat in MobilityCategory::OUTDOOR {
        values.push(row.get(cat).ok_or_else(|| ArcoError::MissingCategory {
            state: state.to_string(),
            date: row.date,
            category: cat.column().to_string(),
        })?);
    }
    Ok(median(&values))
}

impl MobilityPanel {
    pub fn rows(&self, state: &StateId) -> Option<&BTreeMap<NaiveDate, MobilityRow>> {
        self.states.get(state)
    }

    /// Value of `measure` on `date`; `None` if the day or a needed category is missing.
    pub fn value(&self, state: &StateId, date: NaiveDate, measure: MobilityMeasure) -> Option<f64> {
        let row = self.states.get(state)?.get(&date)?;
        match measure {
            MobilityMeasure::Residential => row.get(MobilityCategory::Residential),
            MobilityMeasure::Outdoor => outdoor_composite(state, row).ok(),
        }
    }

    /// `measure` on each epi-day of `[start, end]` for `state`, using the case panel's day 1.
    pub fn epi_series(
        &self,
        panel: &EpiPanel,
        state: &StateId,
        measure: MobilityMeasure,
        start: u32,
        end: u32,
    ) -> Result<Vec<Option<f64>>> {
        let series = panel.require(state)?;
        (start..=end)
            .map(|t| {
                let date = series
                    .date_of_epi_day(t)
                    .ok_or_else(|| ArcoError::Alignment(state.to_string()))?;
                Ok(self.value(state, date, measure))
            })
            .collect()
    }
}

/// Largest share of missing days a window median tolerates.
const MAX_MISSING_SHARE: f64 = 0.2;

/// Median over the available days; errors when more than a fifth are missing.
pub fn window_median(state: &StateId, values: &[Option<f64>]) -> Result<f64> {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    let missing = values.len() - present.len();
    if values.is_empty() || missing as f64 > MAX_MISSING_SHARE * values.len() as f64 {
        return Err(ArcoError::DataSufficiency {
            state: state.to_string(),
            message: format!("{missing} of {} window days lack mobility data", values.len()),
        });
    }
    Ok(median(&present))
}

/// Per-state window medians of both measures, for box plots.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MobilitySummary {
    pub state: StateId,
    pub group: String,
    pub residential_median: f64,
    pub outdoor_median: f64,
}

pub fn mobility_summary(
    mobility: &MobilityPanel,
    panel: &EpiPanel,
    state: &StateId,
    group: &str,
    start: u32,
    end: u32,
) -> Result<MobilitySummary> {
    let median_of = |m| window_median(state, &mobility.epi_series(panel, state, m, start, end)?);
    Ok(MobilitySummary {
        state: state.clone(),
        group: group.to_string(),
        residential_median: median_of(MobilityMeasure::Residential)?,
        outdoor_median: median_of(MobilityMeasure::Outdoor)?,
    })
}

pub fn write_boxplot_csv<W: Write>(writer: W, rows: &[MobilitySummary]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn mobility_at(mobility: &MobilityPanel, panel: &EpiPanel, state: &StateId, t: u32, m: MobilityMeasure) -> Result<f64> {
    let missing = || ArcoError::MissingObservation {
        state: state.to_string(),
        t,
    };
    let date = panel.require(state)?.date_of_epi_day(t).ok_or_else(missing)?;
    mobility.value(state, date, m).ok_or_else(missing)
}

/// Mobility counterfactual with the cases weights of `estimate`, anchored at
/// its last in-sample day. Each state's epi-days map to dates through the case panel.
pub fn mobility_counterfactual(
    estimate: &StateEstimate,
    mobility: &MobilityPanel,
    panel: &EpiPanel,
    measure: MobilityMeasure,
    level: f64,
) -> Result<LevelPath> {
    anchored_level_path(
        &estimate.state,
        &estimate.fit.column_names,
        &estimate.fit.omega,
        &estimate.band.replicates,
        estimate.last_in_sample,
        estimate.horizon,
        level,
        |t| mobility_at(mobility, panel, &estimate.state, t, measure),
        |d, t| mobility_at(mobility, panel, d, t, measure),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "country_region_code,country_region,sub_region_1,sub_region_2,metro_area,date,\
retail_and_recreation_percent_change_from_baseline,grocery_and_pharmacy_percent_change_from_baseline,\
parks_percent_change_from_baseline,transit_stations_percent_change_from_baseline,\
workplaces_percent_change_from_baseline,residential_percent_change_from_baseline";

    #[test]
    fn keeps_state_level_rows_only() {
        let csv = format!(
            "{HEADER}\n\
US,United States,,,,2020-03-01,1,2,3,4,5,6\n\
US,United States,Alabama,,,2020-03-01,-10,-20,,-40,-50,8\n\
US,United States,Alabama,Autauga County,,2020-03-01,0,0,0,0,0,0\n\
US,United States,Puerto Rico,,,2020-03-01,0,0,0,0,0,0\n"
        );
        let panel = parse_mobility_csv(csv.as_bytes()).unwrap();
        assert_eq!(panel.states.len(), 1);
        let al = StateId::new("AL");
        let row = &panel.rows(&al).unwrap()[&NaiveDate::from_ymd_opt(2020, 3, 1).unwrap()];
        assert_eq!(row.get(MobilityCategory::Parks), None);
        assert_eq!(row.get(MobilityCategory::Residential), Some(8.0));
        match outdoor_composite(&al, row).unwrap_err() {
            ArcoError::MissingCategory { category, .. } => assert_eq!(category, "parks_percent_change_from_baseline"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn missing_column_is_a_parse_error() {
        let csv = "sub_region_1,date\nAlabama,2020-03-01\n";
        assert!(matches!(
            parse_mobility_csv(csv.as_bytes()),
            Err(ArcoError::Parse { .. })
        ));
    }

    #[test]
    fn window_median_tolerates_a_fifth_missing() {
        let s = StateId::new("X");
        let mut v: Vec<Option<f64>> = (0..10).map(|i| Some(i as f64)).collect();
        v[0] = None;
        v[1] = None;
        assert_eq!(window_median(&s, &v).unwrap(), 5.5);
        v[2] = None;
        assert!(matches!(window_median(&s, &v), Err(ArcoError::DataSufficiency { .. })));
    }
}
