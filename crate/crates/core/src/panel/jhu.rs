//! JHU CSSE US time-series ingestion (`time_series_covid19_{confirmed,deaths}_US.csv`).

use std::collections::BTreeMap;

use chrono::{Duration, NaiveDate};

use super::states::{code_for_name, US_STATES};
use super::{repair_monotone, CountKind, DataQualityReport, EpiPanel, RepairedCell, StateId, StateSeries};
use crate::error::{ArcoError, Result};

const METADATA_COLUMNS: [&str; 12] = [
    "UID",
    "iso2",
    "iso3",
    "code3",
    "FIPS",
    "Admin2",
    "Province_State",
    "Country_Region",
    "Lat",
    "Long_",
    "Combined_Key",
    "Population",
];

struct StateTotals {
    first_date: NaiveDate,
    totals: BTreeMap<&'static str, Vec<i64>>,
}

fn parse_header_date(column: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(column.trim(), "%m/%d/%y").map_err(|e| ArcoError::Parse {
        column: column.to_string(),
        message: format!("expected an M/D/YY date column ({e})"),
    })
}

fn parse_count(raw: &str, column: &str) -> Result<i64> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Ok(0);
    }
    raw.parse::<i64>()
        .or_else(|_| raw.parse::<f64>().map(|v| v.round() as i64))
        .map_err(|_| ArcoError::Parse {
            column: column.to_string(),
            message: format!("non-numeric count `{raw}`"),
        })
}

/// Sums county rows to state totals over all date columns `<= cutoff`.
fn read_state_totals(raw: &[u8], cutoff: NaiveDate) -> Result<StateTotals> {
    let mut reader = csv::ReaderBuilder::new().flexible(false).from_reader(raw);
    let headers = reader.headers()?.clone();

    let state_col = headers
        .iter()
        .position(|h| h.trim() == "Province_State")
        .ok_or_else(|| ArcoError::Parse {
            column: "Province_State".into(),
            message: "required column is missing".into(),
        })?;

    let mut date_cols: Vec<(usize, NaiveDate)> = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        if METADATA_COLUMNS.contains(&h.trim()) {
            continue;
        }
        date_cols.push((i, parse_header_date(h)?));
    }
    if date_cols.is_empty() {
        return Err(ArcoError::Parse {
            column: "<dates>".into(),
            message: "no date columns found".into(),
        });
    }
    for pair in date_cols.windows(2) {
        if pair[1].1 - pair[0].1 != Duration::days(1) {
            return Err(ArcoError::Parse {
                column: headers[pair[1].0].to_string(),
                message: format!("date columns must be consecutive days (previous {})", pair[0].1),
            });
        }
    }
    date_cols.retain(|(_, d)| *d <= cutoff);
    let first_date = date_cols.first().map(|(_, d)| *d).ok_or_else(|| ArcoError::Parse {
        column: headers[0].to_string(),
        message: format!("no date columns on or before cutoff {cutoff}"),
    })?;

    let mut totals: BTreeMap<&'static str, Vec<i64>> = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let Some(code) = code_for_name(&record[state_col]) else {
            continue;
        };
        let acc = totals.entry(code).or_insert_with(|| vec![0; date_cols.len()]);
        for (k, (col, _)) in date_cols.iter().enumerate() {
            acc[k] += parse_count(&record[*col], &headers[*col])?;
        }
    }
    Ok(StateTotals { first_date, totals })
}

fn missing_states(totals: &BTreeMap<&'static str, Vec<i64>>) -> Vec<String> {
    US_STATES
        .iter()
        .filter(|(code, _)| !totals.contains_key(code))
        .map(|(code, _)| code.to_string())
        .collect()
}

/// Parses the JHU CSSE confirmed and deaths US files, sums counties to
/// states, truncates at `cutoff_date`, and repairs non-monotone revisions by
/// a running maximum. Repaired cells are listed in the quality report.
pub fn parse_jhu_csv(raw_cases: &[u8], raw_deaths: &[u8], cutoff_date: NaiveDate) -> Result<EpiPanel> {
    let cases = read_state_totals(raw_cases, cutoff_date)?;
    let deaths = read_state_totals(raw_deaths, cutoff_date)?;

    let mut absent = missing_states(&cases.totals);
    for s in missing_states(&deaths.totals) {
        if !absent.contains(&s) {
            absent.push(s);
        }
    }
    if !absent.is_empty() {
        return Err(ArcoError::MissingStates(absent));
    }
    let ncases = cases.totals.values().next().map_or(0, Vec::len);
    let ndeaths = deaths.totals.values().next().map_or(0, Vec::len);
    if cases.first_date != deaths.first_date || ncases != ndeaths {
        return Err(ArcoError::Parse {
            column: "<dates>".into(),
            message: "confirmed and deaths files cover different date ranges".into(),
        });
    }

    let mut quality = DataQualityReport {
        cutoff_date: Some(cutoff_date),
        ..Default::default()
    };
    let mut series = Vec::with_capacity(US_STATES.len());
    for (code, _) in US_STATES.iter() {
        let state = StateId::new(*code);
        let mut c = cases.totals[code].clone();
        let mut d = deaths.totals[code].clone();
        for (kind, values) in [(CountKind::Cases, &mut c), (CountKind::Deaths, &mut d)] {
            let original = values.clone();
            for idx in repair_monotone(values) {
                quality.repaired_cells.push(RepairedCell {
                    state: state.clone(),
                    date: cases.first_date + Duration::days(idx as i64),
                    kind,
                    original: original[idx],
                    repaired: values[idx],
                });
            }
        }
        let to_u64 = |v: Vec<i64>| v.into_iter().map(|x| x.max(0) as u64).collect::<Vec<_>>();
        let s = StateSeries::new(state.clone(), cases.first_date, to_u64(c), to_u64(d))?;
        if !s.is_usable() {
            quality.unusable_states.push(state);
        }
        series.push(s);
    }

    let mut panel = EpiPanel::from_series(series);
    panel.quality = quality;
    Ok(panel)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, m, day).unwrap()
    }

    /// A JHU-shaped file with one county row per state, plus extra rows.
    fn fixture(extra_rows: &[&str], skip: &[&str], with_population: bool) -> String {
        let mut out =
            String::from("UID,iso2,iso3,code3,FIPS,Admin2,Province_State,Country_Region,Lat,Long_,Combined_Key");
        if with_population {
            out.push_str(",Population");
        }
        out.push_str(",3/11/20,3/12/20,3/13/20,3/14/20\n");
        for (code, name) in US_STATES.iter() {
            if skip.contains(code) {
                continue;
            }
            let pop = if with_population { ",1000" } else { "" };
            let counts = match *code {
                "AL" => "0,0,1,4",
                _ => "0,0,0,0",
            };
            out.push_str(&format!(
                "1,US,USA,840,1,County,{name},US,0,0,\"County, {name}, US\"{pop},{counts}\n"
            ));
        }
        for row in extra_rows {
            out.push_str(row);
            out.push('\n');
        }
        out
    }

    #[test]
    fn counties_are_summed_and_offset_found() {
        let cases = fixture(
            &[
                "2,US,USA,840,2,Other,Alabama,US,0,0,\"Other, Alabama, US\",0,0,1,2",
                "3,US,USA,840,3,Third,Alabama,US,0,0,\"Third, Alabama, US\",0,0,1,0",
            ],
            &[],
            false,
        );
        let deaths = fixture(&[], &[], true);
        let panel = parse_jhu_csv(cases.as_bytes(), deaths.as_bytes(), d(5, 11)).unwrap();
        let al = panel.get(&"AL".into()).unwrap();
        // three county rows: 1 + 1 + 1 on 3/13, 4 + 2 + 0 on 3/14
        assert_eq!(al.cum_cases, vec![0, 0, 3, 6]);
        assert_eq!(al.epi_day_offset, Some(d(3, 13)));
        assert_eq!(panel.series.len(), 51);
        assert!(panel.quality.unusable_states.contains(&"WY".into()));
        assert!(!panel.quality.unusable_states.contains(&"AL".into()));
    }

    #[test]
    fn cutoff_truncates_series() {
        let cases = fixture(&[], &[], false);
        let deaths = fixture(&[], &[], true);
        let panel = parse_jhu_csv(cases.as_bytes(), deaths.as_bytes(), d(3, 13)).unwrap();
        let al = panel.get(&"AL".into()).unwrap();
        assert_eq!(al.cum_cases, vec![0, 0, 1]);
        assert_eq!(*al.calendar_dates.last().unwrap(), d(3, 13));
    }

    #[test]
    fn missing_states_are_listed() {
        let cases = fixture(&[], &["NE", "SD"], false);
        let deaths = fixture(&[], &[], true);
        match parse_jhu_csv(cases.as_bytes(), deaths.as_bytes(), d(5, 11)) {
            Err(ArcoError::MissingStates(s)) => assert_eq!(s, vec!["NE", "SD"]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_header_names_the_column() {
        let cases = fixture(&[], &[], false).replacen("3/12/20", "March12", 1);
        let deaths = fixture(&[], &[], true);
        match parse_jhu_csv(cases.as_bytes(), deaths.as_bytes(), d(5, 11)) {
            Err(ArcoError::Parse { column, .. }) => assert_eq!(column, "March12"),
            other => panic!("unexpected {other:?}"),
        }
        let no_state = fixture(&[], &[], false).replacen("Province_State", "State", 1);
        match parse_jhu_csv(no_state.as_bytes(), deaths.as_bytes(), d(5, 11)) {
            Err(ArcoError::Parse { column, .. }) => assert_eq!(column, "Province_State"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn downward_revisions_are_repaired_and_reported() {
        let cases = fixture(&[], &[], false).replacen("0,0,1,4", "0,2,1,4", 1);
        let deaths = fixture(&[], &[], true);
        let panel = parse_jhu_csv(cases.as_bytes(), deaths.as_bytes(), d(5, 11)).unwrap();
        let al = panel.get(&"AL".into()).unwrap();
        assert_eq!(al.cum_cases, vec![0, 2, 2, 4]);
        assert_eq!(panel.quality.repaired_cells.len(), 1);
        let cell = &panel.quality.repaired_cells[0];
        assert_eq!((cell.date, cell.original, cell.repaired), (d(3, 13), 1, 2));
    }

    #[test]
    fn ingestion_is_deterministic() {
        let cases = fixture(&[], &[], false);
        let deaths = fixture(&[], &[], true);
        let a = parse_jhu_csv(cases.as_bytes(), deaths.as_bytes(), d(5, 11)).unwrap();
        let b = parse_jhu_csv(cases.as_bytes(), deaths.as_bytes(), d(5, 11)).unwrap();
        let (mut ba, mut bb) = (Vec::new(), Vec::new());
        a.write_normalized_csv(&mut ba).unwrap();
        b.write_normalized_csv(&mut bb).unwrap();
        assert_eq!(ba, bb);
    }
}
