use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use super::config::RunConfig;
use super::output::OutputDir;
use crate::auxiliary::{
    event_study, mobility_counterfactual, mobility_summary, parse_mobility_csv, parse_trends_csv, write_boxplot_csv,
    write_event_study_csv, MobilityMeasure, MobilitySummary, SearchPanel,
};
use crate::engine::{
    deaths_counterfactual, fit_state, ratio_report, write_level_paths_csv, write_paths_csv, FitRecord, LevelPath,
    RatioReport, StateEstimate, TREND_COLUMN,
};
use crate::error::{ArcoError, Result};
use crate::panel::{
    assign_groups, bundled_states_meta, parse_jhu_csv, parse_states_meta, write_states_meta_csv, EpiPanel, Group,
    StateId, StudyDesign,
};
use crate::rng::substream;
use crate::validation::{coverage_experiment, generate_synthetic, run_placebo, PlaceboRun};

/// Per-state failures of a command that otherwise completed.
#[derive(Debug, Default)]
pub struct Outcome {
    pub failures: Vec<(StateId, ArcoError)>,
}

impl Outcome {
    fn absorb<T>(&mut self, results: Vec<(StateId, Result<T>)>) -> Vec<T> {
        let mut ok = Vec::with_capacity(results.len());
        for (state, r) in results {
            match r {
                Ok(v) => ok.push(v),
                Err(e) => {
                    log::error!("{state}: {e}");
                    self.failures.push((state, e));
                }
            }
        }
        ok
    }
}

/// Loaded inputs shared by the subcommands.
pub struct Context {
    pub config: RunConfig,
    pub panel: EpiPanel,
    pub design: StudyDesign,
    pub out: OutputDir,
}

fn read(path: &std::path::Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => ArcoError::FileNotFound(path.to_path_buf()),
        _ => ArcoError::Io(e),
    })
}

pub fn load_panel(config: &RunConfig) -> Result<EpiPanel> {
    let paths = &config.paths;
    if let Some(p) = &paths.panel_csv {
        return EpiPanel::read_normalized_csv(read(p)?.as_slice());
    }
    match (&paths.cases_csv, &paths.deaths_csv) {
        (Some(c), Some(d)) => parse_jhu_csv(&read(c)?, &read(d)?, config.params.cutoff_date),
        _ => Err(ArcoError::Config(
            "no case data: set paths.panel_csv or both paths.cases_csv and paths.deaths_csv".into(),
        )),
    }
}

impl Context {
    pub fn load(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let panel = load_panel(&config)?;
        let meta = match &config.paths.meta_csv {
            Some(p) => parse_states_meta(&read(p)?)?,
            None => bundled_states_meta(),
        };
        let design = assign_groups(&panel, &meta, &config.design_params());
        let out = OutputDir::new(config.paths.out_dir.clone(), config.hash(), config.params.seed);
        Ok(Context {
            config,
            panel,
            design,
            out,
        })
    }

    fn treated(&self) -> Vec<StateId> {
        let all = self.design.treated();
        match &self.config.states.treated {
            Some(only) => all
                .into_iter()
                .filter(|s| only.iter().any(|o| o == s.as_str()))
                .collect(),
            None => all,
        }
    }

    fn estimates(&self, states: &[StateId]) -> Vec<(StateId, Result<StateEstimate>)> {
        let settings = self.config.engine_settings();
        states
            .par_iter()
            .map(|s| (s.clone(), fit_state(&self.panel, &self.design, s, &settings)))
            .collect()
    }

    fn placebos(&self) -> Vec<(StateId, Result<PlaceboRun>)> {
        let settings = self.config.engine_settings();
        let placebo = self.config.placebo_settings();
        self.design
            .controls()
            .par_iter()
            .map(|s| {
                (
                    s.clone(),
                    run_placebo(&self.panel, &self.design, s, &placebo, &settings),
                )
            })
            .collect()
    }
}

fn write_estimates(out: &OutputDir, estimates: &[StateEstimate]) -> Result<()> {
    for e in estimates {
        out.json(&format!("fits/{}.json", e.state), &FitRecord::from(e))?;
        out.csv(&format!("paths/{}.csv", e.state), |w| write_paths_csv(w, &[&e.path]))?;
    }
    Ok(())
}

fn write_report(out: &OutputDir, report: &RatioReport) -> Result<()> {
    out.csv("ratios.csv", |w| report.write_states_csv(w))?;
    out.csv("table2.csv", |w| report.write_aggregates_csv(w))?;
    Ok(())
}

struct FitRun {
    estimates: Vec<StateEstimate>,
    placebos: Vec<PlaceboRun>,
    report: RatioReport,
}

fn fit_and_report(ctx: &Context, outcome: &mut Outcome) -> Result<Option<FitRun>> {
    let treated = ctx.treated();
    if treated.is_empty() {
        println!("fit: nothing to fit (no treated states selected)");
        return Ok(None);
    }
    let estimates = outcome.absorb(ctx.estimates(&treated));
    // placebo failures do not fail the fit command
    let placebos: Vec<PlaceboRun> = ctx
        .placebos()
        .into_iter()
        .filter_map(|(s, r)| r.map_err(|e| log::warn!("placebo {s}: {e}")).ok())
        .collect();
    write_estimates(&ctx.out, &estimates)?;
    let treated_paths: Vec<_> = estimates.iter().map(|e| e.path.clone()).collect();
    let control_paths: Vec<_> = placebos.iter().map(|p| p.estimate.path.clone()).collect();
    let report = ratio_report(&treated_paths, &control_paths, ctx.config.params.horizon)?;
    write_report(&ctx.out, &report)?;
    ctx.out.json("data_quality.json", &ctx.panel.quality)?;
    println!(
        "fit: {} of {} treated states estimated, {} placebos; outputs in {}",
        estimates.len(),
        treated.len(),
        placebos.len(),
        ctx.out.root().display()
    );
    Ok(Some(FitRun {
        estimates,
        placebos,
        report,
    }))
}

pub fn cmd_fit(ctx: &Context) -> Result<Outcome> {
    let mut outcome = Outcome::default();
    fit_and_report(ctx, &mut outcome)?;
    Ok(outcome)
}

#[derive(Serialize)]
struct PlaceboRow<'a> {
    state: &'a StateId,
    t: u32,
    ratio: f64,
    in_sample: bool,
}

pub fn cmd_placebo(ctx: &Context) -> Result<Outcome> {
    let mut outcome = Outcome::default();
    let runs = outcome.absorb(ctx.placebos());
    for run in &runs {
        ctx.out.csv(&format!("placebo/{}.csv", run.state), |buf| {
            let mut w = csv::Writer::from_writer(buf);
            for &(t, ratio) in &run.ratio_series {
                w.serialize(PlaceboRow {
                    state: &run.state,
                    t,
                    ratio,
                    in_sample: t <= run.last_in_sample,
                })?;
            }
            w.flush()?;
            Ok(())
        })?;
        ctx.out.json(
            &format!("placebo/fits/{}.json", run.state),
            &FitRecord::from(&run.estimate),
        )?;
    }
    let paths: Vec<_> = runs.iter().map(|r| r.estimate.path.clone()).collect();
    let report = ratio_report(&[], &paths, ctx.config.params.horizon)?;
    ctx.out.csv("placebo/ratios.csv", |w| report.write_states_csv(w))?;
    println!("placebo: {} control states", runs.len());
    Ok(outcome)
}

pub fn cmd_deaths(ctx: &Context) -> Result<Outcome> {
    let mut outcome = Outcome::default();
    let treated = ctx.treated();
    let estimates = outcome.absorb(ctx.estimates(&treated));
    let level = ctx.config.params.level;
    let paths = outcome.absorb(
        estimates
            .iter()
            .map(|e| (e.state.clone(), deaths_counterfactual(e, &ctx.panel, level)))
            .collect(),
    );
    for p in &paths {
        ctx.out
            .csv(&format!("deaths/{}.csv", p.state), |w| write_level_paths_csv(w, &[p]))?;
    }
    println!("deaths: {} counterfactual paths", paths.len());
    Ok(outcome)
}

#[derive(Serialize)]
struct AverageRow {
    h: u32,
    n: usize,
    actual: f64,
    counterfactual: f64,
}

/// Cross-state means by days since the anchor.
fn average_paths(paths: &[&LevelPath]) -> Vec<AverageRow> {
    let len = paths.iter().map(|p| p.len()).max().unwrap_or(0);
    (0..len)
        .map(|h| {
            let present: Vec<&&LevelPath> = paths.iter().filter(|p| h < p.len()).collect();
            let n = present.len();
            AverageRow {
                h: h as u32,
                n,
                actual: present.iter().map(|p| p.actual[h]).sum::<f64>() / n as f64,
                counterfactual: present.iter().map(|p| p.point[h]).sum::<f64>() / n as f64,
            }
        })
        .collect()
}

fn write_rows<T: Serialize>(buf: &mut Vec<u8>, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(buf);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_mobility(ctx: &Context) -> Result<Outcome> {
    let path = ctx
        .config
        .paths
        .mobility_csv
        .as_ref()
        .ok_or_else(|| ArcoError::Config("mobility requires paths.mobility_csv".into()))?;
    let mobility = parse_mobility_csv(&read(path)?)?;
    let mut outcome = Outcome::default();
    let p = &ctx.config.params;

    let mut summaries: Vec<MobilitySummary> = Vec::new();
    for (state, a) in &ctx.design.states {
        if matches!(a.group, Group::Excluded(_)) || mobility.rows(state).is_none() {
            continue;
        }
        match mobility_summary(
            &mobility,
            &ctx.panel,
            state,
            a.group.label(),
            p.in_sample_start,
            p.horizon,
        ) {
            Ok(s) => summaries.push(s),
            Err(e) => log::warn!("mobility summary {state}: {e}"),
        }
    }
    ctx.out
        .csv("mobility/boxplot.csv", |w| write_boxplot_csv(w, &summaries))?;

    let estimates = outcome.absorb(ctx.estimates(&ctx.treated()));
    for measure in [MobilityMeasure::Outdoor, MobilityMeasure::Residential] {
        let name = match measure {
            MobilityMeasure::Outdoor => "outdoor",
            MobilityMeasure::Residential => "residential",
        };
        let paths = outcome.absorb(
            estimates
                .iter()
                .map(|e| {
                    (
                        e.state.clone(),
                        mobility_counterfactual(e, &mobility, &ctx.panel, measure, p.level),
                    )
                })
                .collect(),
        );
        for lp in &paths {
            ctx.out.csv(&format!("mobility/{}_{name}.csv", lp.state), |w| {
                write_level_paths_csv(w, &[lp])
            })?;
        }
        let refs: Vec<&LevelPath> = paths.iter().collect();
        ctx.out.csv(&format!("mobility/treated_average_{name}.csv"), |w| {
            write_rows(w, &average_paths(&refs))
        })?;
    }
    // a state may fail once per measure; report it once
    let mut seen = BTreeSet::new();
    outcome.failures.retain(|(s, _)| seen.insert(s.clone()));
    println!(
        "mobility: {} states summarised, {} treated paths",
        summaries.len(),
        estimates.len()
    );
    Ok(outcome)
}

pub fn cmd_events(ctx: &Context) -> Result<Outcome> {
    let path = ctx
        .config
        .paths
        .trends_csv
        .as_ref()
        .ok_or_else(|| ArcoError::Config("events requires paths.trends_csv".into()))?;
    let rows = parse_trends_csv(&read(path)?)?;
    let raw = SearchPanel::from_rows(&rows, &ctx.config.states.terms);
    let cutoff = ctx.config.params.cutoff_date;
    let first = rows.iter().map(|r| r.date).min().unwrap_or(cutoff);
    let z = raw.standardized(first, cutoff);

    let lockdowns = |groups: &[Group]| -> BTreeMap<StateId, chrono::NaiveDate> {
        ctx.design
            .states
            .iter()
            .filter(|(_, a)| groups.contains(&a.group))
            .filter_map(|(s, a)| a.lockdown_date.map(|d| (s.clone(), d)))
            .collect()
    };
    let k = ctx.config.params.event_window;
    let treated = event_study(&z, &lockdowns(&[Group::Treated]), k)?;
    ctx.out
        .csv("events/treated.csv", |w| write_event_study_csv(w, &treated))?;
    match event_study(&z, &lockdowns(&[Group::Treated, Group::Control]), k) {
        Ok(pooled) => {
            ctx.out
                .csv("events/pooled.csv", |w| write_event_study_csv(w, &pooled))?;
        }
        Err(e) => log::warn!("pooled event study: {e}"),
    }
    println!(
        "events: {} treated states, {} observations",
        treated.n_states, treated.n_obs
    );
    Ok(Outcome::default())
}

#[derive(Serialize)]
struct CoverageRow {
    t: u32,
    coverage: f64,
}

#[derive(Serialize)]
struct SimulationSummary {
    reps: usize,
    replicates: usize,
    min_coverage: f64,
    max_coverage: f64,
    median_estimated_ratio: f64,
    median_true_ratio: f64,
    ratio_in_band: f64,
}

pub fn cmd_simulate(config: &RunConfig) -> Result<Outcome> {
    config.validate()?;
    let out = OutputDir::new(config.paths.out_dir.clone(), config.hash(), config.params.seed);
    let sim = &config.simulate;
    let example = generate_synthetic(&sim.spec)?;
    out.csv("simulate/panel.csv", |w| example.panel.write_normalized_csv(w))?;
    out.csv("simulate/meta.csv", |w| {
        write_states_meta_csv(w, &example.states_meta())
    })?;

    let seed = rand::Rng::random(&mut substream(config.params.seed, "simulate", 0));
    let report = coverage_experiment(&sim.spec, sim.reps, &config.engine_settings(), seed)?;
    let rows: Vec<CoverageRow> = report
        .days
        .iter()
        .zip(&report.coverage)
        .map(|(&t, &coverage)| CoverageRow { t, coverage })
        .collect();
    out.csv("simulate/coverage.csv", |w| write_rows(w, &rows))?;
    out.csv("simulate/runs.csv", |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["rep", "estimated_ratio", "ratio_lb", "ratio_ub", "true_ratio"])?;
        for r in &report.runs {
            csv.write_record([
                r.rep.to_string(),
                r.estimated_ratio.to_string(),
                r.ratio_lb.to_string(),
                r.ratio_ub.to_string(),
                r.true_ratio.to_string(),
            ])?;
        }
        csv.flush()?;
        Ok(())
    })?;
    let summary = SimulationSummary {
        reps: report.reps,
        replicates: report.replicates,
        min_coverage: report.min_coverage(),
        max_coverage: report.max_coverage(),
        median_estimated_ratio: report.median_estimated_ratio,
        median_true_ratio: report.median_true_ratio,
        ratio_in_band: report.ratio_in_band,
    };
    out.json("simulate/summary.json", &summary)?;
    println!(
        "simulate: {} reps, coverage {:.3}–{:.3}, median true ratio {:.4}, median estimated ratio {:.4}",
        summary.reps,
        summary.min_coverage,
        summary.max_coverage,
        summary.median_true_ratio,
        summary.median_estimated_ratio
    );
    Ok(Outcome::default())
}

/// Coefficient table: one row per unit, one column per donor, then `log_t`.
fn write_coefficients<W: Write>(writer: W, estimates: &[&StateEstimate]) -> Result<()> {
    let donors: BTreeSet<&str> = estimates
        .iter()
        .flat_map(|e| e.fit.column_names.iter().map(String::as_str))
        .filter(|n| *n != TREND_COLUMN)
        .collect();
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["state", "intercept"];
    header.extend(donors.iter().copied());
    header.extend([TREND_COLUMN, "lambda", "mean_actual_over_cf"]);
    w.write_record(&header)?;
    for e in estimates {
        let mut rec = vec![e.state.to_string(), e.fit.intercept.to_string()];
        for d in &donors {
            rec.push(e.fit.coefficient(d).map(|v| v.to_string()).unwrap_or_default());
        }
        let inverse: Vec<f64> = e
            .path
            .actual_level
            .iter()
            .zip(&e.path.level_point)
            .map(|(a, p)| a / p)
            .collect();
        rec.push(e.fit.coefficient(TREND_COLUMN).unwrap_or(0.0).to_string());
        rec.push(e.fit.lambda.to_string());
        rec.push(crate::stats::mean(&inverse).to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct A2Row<'a> {
    state: &'a StateId,
    group: &'a str,
    ratio_point: f64,
    ratio_lb: f64,
    ratio_ub: f64,
}

pub fn cmd_report(ctx: &Context) -> Result<Outcome> {
    let mut outcome = Outcome::default();
    let Some(run) = fit_and_report(ctx, &mut outcome)? else {
        return Ok(outcome);
    };
    let mut all: Vec<&StateEstimate> = run.estimates.iter().collect();
    all.extend(run.placebos.iter().map(|p| &p.estimate));
    ctx.out.csv("tableA1.csv", |w| write_coefficients(w, &all))?;
    let rows: Vec<A2Row> = run
        .report
        .states
        .iter()
        .map(|s| A2Row {
            state: &s.state,
            group: &s.group,
            ratio_point: s.ratio_point,
            ratio_lb: s.ratio_lb,
            ratio_ub: s.ratio_ub,
        })
        .collect();
    ctx.out.csv("tableA2.csv", |w| write_rows(w, &rows))?;
    ctx.out.json("design.json", &ctx.design)?;
    println!("report: tables written to {}", ctx.out.root().display());
    Ok(outcome)
}
