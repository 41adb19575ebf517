//! Command-line runs: a TOML [`RunConfig`] with flag overrides, one
//! subcommand per analysis, and header-stamped CSV/JSON outputs.
//!
//! Exit codes: 0 when every requested state completed, 1 when some state
//! failed, 2 for usage or configuration errors, 3 when a command could not run.

mod commands;
mod config;
mod output;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::{
    cmd_deaths, cmd_events, cmd_fit, cmd_mobility, cmd_placebo, cmd_report, cmd_simulate, load_panel, Context, Outcome,
};
pub use config::{Modes, Params, Paths, RunConfig, Selection, Simulation};
pub use output::OutputDir;

use crate::error::ArcoError;
use crate::validation::PlaceboWindow;

pub const EXIT_OK: i32 = 0;
pub const EXIT_STATE_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_COMMAND: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "arco",
    version,
    about = "Artificial counterfactual estimates of lockdown effects"
)]
pub struct Cli {
    /// TOML run configuration.
    #[arg(short, long, global = true)]
    pub config: Option<PathBuf>,

    #[arg(long, global = true, env = "ARCO_OUT_DIR")]
    pub out_dir: Option<PathBuf>,

    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Bootstrap replicates.
    #[arg(long = "bootstrap-b", global = true)]
    pub bootstrap_b: Option<usize>,

    #[arg(long, global = true)]
    pub block_len: Option<usize>,

    /// Re-select λ by BIC in every bootstrap replicate.
    #[arg(long, global = true)]
    pub refit_lambda: bool,

    #[arg(long, global = true, value_parser = parse_window)]
    pub placebo_window: Option<PlaceboWindow>,

    #[arg(long, global = true)]
    pub cases_csv: Option<PathBuf>,

    #[arg(long, global = true)]
    pub deaths_csv: Option<PathBuf>,

    #[arg(long, global = true)]
    pub panel_csv: Option<PathBuf>,

    #[arg(long, global = true)]
    pub mobility_csv: Option<PathBuf>,

    #[arg(long, global = true)]
    pub trends_csv: Option<PathBuf>,

    #[arg(long, global = true)]
    pub meta_csv: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Treated-state fits, counterfactual paths, ratios and group aggregates.
    Fit,
    /// Placebo runs on every control state.
    Placebo,
    /// Cumulative-deaths counterfactuals.
    Deaths,
    /// Mobility summaries and counterfactuals.
    Mobility,
    /// Search-volume event study around lockdown dates.
    Events,
    /// Synthetic panel and bootstrap coverage experiment.
    Simulate,
    /// Fit plus coefficient and ratio tables.
    Report,
}

fn parse_window(s: &str) -> Result<PlaceboWindow, String> {
    match s {
        "at-intervention" => Ok(PlaceboWindow::AtIntervention),
        "plus-lag" => Ok(PlaceboWindow::PlusLag),
        other => Err(format!("unknown placebo window `{other}` (at-intervention | plus-lag)")),
    }
}

impl Cli {
    /// Config file values with this invocation's flags applied on top.
    pub fn resolve(&self) -> Result<RunConfig, ArcoError> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.out_dir {
            c.paths.out_dir = v.clone();
        }
        if c.paths.out_dir.as_os_str().is_empty() {
            c.paths.out_dir = PathBuf::from("arco-out");
        }
        for (flag, slot) in [
            (&self.cases_csv, &mut c.paths.cases_csv),
            (&self.deaths_csv, &mut c.paths.deaths_csv),
            (&self.panel_csv, &mut c.paths.panel_csv),
            (&self.mobility_csv, &mut c.paths.mobility_csv),
            (&self.trends_csv, &mut c.paths.trends_csv),
            (&self.meta_csv, &mut c.paths.meta_csv),
        ] {
            if flag.is_some() {
                slot.clone_from(flag);
            }
        }
        if let Some(v) = self.seed {
            c.params.seed = v;
        }
        if let Some(v) = self.bootstrap_b {
            c.params.bootstrap_b = v;
        }
        if self.block_len.is_some() {
            c.params.block_len = self.block_len;
        }
        if self.refit_lambda {
            c.modes.refit_lambda_in_bootstrap = true;
        }
        if let Some(v) = self.placebo_window {
            c.modes.placebo_window = v;
        }
        Ok(c)
    }
}

fn is_config_error(e: &ArcoError) -> bool {
    matches!(
        e,
        ArcoError::Config(_) | ArcoError::Toml(_) | ArcoError::FileNotFound(_)
    )
}

/// Runs one parsed invocation and returns the process exit code.
pub fn run(cli: &Cli) -> i32 {
    let config = match cli.resolve().and_then(|c| c.validate().map(|_| c)) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let result = match cli.command {
        Command::Simulate => cmd_simulate(&config),
        cmd => Context::load(config).and_then(|ctx| match cmd {
            Command::Fit => cmd_fit(&ctx),
            Command::Placebo => cmd_placebo(&ctx),
            Command::Deaths => cmd_deaths(&ctx),
            Command::Mobility => cmd_mobility(&ctx),
            Command::Events => cmd_events(&ctx),
            Command::Report => cmd_report(&ctx),
            Command::Simulate => unreachable!("handled above"),
        }),
    };
    match result {
        Ok(outcome) if outcome.failures.is_empty() => EXIT_OK,
        Ok(outcome) => {
            for (state, e) in &outcome.failures {
                eprintln!("failed: {state}: {e}");
            }
            EXIT_STATE_FAILED
        }
        Err(e) => {
            eprintln!("error: {e}");
            if is_config_error(&e) {
                EXIT_CONFIG
            } else {
                EXIT_COMMAND
            }
        }
    }
}

/// Parses `std::env::args`, initialises logging and runs.
pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    run(&Cli::parse())
}
