use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = ArcoError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum ArcoError {
    #[error("parse error in column `{column}`: {message}")]
    Parse { column: String, message: String },

    #[error("ingestion error: states absent from input: {}", .0.join(", "))]
    MissingStates(Vec<String>),

    #[error("state {0} has no confirmed case; epidemiological day 1 is undefined")]
    Alignment(String),

    #[error("log of zero count for state {state} at epi-day {t}")]
    Domain { state: String, t: u32 },

    #[error("degenerate regressor `{column}`: penalty weight is zero")]
    DegenerateRegressor { column: String },

    #[error("coordinate descent did not converge after {sweeps} sweeps (last objective {objective:.6e})")]
    NonConvergence { sweeps: usize, objective: f64 },

    #[error("invalid estimation window: {0}")]
    Window(String),

    #[error("design violation for {state}: {message}")]
    DesignViolation { state: String, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing observation for {state} at epi-day {t}")]
    MissingObservation { state: String, t: u32 },

    #[error("missing mobility category `{category}` for {state} on {date}")]
    MissingCategory {
        state: String,
        date: chrono::NaiveDate,
        category: String,
    },

    #[error("insufficient data for {state}: {message}")]
    DataSufficiency { state: String, message: String },

    #[error("too many bootstrap replicates failed: {dropped} of {total}")]
    Bootstrap { dropped: usize, total: usize },

    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}
