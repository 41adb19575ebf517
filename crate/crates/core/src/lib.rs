//! Artificial counterfactual (ArCo) estimation of intervention effects on
//! panel time series, with weighted-LASSO peer selection.
//!
//! The crate is organised bottom-up:
//!
//! * [`panel`] ingests cumulative-count data, aligns it to epidemiological
//!   time, and assigns states to treated / control / excluded groups.
//! * [`wlasso`] solves the weighted LASSO by coordinate descent and picks the
//!   penalty by BIC.
//! * [`engine`] builds per-state counterfactual paths, bootstrap bands,
//!   level counterfactuals (deaths), gaps, ratios and growth baselines.
//! * [`validation`] runs placebo studies and synthetic coverage experiments.
//! * [`auxiliary`] covers mobility counterfactuals and search event studies.
//! * [`cli`] wires everything into reproducible runs.

pub mod auxiliary;
pub mod cli;
pub mod engine;
pub mod error;
pub mod panel;
pub mod rng;
pub mod stats;
pub mod validation;
pub mod wlasso;

pub use error::{ArcoError, Result};
