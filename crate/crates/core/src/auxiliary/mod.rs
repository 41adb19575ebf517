//! Mobility counterfactuals and the search-volume event study.

mod events;
mod mobility;

pub use events::{
    event_study, parse_trends_csv, write_event_study_csv, EventCoefficient, EventStudyResult, SearchPanel, TrendsRow,
};
pub use mobility::{
    mobility_counterfactual, mobility_summary, outdoor_composite, parse_mobility_csv, window_median, write_boxplot_csv,
    MobilityCategory, MobilityMeasure, MobilityPanel, MobilityRow, MobilitySummary,
};
