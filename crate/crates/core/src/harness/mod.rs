//! Metrics, experiment orchestration and reporting.

pub mod config;
pub mod experiment;
pub mod metrics;
pub mod report;

pub use config::{cr_label, AugmentationStudy, ExperimentConfig, Method, NewScenario, SearchConfig, SeedPlan};
pub use experiment::{
    augment_new, evaluate, generate_data, run_experiment, run_experiment_with, search_shifts, train_anchors,
    train_plugins, write_results, ResultRow, RunLayout, ShiftRecord, RESULT_COLUMNS,
};
pub use metrics::{nmse, to_db};
pub use report::{parse_results, read_results, report, ReportOutput};
