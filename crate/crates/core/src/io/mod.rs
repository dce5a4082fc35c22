//! Configuration, datasets, run artifacts and run comparison.

pub mod compare;
pub mod config;
pub mod dataset;
pub mod run;

pub use compare::{compare_runs, compare_summaries, render_table, ComparisonRow};
pub use config::{BoundConfig, ExperimentConfig, Scenario, StreamPattern, StreamSpec};
pub use dataset::{load_dataset, read_dataset, write_dataset, Dataset};
pub use run::{execute, read_summary, run_experiment, synthetic_stream, write_toy, RunOptions, RunSummary};
