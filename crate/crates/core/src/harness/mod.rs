//! Experiment configuration, execution and persistence.

pub mod config;
pub mod experiments;
pub mod output;

pub use config::{load_config, write_config, ExperimentConfig, ExperimentKind, LimitSelection, SEED_ENV};
pub use experiments::{collect_fluctuations, run_experiment, ExperimentResult, Outcome};
pub use output::{load_result, read_sample_csv, write_fluctuation_csv, write_reference_csv, write_result};
