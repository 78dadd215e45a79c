//! Experiment harness around the `esam` library: configuration, training
//! runs, throughput and timing measurements, landscapes and diagnostics.

pub mod config;
pub mod diagnose;
pub mod landscape;
pub mod stats;
pub mod throughput;
pub mod timing;
pub mod train;

pub use config::{prepare_data, DatasetSpec, ExperimentConfig, PreparedData, Strategy};
pub use diagnose::{run_diagnose, DiagnoseOptions, DiagnoseReport};
pub use landscape::{landscape_for, run_landscape};
pub use throughput::{run_throughput, ThroughputReport};
pub use timing::{run_timing_experiment, TimingOptions};
pub use train::{run_train, RunSummary, TrainRun};
