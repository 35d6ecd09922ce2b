//! Experiment configuration, training loop, sweeps and result files.

pub mod config;
pub mod sweep;
pub mod train;

pub use config::{load_grid, ClassReduction, ExperimentConfig};
pub use sweep::{emit_results, read_results_json, results_csv, sweep, OutputFormat, SweepRow, CSV_HEADER};
pub use train::{train, train_on, EpochRecord, RunResult};
