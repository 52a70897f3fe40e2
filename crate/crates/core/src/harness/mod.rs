//! Experiment orchestration: config files, repeated runs, sweeps and the
//! server-time benchmark.

pub mod benchmark;
pub mod config;
pub mod experiment;
pub mod sweep;

pub use benchmark::{run_benchmark, BenchCell, BenchGrid, BenchmarkReport, CellReport};
pub use config::{load_config, ExperimentConfig, Precision, SEED_ENV};
pub use experiment::{read_records, run_experiment, simulate, ExperimentSummary, RecordLine, Stat};
pub use sweep::{sweep, SweepAxis, SweepRow};
