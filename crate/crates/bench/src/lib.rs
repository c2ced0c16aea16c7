//! Benchmark harness for the qlab engines.
//!
//! A [`BenchConfig`] describes one cell: protocol, roster size, clients,
//! network profile, CPU cost model, faults and horizon. [`run_benchmark`]
//! simulates it and condenses the metrics into a [`RunReport`]; [`sweep`]
//! runs many cells in parallel. [`checks`] holds the property suites behind
//! `qlab check`.

pub mod checks;
mod config;
mod report;
mod runner;

pub use config::{BenchConfig, FaultKind, FaultSpec, LatencyProfile, SnowballParams};
pub use report::{write_csv, CsvRow, NodeRow, RunReport, CSV_HEADER};
pub use runner::{
    client_policy, execute, run_benchmark, sim_config, sweep, Outcome, SweepOutcome, SweepSpec,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{0}: {1}")]
    Io(String, std::io::Error),
    #[error("simulation failed: {0}")]
    Sim(#[from] qlab_simnet::SimError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}
