//! Monte Carlo experiments: configuration, replication fan-out and result tables.

mod config;
mod experiment;
mod table;

pub use config::{
    Arm, Dataset, ExperimentConfig, Grid, ModelSpec, DEFAULT_BOOTSTRAP_DRAWS, DEFAULT_DRAWS,
    DEFAULT_REPLICATIONS, PAPER_REPLICATIONS,
};
pub use experiment::{
    check_failures, row_keys, run_experiment, run_replication, run_table, MAX_FAILURE_RATE,
};
pub use table::{
    emit, prepare_output, write_atomic, ArmOutcome, ResultRow, ResultTable, RowKey, CONFIG_FILE,
    RESULTS_FILE, TABLE_FILE,
};
