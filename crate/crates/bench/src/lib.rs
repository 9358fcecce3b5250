//! Experiment harness for the cake loader: expands a config into a run
//! matrix, executes it in sim or live mode and writes versioned CSV.

pub mod commands;
pub mod experiment;
pub mod results;

pub use commands::{cmd_bench, cmd_oracle, cmd_overhead, cmd_populate, BenchOptions, OracleReport, OverheadStats, PopulateSummary};
pub use experiment::{Cell, ExperimentConfig};
pub use results::{read_results, write_results, Measurement, ResultRow, RESULTS_VERSION_LINE, RESULT_COLUMNS};

/// Upper bound on the p99 per-chunk scheduling decision, in nanoseconds.
pub const OVERHEAD_P99_LIMIT_NS: u64 = 100_000;
