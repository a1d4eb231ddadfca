//! Multi-seed experiment runner and log analysis.

mod analysis;
mod config;
mod experiment;
mod grid;

pub use analysis::{
    aggregate, analyze, boundary_counts, curves_svg, histogram_svg, in_boundary_band, lp_trace,
    lp_trace_csv, mean_and_sem, sampling_histogram, write_aggregate_csv, AggregateRow,
    AnalyzeOptions, BoundaryTable, Histogram, LpTraceRow,
};
pub use config::{default_resolution, parse_override, ExperimentConfig};
pub use experiment::{
    load_run_logs, read_run_log, run_experiment, run_name, ExperimentReport, RunLog,
    AGGREGATE_FILE, RUNS_DIR,
};
pub use grid::{eval_rmse, world_digest, TestGrid};
