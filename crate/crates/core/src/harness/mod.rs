//! Experiment configuration, orchestration and CSV output.

pub mod config;
pub mod experiments;
pub mod metrics;

pub use config::{DatasetSource, DelayMode, ExperimentConfig, Mode};
pub use experiments::{
    bounds_report, run_compare, run_sweep, simulate, solve, summary_csv, sweep_taus, BoundsReport,
    CompareReport, RunSummary, Setup, SimulationReport, SolveReport, SweepPoint, SweepReport,
};
pub use metrics::{emit_metrics, format_sig, metrics_csv, records_from_trajectory, MetricsRecord};
