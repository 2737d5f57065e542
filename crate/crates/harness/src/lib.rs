//! Experiment harness around the core toolkit: population sampling, sweep
//! execution across behavior grids and connection factors, CSV metrics, and
//! aggregation.

pub mod config;
pub mod report;
pub mod run;
pub mod sample;

pub use config::{Arm, BehaviorName, ExperimentConfig, MaxEntSection, RecovererName};
pub use report::{build_report, report_command, Report, ReportRow};
pub use run::{
    generate_systems, plateau_iteration, run_experiment, CellKey, CellResult, CellTrace,
    RunSummary,
};
pub use sample::sample_system;
