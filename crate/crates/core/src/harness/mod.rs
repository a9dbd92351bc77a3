//! Experiment orchestration: JSON configs, the replicate loop with
//! rejection-rate aggregation, and exporters for reports, witness grids
//! and closed-form power tables.
//!
//! Replicates run in parallel; each one derives its seed from the master
//! seed and its index, so a report is reproducible as a whole and any
//! replicate can be rerun on its own.

pub mod config;
pub mod experiment;
pub mod export;

pub use config::{DataSource, ExperimentConfig, Method, Mode, PowerCurveSpec, WitnessSpec};
pub use experiment::{
    bootstrap_observational, replicate_seed, run_experiment, run_methods, ExperimentReport, Failure, MethodRecord,
    ReplicateRecord, SweepPoint,
};
pub use export::{
    execute, export_power_curves, export_witness, power_curves, run_witness, write_report, write_witness,
    PowerCurveRow, RunSummary, WitnessExport, WitnessMetadata,
};
