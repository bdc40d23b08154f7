//! Config-driven experiments: baseline against STMN on shared data and
//! initialisation, neighbourhood-size sweeps, and reports over the artifacts.
//!
//! Layout of an output directory:
//!
//! ```text
//! config.toml              verbatim copy of the input config
//! effective_config.toml    config after command-line overrides
//! summary.json             ExperimentSummary (run_experiment only)
//! h_sweep.csv, .json       SweepTable (sweep_h only)
//! seed-N/<run>/history.jsonl   one IterationRecord per line
//! seed-N/<run>/features.csv    id,clip_index,label,f0,… for the test split
//! seed-N/<run>/pca.csv         id,clip_index,label,pc0,pc1
//! seed-N/<run>/stats.json      RunStats
//! seed-N/<run>/checkpoint.json TrainerCheckpoint after the last iteration
//! ```

mod config;
mod report;
mod run;

pub use config::{DataConfig, ExperimentConfig, LayerConfig, NetConfig};
pub use report::{render, report, RUN_ARTIFACTS};
pub use run::{
    execute_run, load_sequences, prepare_data, required_passes, run_dir, run_experiment, sweep_h,
    CheckOutcome, Experiment, ExperimentSummary, PeakValidation, RunSpec, RunStats,
    SeedComparison, Splits, SweepRow, SweepTable,
};
