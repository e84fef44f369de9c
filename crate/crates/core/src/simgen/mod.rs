//! Synthetic corpora with calibrated topic-to-persona connection strength,
//! and the harness that measures obfuscation cost on them.

mod experiment;
mod generator;
pub mod presets;

pub use experiment::{
    experiment_profile, run_k_sweep, run_obfuscation_experiment, select_originals, ExperimentConfig,
    ExperimentResult, ExperimentRow, ExperimentSummary, KSweep, RowOutcome, CSV_HEADER,
};
pub use generator::{
    generate, CategorySpec, GeneratedCorpus, GeneratedTopic, GeneratorSpec, SupplyPlan, TargetKind,
    CALIBRATION_TOLERANCE,
};
