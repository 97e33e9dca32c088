//! Evaluation, configuration, metrics and experiment drivers.

pub mod config;
pub mod evaluate;
pub mod experiment;
pub mod metrics;

pub use config::{ConfigFile, ExperimentConfig, Method};
pub use evaluate::{evaluate, select_best_checkpoint, Criterion, TaskScore};
pub use experiment::{run_sequence, scratch_experiment, scratch_relearn, SequenceOutcome};
pub use metrics::MetricsRow;
