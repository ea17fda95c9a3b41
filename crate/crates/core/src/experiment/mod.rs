//! Config-driven end-to-end runs: data preparation, federated training with
//! auxiliary heads, unlearning, baselines, evaluation, sweeps and the
//! on-disk run layout.

mod artifacts;
mod config;
mod pipeline;
mod presets;

pub use artifacts::{
    create_run_dir, eval_checkpoint, load_run, unlearn_run, write_run, EvalReport, TrainedRun, UnlearnReport,
};
pub use config::{
    BaselineSettings, DatasetConfig, ExperimentConfig, FederationSettings, ModelConfig, PartitionConfig,
    UnlearningSettings, SCHEMA_VERSION,
};
pub use pipeline::{
    apply_unlearning, evaluate_model, prepare, run_experiment, sweep, train, trend_diagnostics, ExperimentOutcome,
    Scenario, SweepParam, SweepRow, Trained, UnlearnOutcome,
};
pub use presets::{preset, PRESET_NAMES};
