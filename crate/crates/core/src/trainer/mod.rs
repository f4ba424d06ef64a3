//! Experiment configuration and the CSS training driver.

pub mod config;
pub mod experiment;
pub mod step;

pub use config::{
    AnalysisSection, DataSection, ExperimentConfig, ExperimentSection, ModelSection, ProbeSection,
    Split,
};
pub use experiment::{
    evaluate_observed, load_data, load_run_artifacts, probe_path, run_experiment,
    run_experiment_on, save_probe, snapshot_path, ExperimentLog, RunOutput, StepRecord,
};
pub use step::{
    expand_classifier, freeze_plan, preallocate_future, run_step, FreezePlan, StepOptions,
    StepOutcome,
};
