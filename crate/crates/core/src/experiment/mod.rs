//! Configuration-driven runs and their artifacts.

pub mod config;
pub mod run;
pub mod simulate;

pub use config::{ExperimentConfig, InitialState, RunConfig};
pub use run::{
    extract_open_loop_signal, prepare, relaxed_settings, replay, run_closed_loop,
    run_dispersion_probe, run_sigma_scan, sigma_grid, write_artifacts, Prepared, RunArtifacts,
    RunSummary,
};
pub use simulate::{run_steps, step_count, ControlSource, LoopOutcome};
