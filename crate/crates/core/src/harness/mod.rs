//! Monte Carlo experiments on the benchmark plant: noise grid, cost and
//! bias/variance studies, and CSV emission.

mod config;
mod experiment;
mod grid;
mod metrics;
mod output;

pub use config::{
    ExperimentConfig, IdentificationConfig, Method, NoiseSpec, PlantConfig, ReferenceSpec,
    SolverConfig, TrainingConfig,
};
pub use experiment::{
    errors_of, fit_method, run_bias_experiment, run_cost_experiment, run_experiment, run_method,
    test_reference, training_data, McResult, RunRecord,
};
pub use grid::{grid_point, noise_grid, noise_label};
pub use metrics::{bias_variance, clean_cost, control_cost, mean, median, stationary_error};
pub use output::{
    emit_results, read_runs_csv, read_summary_csv, summarize, write_runs_csv, write_summary_csv,
    EmittedFiles, SummaryRow, RUN_COLUMNS, SUMMARY_COLUMNS,
};
