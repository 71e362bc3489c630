//! Experiment orchestration: configuration, seeded Monte Carlo execution,
//! BER metrics and result emission.

pub mod config;
pub mod metrics;
pub mod output;
pub mod runner;

pub use config::{Algorithm, BranchSelector, ChannelMode, ExperimentConfig, StudyKind};
pub use metrics::{binomial_se, compute_ber};
pub use output::{emit_results, render_csv, render_plot_script};
pub use runner::{run_experiment, run_experiment_serial, ExperimentResults, PointResult};
