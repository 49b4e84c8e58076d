//! Declarative experiments: configuration, the shared train/attack/evaluate
//! steps, and runs that write metrics, round logs and plot series.

mod config;
mod run;
mod study;

pub use config::{DataSource, ExperimentConfig, FederationParams, Protocol, Setting, SweepConfig, OUTPUT_ENV};
pub use run::{emit_plot_data, plot_tables, run_experiment, run_sweep, PlotTable, RunSummary, SweepAxis, SweepPoint};
pub use study::{InferenceOutcome, Study, Trained};
