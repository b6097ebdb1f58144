//! End-to-end studies: dataset generation, batch estimation, noise sweeps,
//! prediction runs, theory runs and reports. All persistence lives here.

pub mod config;
pub mod io;
pub mod pipeline;

pub use config::RunConfig;
pub use pipeline::{
    batch_estimate, emit_reports, generate_datasets, load_index, prediction_study, run_theory, sweep, DatasetRecord,
    EstimateRow, PredictionReport, ReportSummary,
};
