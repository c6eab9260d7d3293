//! Config-driven sweeps over objectives, privacy levels, τ values and seeds,
//! with persisted per-run reports and table/curve emission.
//!
//! An output directory holds:
//!
//! * `config.json`: the resolved config the sweep ran with;
//! * `runs/<objective>__<privacy label>[__tau<τ>]__seed<index>.json`: one [`RunReport`] per run;
//! * `summary.json`: the aggregated [`SweepSummary`];
//! * `timings.json`: wall-clock seconds per run, kept apart so that the
//!   other files are byte-identical across repeated executions.

mod config;
mod report;
mod sweep;

use thiserror::Error;

pub use config::{DataSource, ExperimentConfig, ModelConfig, PrivacyLevel, TrainingConfig};
pub use report::{
    emit_disparity_curves, emit_table, render_curves, CurveFormat, CurvePoint, CurveSeries,
    DisparityCurves, TableFormat,
};
pub use sweep::{
    aggregate, execute_sweep, load_reports, load_summary, prepare_data, reaggregate, run_sweep,
    write_artifacts, CellSummary, MeanStd, PreparedData, RunMetrics, RunOutcome, RunReport,
    RunTiming, SweepOutput, SweepSummary,
};

use crate::data::DataError;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("{source_name}: {message}")]
    Parse { source_name: String, message: String },
    #[error("invalid config field `{field}`: {message}")]
    Invalid { field: String, message: String },
    #[error("cannot access {path}: {message}")]
    Io { path: String, message: String },
    #[error("malformed artifact {path}: {message}")]
    Artifact { path: String, message: String },
    #[error("summary has no cells")]
    EmptySummary,
    #[error("disparity curves need a sweep over two or more τ values, found {0}")]
    TooFewTaus(usize),
    #[error(transparent)]
    Data(#[from] DataError),
}

impl ExperimentError {
    /// Whether the error stems from the user's config rather than from running it.
    pub fn is_config(&self) -> bool {
        matches!(self, ExperimentError::Parse { .. } | ExperimentError::Invalid { .. })
    }

    pub(crate) fn io(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        ExperimentError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }
}
