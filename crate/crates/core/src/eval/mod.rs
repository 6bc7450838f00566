//! Metrics, the synthetic benchmark task and the experiment matrix.

mod matrix;
mod metrics;
mod synth;

pub use matrix::{render_columns, render_rows, run_matrix, ExperimentMatrix, MatrixCell, MatrixReport, MatrixRow, TrialOutcome};
pub use metrics::{score, score_all, Metric, Scores};
pub use synth::{synth_task, synth_task_with, SynthParams, SynthTask};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{predictions} predictions for {golds} gold labels")]
    LengthMismatch { predictions: usize, golds: usize },
    #[error("nothing to score")]
    Empty,
    #[error("label {0:?} is not in the label set")]
    UnknownLabel(String),
    #[error("synthetic task: {0}")]
    Synth(String),
    #[error("experiment matrix: {0}")]
    Matrix(String),
}
