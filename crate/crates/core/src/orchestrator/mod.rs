//! The annotation loop: warm start, then per round sub-sample, plan, human
//! annotation, retrieval refresh, LLM annotation, tuning and bookkeeping,
//! with checkpoints and a run directory.

mod components;
mod config;
mod engine;
mod persist;
mod report;

pub use components::{resolve_labels, Components};
pub use config::{
    parse_pairs, ConfigError, EncoderBinding, HighBinding, LearnerBinding, LlmConfig, LowBinding, RunConfig,
};
pub use engine::{load_inputs, DoneReason, Engine, Phase, RunState, RunStatus, StatusBoard, StatusSnapshot};
pub use persist::{pool_digest, Checkpoint, RunDir, CHECKPOINT_VERSION};
pub use report::{render_text, RoundReport, RunReport};

use serde::Serialize;
use thiserror::Error;

use crate::budget::{BudgetConfig, BudgetError};
use crate::embed::EmbedError;
use crate::learner::LearnerError;
use crate::model::{CommitError, PoolError};
use crate::query::QueryError;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Budget(#[from] BudgetError),
    #[error("{path}: {source}")]
    Pool { path: String, source: PoolError },
    #[error(transparent)]
    Data(#[from] PoolError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Commit(#[from] CommitError),
    #[error("warm start failed: {0}")]
    Warmstart(String),
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
    #[error("checkpoint version {found} is not supported (this build reads version {expected})")]
    CheckpointVersion { found: u32, expected: u32 },
    #[error("checkpoint integrity: {0}")]
    Integrity(String),
    #[error("run is not in a state that allows this: {0}")]
    State(String),
    /// A stop was requested while a round was in progress.
    #[error("round {0} interrupted by a stop request")]
    Interrupted(u32),
}

impl RunError {
    pub(crate) fn io(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        RunError::Io { path: path.display().to_string(), reason: e.to_string() }
    }
}

/// One row of the schedule preview.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PlannedRound {
    pub round: u32,
    pub human: u64,
    pub llm: u64,
    /// Cluster count for the exploration-exploitation strategy.
    pub k: u64,
    pub cumulative: u64,
}

/// Per-round allocations assuming every annotation succeeds.
pub fn preview_schedule(budget: &BudgetConfig) -> Vec<PlannedRound> {
    let h = budget.human_schedule();
    let g = budget.llm_schedule();
    let cum = crate::budget::cumulative(&h, &g);
    (0..budget.rounds as usize)
        .map(|i| PlannedRound { round: i as u32 + 1, human: h[i], llm: g[i], k: h[i] + g[i], cumulative: cum[i] })
        .collect()
}
