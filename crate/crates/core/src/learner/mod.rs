//! Trainable target model behind an adapter interface.
//!
//! [`ReferenceLearner`] is multinomial logistic regression over embedding
//! features, warm-started from the previous round's parameters.
//! [`ExternalLearner`] drives an out-of-process trainer through files.

mod external;
mod reference;

pub use external::ExternalLearner;
pub use reference::{Hyper, ReferenceLearner};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Label, LabelSet};
use crate::query::UncertaintyBasis;

pub const SNAPSHOT_VERSION: u32 = 1;

/// What the learner sees of a sample: never the gold label.
#[derive(Debug, Clone, Copy)]
pub struct LearnerInput<'a> {
    pub id: &'a str,
    pub text: &'a str,
    pub features: &'a [f64],
}

#[derive(Debug, Clone, Copy)]
pub struct TrainExample<'a> {
    pub input: LearnerInput<'a>,
    pub label: &'a Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// Distribution over the label set, in label-set order.
    pub probs: Vec<f64>,
    /// Per-token log-probabilities of the generated answer, when available.
    pub token_logprobs: Option<Vec<f64>>,
}

impl Prediction {
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.probs.iter().enumerate() {
            if *p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LearnerKind {
    Classifier,
    Generative,
}

impl LearnerKind {
    pub fn uncertainty_basis(self) -> UncertaintyBasis {
        match self {
            LearnerKind::Classifier => UncertaintyBasis::LeastConfidence,
            LearnerKind::Generative => UncertaintyBasis::MeanTokenLogProb,
        }
    }
}

/// Serializable model state after a round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerSnapshot {
    pub version: u32,
    pub id: String,
    pub learner: String,
    pub round: u32,
    pub dim: usize,
    pub n_labels: usize,
    pub hyper: Hyper,
    pub params: Vec<f64>,
    /// State directory for out-of-process learners.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external_state: Option<String>,
}

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error("sample {id:?} has {got} features, learner expects {expected}")]
    Unembedded { id: String, expected: usize, got: usize },
    #[error("label {0:?} is not in the learner's label set")]
    UnknownLabel(String),
    #[error("warm-start batch is empty")]
    EmptyWarmstart,
    #[error("both tuning batches are empty")]
    EmptyBatches,
    #[error("snapshot version {found} not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("snapshot incompatible: {0}")]
    Incompatible(String),
    #[error("external learner: {0}")]
    External(String),
}

pub trait Learner: Send {
    fn name(&self) -> &str;

    fn kind(&self) -> LearnerKind;

    fn labels(&self) -> &LabelSet;

    /// Tune on the warm-start set (mean loss over the batch).
    fn init_tune(&mut self, batch: &[TrainExample<'_>]) -> Result<LearnerSnapshot, LearnerError>;

    /// Tune on one round's annotations: mean loss over the human batch plus
    /// mean loss over the LLM batch, each normalised by its own size.
    fn round_tune(
        &mut self,
        round: u32,
        high: &[TrainExample<'_>],
        low: &[TrainExample<'_>],
    ) -> Result<LearnerSnapshot, LearnerError>;

    fn predict(&self, input: &LearnerInput<'_>) -> Result<Prediction, LearnerError>;

    fn predict_batch(&self, inputs: &[LearnerInput<'_>]) -> Result<Vec<Prediction>, LearnerError> {
        inputs.iter().map(|i| self.predict(i)).collect()
    }

    fn snapshot(&self) -> LearnerSnapshot;

    fn restore(&mut self, snapshot: &LearnerSnapshot) -> Result<(), LearnerError>;
}

/// Deterministic, content-derived snapshot id.
pub(crate) fn snapshot_id(learner: &str, round: u32, params: &[f64], extra: &str) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for p in params {
        h.update(p.to_bits().to_le_bytes());
    }
    h.update(extra.as_bytes());
    let d = h.finalize();
    let hex: String = d[..6].iter().map(|b| format!("{b:02x}")).collect();
    format!("{learner}-r{round}-{hex}")
}
