//! Annotators: the ground-truth oracle standing in for the human, simulated
//! noisy low-fidelity annotators, a completion-endpoint LLM annotator with
//! retrieval-built prompts, and a live human queue.

mod llm;
mod prompt;
mod queue;
mod simulated;

pub use llm::{parse_label, CompletionClient, HttpCompletionClient, LlmAnnotator, LlmSettings, TransportError};
pub use prompt::{build_prompt, PromptTemplate, TemplateError};
pub use queue::{HumanQueue, HumanQueueAnnotator, QueueItem, QueueStatus, SubmitError, SubmitOutcome};
pub use simulated::{ContextSensitiveAnnotator, FaultInjector, FaultPlan, NoisyAnnotator, NoisyProfile, OracleAnnotator};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::EmbedError;
use crate::model::{Fidelity, Label, LabelSet, Sample};

/// A retrieved in-context example with its text resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextExample {
    pub sample_id: String,
    pub text: String,
    pub label: Label,
    pub similarity: f64,
}

/// Supplies prompt context for a sample from the current human-annotated set.
pub trait ContextRetriever: Sync {
    fn retrieve(&self, sample: &Sample) -> Result<Vec<ContextExample>, EmbedError>;
}

/// Everything an annotator may consult besides the samples themselves.
pub struct AnnotationContext<'a> {
    pub round: u32,
    pub labels: &'a LabelSet,
    pub retriever: Option<&'a dyn ContextRetriever>,
    /// Strategy-assigned uncertainty per sample id (human queue ordering).
    pub uncertainty: &'a BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum AnnotateFailure {
    #[error("sample {0:?} has no gold label")]
    MissingGold(String),
    #[error("no label could be parsed from the response after {attempts} attempts")]
    Unparseable { attempts: u32 },
    #[error("transport failed after {attempts} attempts: {last}")]
    Transport { attempts: u32, last: String },
    #[error("still pending when the wait ended")]
    Pending,
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotatorResult {
    pub sample_id: String,
    pub outcome: Result<Label, AnnotateFailure>,
}

pub trait Annotator: Send + Sync {
    fn name(&self) -> &str;

    fn fidelity(&self) -> Fidelity;

    /// One result per requested sample, in input order.
    fn annotate_batch(&self, samples: &[&Sample], ctx: &AnnotationContext<'_>) -> Vec<AnnotatorResult>;
}

impl<A: Annotator + ?Sized> Annotator for Box<A> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn fidelity(&self) -> Fidelity {
        (**self).fidelity()
    }

    fn annotate_batch(&self, samples: &[&Sample], ctx: &AnnotationContext<'_>) -> Vec<AnnotatorResult> {
        (**self).annotate_batch(samples, ctx)
    }
}
