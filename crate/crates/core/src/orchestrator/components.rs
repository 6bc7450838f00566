use std::sync::Arc;
use std::time::Duration;

use super::config::{EncoderBinding, HighBinding, LearnerBinding, LowBinding, RunConfig};
use super::RunError;
use crate::annotate::{
    Annotator, ContextSensitiveAnnotator, FaultInjector, FaultPlan, HttpCompletionClient, HumanQueue,
    HumanQueueAnnotator, LlmAnnotator, LlmSettings, NoisyAnnotator, NoisyProfile, OracleAnnotator, PromptTemplate,
};
use crate::embed::{Encoder, ExternalEncoder, HashingEncoder, Transport};
use crate::learner::{ExternalLearner, Hyper, Learner, ReferenceLearner};
use crate::model::{DataPool, LabelSet};
use crate::seed;

/// Everything the loop calls out to.
pub struct Components {
    pub high: Box<dyn Annotator>,
    pub low: Box<dyn Annotator>,
    pub learner: Box<dyn Learner>,
    pub encoder: Box<dyn Encoder>,
}

/// Configured labels, or the sorted gold labels seen in the pool.
pub fn resolve_labels(config: &RunConfig, pool: &DataPool) -> Result<LabelSet, RunError> {
    let labels = match &config.labels {
        Some(l) => LabelSet::new(l.iter().map(String::as_str))?,
        None => pool.observed_labels().ok_or_else(|| {
            RunError::Config(super::ConfigError {
                key: "labels".into(),
                reason: "not set and the pool carries no labels to infer them from".into(),
            })
        })?,
    };
    pool.validate_labels(&labels)?;
    Ok(labels)
}

impl Components {
    /// Builds the bindings named in the config. `queue` backs the human
    /// queue annotator; a fresh one is made if absent.
    pub fn from_config(config: &RunConfig, labels: &LabelSet, queue: Option<Arc<HumanQueue>>) -> Result<Self, RunError> {
        let s = config.seed;
        let encoder: Box<dyn Encoder> = match config.encoder {
            EncoderBinding::Hashing => Box::new(HashingEncoder::new(config.encoder_dim)),
            EncoderBinding::Process | EncoderBinding::Http => {
                let transport = match config.encoder {
                    EncoderBinding::Process => Transport::Process(config.encoder_command.clone()),
                    _ => Transport::Http {
                        url: config.encoder_url.clone().unwrap_or_default(),
                        timeout_ms: config.llm.timeout_ms,
                    },
                };
                let name = config.encoder_name.clone().unwrap_or_else(|| "external".into());
                Box::new(ExternalEncoder::new(name, config.encoder_dim, transport, config.encoder_cache.clone())?)
            }
        };
        let learner: Box<dyn Learner> = match config.learner {
            LearnerBinding::Reference => Box::new(ReferenceLearner::new(
                labels.clone(),
                encoder.dim(),
                Hyper {
                    learning_rate: config.learner_learning_rate,
                    epochs: config.learner_epochs,
                    l2: config.learner_l2,
                    seed: seed::derive(s, 0, "learner"),
                },
            )),
            LearnerBinding::External => {
                let work = match &config.run_dir {
                    Some(d) => d.join("learner"),
                    None => std::env::temp_dir().join(format!("mfl-learner-{s}-{}", std::process::id())),
                };
                Box::new(ExternalLearner::new("external", labels.clone(), config.learner_command.clone(), work)?)
            }
        };
        let high: Box<dyn Annotator> = match config.annotator_high {
            HighBinding::Oracle => Box::new(OracleAnnotator::new()),
            HighBinding::Queue => Box::new(HumanQueueAnnotator::new(
                queue.unwrap_or_else(|| Arc::new(HumanQueue::new())),
                config.human_timeout_ms.map(Duration::from_millis),
            )),
        };
        let low: Box<dyn Annotator> = match config.annotator_low {
            LowBinding::Oracle => Box::new(OracleAnnotator::new()),
            LowBinding::Noisy => Box::new(
                NoisyAnnotator::new(NoisyProfile { accuracy: config.noisy_accuracy, seed: seed::derive(s, 0, "noisy") })
                    .map_err(|reason| super::ConfigError { key: "noisy.accuracy".into(), reason })?,
            ),
            LowBinding::Context => Box::new(ContextSensitiveAnnotator::new(
                config.context_base,
                config.context_gain,
                config.context_ceiling,
                seed::derive(s, 0, "context"),
            )),
            LowBinding::Llm => {
                let template = match &config.llm.template {
                    Some(p) => PromptTemplate::load(p).map_err(|e| super::ConfigError {
                        key: "llm.template".into(),
                        reason: e.to_string(),
                    })?,
                    None => PromptTemplate::default_for(labels),
                };
                template.validate(labels).map_err(|e| super::ConfigError {
                    key: "llm.template".into(),
                    reason: e.to_string(),
                })?;
                let api_key = config.llm.api_key_env.as_ref().and_then(|v| std::env::var(v).ok());
                let client = HttpCompletionClient::new(&config.llm.base_url, &config.llm.model, config.llm.timeout_ms, api_key);
                Box::new(LlmAnnotator::new(
                    format!("llm:{}", config.llm.model),
                    Box::new(client),
                    template,
                    LlmSettings {
                        retries: config.llm.retries,
                        max_inflight: config.llm.max_inflight,
                        backoff_ms: config.llm.backoff_ms,
                    },
                ))
            }
        };
        let low: Box<dyn Annotator> = if config.low_failure_rate > 0.0 {
            Box::new(FaultInjector::new(
                low,
                FaultPlan::Rate { rate: config.low_failure_rate, seed: seed::derive(s, 0, "faults") },
            ))
        } else {
            low
        };
        Ok(Components { high, low, learner, encoder })
    }
}
