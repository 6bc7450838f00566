use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use super::{build_prompt, AnnotateFailure, AnnotationContext, Annotator, AnnotatorResult, PromptTemplate};
use crate::embed::EmbedError;
use crate::model::{Fidelity, Label, Sample};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("{0}")]
pub struct TransportError(pub String);

/// A chat/completion endpoint. Implementations must be deterministic for a
/// fixed prompt when possible (temperature 0).
pub trait CompletionClient: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, TransportError>;
}

/// Client for the common chat-completion wire shape:
/// `POST {base_url}/chat/completions` with `{model, messages, temperature}`.
pub struct HttpCompletionClient {
    base_url: String,
    model: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpCompletionClient {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>, timeout_ms: u64, api_key: Option<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(timeout_ms)))
            .build()
            .into();
        HttpCompletionClient {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            model: model.into(),
            api_key,
            agent,
        }
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: String,
}

impl CompletionClient for HttpCompletionClient {
    fn complete(&self, prompt: &str) -> Result<String, TransportError> {
        let body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        });
        let mut req = self.agent.post(format!("{}/chat/completions", self.base_url));
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req.send_json(&body).map_err(|e| TransportError(e.to_string()))?;
        let parsed: ChatResponse = resp.body_mut().read_json().map_err(|e| TransportError(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| TransportError("response has no choices".into()))
    }
}

fn words(s: &str) -> Vec<String> {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// First label whose word sequence occurs in the response, scanning left to
/// right; at a given position the longest label wins. Case-insensitive.
pub fn parse_label(response: &str, candidates: &[Label]) -> Option<Label> {
    let resp = words(response);
    let mut labels: Vec<(Vec<String>, &Label)> = candidates
        .iter()
        .map(|l| (words(l.as_str()), l))
        .filter(|(w, _)| !w.is_empty())
        .collect();
    labels.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| b.1.as_str().len().cmp(&a.1.as_str().len())));
    for start in 0..resp.len() {
        for (w, label) in &labels {
            if resp[start..].starts_with(w) {
                return Some((*label).clone());
            }
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmSettings {
    pub retries: u32,
    pub max_inflight: usize,
    /// First backoff delay; doubles per retry.
    pub backoff_ms: u64,
}

impl Default for LlmSettings {
    fn default() -> Self {
        LlmSettings {
            retries: 3,
            max_inflight: 4,
            backoff_ms: 200,
        }
    }
}

/// Low-fidelity annotator that prompts a completion endpoint with
/// retrieved human-labelled examples.
pub struct LlmAnnotator {
    name: String,
    client: Box<dyn CompletionClient>,
    template: PromptTemplate,
    settings: LlmSettings,
    /// Every prompt sent, for inspection. Cleared by `take_prompts`.
    prompts: Mutex<Vec<(String, String)>>,
}

impl LlmAnnotator {
    pub fn new(name: impl Into<String>, client: Box<dyn CompletionClient>, template: PromptTemplate, settings: LlmSettings) -> Self {
        LlmAnnotator {
            name: name.into(),
            client,
            template,
            settings,
            prompts: Mutex::new(Vec::new()),
        }
    }

    pub fn take_prompts(&self) -> Vec<(String, String)> {
        std::mem::take(&mut self.prompts.lock().expect("prompt log poisoned"))
    }

    fn annotate_one(&self, sample: &Sample, ctx: &AnnotationContext<'_>) -> Result<Label, AnnotateFailure> {
        let examples = match ctx.retriever.map(|r| r.retrieve(sample)) {
            None | Some(Err(EmbedError::NoContext)) => Vec::new(),
            Some(Err(e)) => return Err(AnnotateFailure::Other(e.to_string())),
            Some(Ok(ex)) => ex,
        };
        let prompt = build_prompt(sample, &examples, &self.template);
        self.prompts
            .lock()
            .expect("prompt log poisoned")
            .push((sample.id.clone(), prompt.clone()));
        let attempts = self.settings.retries + 1;
        let mut last_transport: Option<String> = None;
        for attempt in 0..attempts {
            if attempt > 0 && self.settings.backoff_ms > 0 {
                let delay = self.settings.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                thread::sleep(Duration::from_millis(delay));
            }
            match self.client.complete(&prompt) {
                Ok(text) => {
                    if let Some(label) = parse_label(&text, &self.template.label_parse) {
                        if ctx.labels.contains(&label) {
                            return Ok(label);
                        }
                    }
                    last_transport = None;
                }
                Err(e) => last_transport = Some(e.0),
            }
        }
        Err(match last_transport {
            Some(last) => AnnotateFailure::Transport { attempts, last },
            None => AnnotateFailure::Unparseable { attempts },
        })
    }
}

impl Annotator for LlmAnnotator {
    fn name(&self) -> &str {
        &self.name
    }

    fn fidelity(&self) -> Fidelity {
        Fidelity::Low
    }

    fn annotate_batch(&self, samples: &[&Sample], ctx: &AnnotationContext<'_>) -> Vec<AnnotatorResult> {
        let slots: Vec<Mutex<Option<Result<Label, AnnotateFailure>>>> = samples.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        let workers = self.settings.max_inflight.max(1).min(samples.len().max(1));
        thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= samples.len() {
                        break;
                    }
                    let out = self.annotate_one(samples[i], ctx);
                    *slots[i].lock().expect("slot poisoned") = Some(out);
                });
            }
        });
        samples
            .iter()
            .zip(slots)
            .map(|(s, slot)| AnnotatorResult {
                sample_id: s.id.clone(),
                outcome: slot.into_inner().expect("slot poisoned").expect("every slot filled"),
            })
            .collect()
    }
}
