use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ContextExample;
use crate::model::{Label, LabelSet, Sample};

/// Prompt layout with named slots: `{text}` and `{label}` in
/// `example_format`, `{text}` in `query_format`, and optionally `{labels}`
/// (comma-separated label set) in `instruction`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub instruction: String,
    pub example_format: String,
    pub query_format: String,
    /// Labels to look for in responses.
    pub label_parse: Vec<Label>,
}

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("template {field} is missing the {slot} slot")]
    MissingSlot { field: &'static str, slot: &'static str },
    #[error("label_parse does not cover label {0:?}")]
    Uncovered(String),
    #[error("cannot read template {path}: {reason}")]
    Read { path: String, reason: String },
}

impl PromptTemplate {
    pub fn default_for(labels: &LabelSet) -> Self {
        PromptTemplate {
            instruction: "Classify the text into one of the following labels: {labels}. Answer with the label only.".into(),
            example_format: "Text: {text}\nLabel: {label}".into(),
            query_format: "Text: {text}\nLabel:".into(),
            label_parse: labels.iter().cloned().collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, TemplateError> {
        let read_err = |reason: String| TemplateError::Read {
            path: path.display().to_string(),
            reason,
        };
        let raw = std::fs::read_to_string(path).map_err(|e| read_err(e.to_string()))?;
        serde_json::from_str(&raw).map_err(|e| read_err(e.to_string()))
    }

    pub fn validate(&self, labels: &LabelSet) -> Result<(), TemplateError> {
        let need = |field: &'static str, s: &str, slot: &'static str| {
            if s.contains(slot) {
                Ok(())
            } else {
                Err(TemplateError::MissingSlot { field, slot })
            }
        };
        need("example_format", &self.example_format, "{text}")?;
        need("example_format", &self.example_format, "{label}")?;
        need("query_format", &self.query_format, "{text}")?;
        for l in labels.iter() {
            if !self.label_parse.contains(l) {
                return Err(TemplateError::Uncovered(l.0.clone()));
            }
        }
        Ok(())
    }
}

/// Single-pass slot substitution, so slot-like text inside values is left alone.
fn render(template: &str, slots: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    'outer: while let Some(pos) = rest.find('{') {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        for (name, value) in slots {
            let key = format!("{{{name}}}");
            if tail.starts_with(&key) {
                out.push_str(value);
                rest = &tail[key.len()..];
                continue 'outer;
            }
        }
        out.push('{');
        rest = &tail[1..];
    }
    out.push_str(rest);
    out
}

/// Instruction, then the examples in the given order, then the query.
pub fn build_prompt(query: &Sample, examples: &[ContextExample], template: &PromptTemplate) -> String {
    let label_list: Vec<&str> = template.label_parse.iter().map(Label::as_str).collect();
    let mut blocks = vec![render(&template.instruction, &[("labels", &label_list.join(", "))])];
    for ex in examples {
        blocks.push(render(&template.example_format, &[("text", &ex.text), ("label", ex.label.as_str())]));
    }
    blocks.push(render(&template.query_format, &[("text", &query.text)]));
    blocks.join("\n\n")
}
