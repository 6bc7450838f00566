//! Multi-fidelity interactive annotation: a small human budget spent on the
//! samples the learner is least sure about, a larger LLM budget spent on a
//! diverse spread of the rest, and a learner fine-tuned between rounds.

pub mod annotate;
pub mod budget;
pub mod embed;
pub mod eval;
pub mod learner;
pub mod model;
pub mod orchestrator;
pub mod query;
pub mod seed;
