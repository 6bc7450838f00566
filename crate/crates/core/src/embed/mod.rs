//! Embeddings, exact cosine nearest-neighbour search and prompt-example retrieval.

mod encoder;
mod retrieval;

pub use encoder::{Encoder, ExternalEncoder, HashingEncoder, Transport};
pub use retrieval::{retrieve_prompt_examples, RetrievalMode, RetrievalParams, RetrievedExample};

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::DataPool;

/// A dense embedding vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

impl From<Vec<f64>> for Embedding {
    fn from(v: Vec<f64>) -> Self {
        Embedding(v)
    }
}

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("cosine similarity undefined for a zero vector{}", .0.as_deref().map(|id| format!(" ({id})")).unwrap_or_default())]
    ZeroVector(Option<String>),
    #[error("non-finite embedding for {0:?}")]
    NonFinite(String),
    #[error("candidate set is empty")]
    EmptyCandidates,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("no embedding stored for sample {0:?}")]
    Missing(String),
    #[error("no human-annotated examples to retrieve from")]
    NoContext,
    #[error("encoder {encoder}: {reason}")]
    Encoder { encoder: String, reason: String },
    #[error("embedding cache {path}: {reason}")]
    Cache { path: String, reason: String },
}

/// `dot(a, b) / (|a| |b|)`.
pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f64, EmbedError> {
    if a.dim() != b.dim() {
        return Err(EmbedError::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(EmbedError::ZeroVector(None));
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Similarity-descending comparator with ascending-id tie break.
pub(crate) fn rank_order(a: &(String, f64), b: &(String, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

/// Vectors for every sample of a run, keyed by sample id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingStore {
    encoder_name: String,
    dim: usize,
    vectors: BTreeMap<String, Embedding>,
}

impl EmbeddingStore {
    pub fn new(encoder_name: impl Into<String>, dim: usize) -> Self {
        EmbeddingStore {
            encoder_name: encoder_name.into(),
            dim,
            vectors: BTreeMap::new(),
        }
    }

    /// Embed every sample in the pool.
    pub fn build(encoder: &dyn Encoder, pool: &DataPool) -> Result<Self, EmbedError> {
        let items: Vec<(&str, &str)> = pool.samples().map(|s| (s.id.as_str(), s.text.as_str())).collect();
        let mut store = EmbeddingStore::new(encoder.name(), encoder.dim());
        let vectors = encoder.encode_batch(&items)?;
        for ((id, _), v) in items.iter().zip(vectors) {
            store.insert(id, v)?;
        }
        Ok(store)
    }

    pub fn encoder_name(&self) -> &str {
        &self.encoder_name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn insert(&mut self, id: &str, v: Embedding) -> Result<(), EmbedError> {
        if v.dim() != self.dim {
            return Err(EmbedError::DimensionMismatch {
                left: self.dim,
                right: v.dim(),
            });
        }
        if !v.is_finite() {
            return Err(EmbedError::NonFinite(id.to_string()));
        }
        self.vectors.insert(id.to_string(), v);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<&Embedding, EmbedError> {
        self.vectors.get(id).ok_or_else(|| EmbedError::Missing(id.to_string()))
    }

    /// Exact k nearest neighbours of `query` among `candidates` by cosine
    /// similarity, most similar first, ties by ascending id.
    pub fn knn<'a, I>(&self, query: &Embedding, candidates: I, k: usize) -> Result<Vec<(String, f64)>, EmbedError>
    where
        I: IntoIterator<Item = &'a str>,
    {
        if k == 0 {
            return Err(EmbedError::ZeroK);
        }
        if query.norm() == 0.0 {
            return Err(EmbedError::ZeroVector(Some("query".into())));
        }
        let mut scored = Vec::new();
        for id in candidates {
            let v = self.get(id)?;
            let sim = cosine_similarity(query, v).map_err(|e| match e {
                EmbedError::ZeroVector(_) => EmbedError::ZeroVector(Some(id.to_string())),
                other => other,
            })?;
            scored.push((id.to_string(), sim));
        }
        if scored.is_empty() {
            return Err(EmbedError::EmptyCandidates);
        }
        scored.sort_by(rank_order);
        scored.dedup_by(|a, b| a.0 == b.0);
        scored.truncate(k);
        Ok(scored)
    }
}
