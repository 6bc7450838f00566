use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{rank_order, EmbedError, Embedding, EmbeddingStore};
use crate::model::{AnnotatedSet, Label};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RetrievalMode {
    /// Nearest human-annotated examples by cosine similarity.
    #[default]
    Similar,
    /// Uniformly drawn human-annotated examples (ablation baseline).
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalParams {
    pub neighbors: usize,
    pub shots: usize,
    pub mode: RetrievalMode,
    pub seed: u64,
}

impl Default for RetrievalParams {
    fn default() -> Self {
        RetrievalParams {
            neighbors: 50,
            shots: 5,
            mode: RetrievalMode::Similar,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedExample {
    pub sample_id: String,
    pub label: Label,
    pub similarity: f64,
}

/// In-context examples for one query, drawn only from the human-annotated
/// subset and ordered most to least similar.
///
/// Similar mode narrows to the `neighbors` nearest ids and then keeps the top
/// `shots`; with exact search the second stage is a prefix of the first.
pub fn retrieve_prompt_examples(
    store: &EmbeddingStore,
    query_id: &str,
    query: &Embedding,
    annotated: &AnnotatedSet,
    params: &RetrievalParams,
) -> Result<Vec<RetrievedExample>, EmbedError> {
    let human = annotated.human_ids();
    if human.is_empty() {
        return Err(EmbedError::NoContext);
    }
    if params.shots == 0 {
        return Ok(Vec::new());
    }
    let picked: Vec<(String, f64)> = match params.mode {
        RetrievalMode::Similar => {
            let mut near = store.knn(query, human.iter().map(String::as_str), params.neighbors.max(1))?;
            near.truncate(params.shots);
            near
        }
        RetrievalMode::Random => {
            let mut ids: Vec<&String> = human.iter().collect();
            let mut rng = seed::rng(params.seed, 0, &format!("retrieval/{query_id}"));
            ids.shuffle(&mut rng);
            ids.truncate(params.shots);
            let mut scored = store.knn(query, ids.into_iter().map(String::as_str), params.shots)?;
            scored.sort_by(rank_order);
            scored
        }
    };
    Ok(picked
        .into_iter()
        .map(|(id, similarity)| RetrievedExample {
            label: annotated.get(&id).expect("human id annotated").label.clone(),
            sample_id: id,
            similarity,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{commit_annotations, DataPool, Fidelity, LabelSet, NewAnnotation, Sample};

    fn setup(n_human: usize) -> (EmbeddingStore, AnnotatedSet) {
        let mut store = EmbeddingStore::new("t", 2);
        let mut samples = Vec::new();
        for i in 0..n_human + 2 {
            let angle = i as f64 * 0.3;
            store.insert(&format!("s{i}"), Embedding(vec![angle.cos(), angle.sin()])).unwrap();
            samples.push(Sample::new(format!("s{i}"), ""));
        }
        let mut pool = DataPool::from_samples(samples).unwrap();
        let mut set = AnnotatedSet::new();
        let labels = LabelSet::new(["x", "y"]).unwrap();
        let mut batch: Vec<NewAnnotation> = (0..n_human)
            .map(|i| NewAnnotation {
                sample_id: format!("s{i}"),
                label: if i % 2 == 0 { "x".into() } else { "y".into() },
                fidelity: Fidelity::High,
                source: "oracle".into(),
                round: 0,
            })
            .collect();
        // one low-fidelity annotation that must never be retrieved
        batch.push(NewAnnotation {
            sample_id: format!("s{}", n_human),
            label: "x".into(),
            fidelity: Fidelity::Low,
            source: "noisy".into(),
            round: 0,
        });
        commit_annotations(&mut pool, &mut set, &labels, batch).unwrap();
        (store, set)
    }

    #[test]
    fn saturates_when_fewer_than_shots() {
        let (store, set) = setup(3);
        let q = Embedding(vec![1.0, 0.0]);
        let got = retrieve_prompt_examples(&store, "q", &q, &set, &RetrievalParams::default()).unwrap();
        assert_eq!(got.len(), 3);
        assert!(got.windows(2).all(|w| w[0].similarity >= w[1].similarity));
        assert!(got.iter().all(|g| set.human_ids().contains(&g.sample_id)));
    }

    #[test]
    fn identical_query_first() {
        let (store, set) = setup(8);
        let q = store.get("s4").unwrap().clone();
        let got = retrieve_prompt_examples(&store, "s4", &q, &set, &RetrievalParams::default()).unwrap();
        assert_eq!(got[0].sample_id, "s4");
        assert_eq!(got.len(), 5);
    }

    #[test]
    fn no_context_without_humans() {
        let store = EmbeddingStore::new("t", 2);
        let set = AnnotatedSet::new();
        assert!(matches!(
            retrieve_prompt_examples(&store, "q", &Embedding(vec![1.0, 0.0]), &set, &RetrievalParams::default()),
            Err(EmbedError::NoContext)
        ));
    }

    #[test]
    fn random_mode_is_seeded_and_human_only() {
        let (store, set) = setup(10);
        let q = Embedding(vec![1.0, 0.0]);
        let params = RetrievalParams { mode: RetrievalMode::Random, seed: 3, ..Default::default() };
        let a = retrieve_prompt_examples(&store, "q", &q, &set, &params).unwrap();
        let b = retrieve_prompt_examples(&store, "q", &q, &set, &params).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
        assert!(a.iter().all(|g| set.human_ids().contains(&g.sample_id)));
    }
}
