//! Acquisition strategies: the exploration-exploitation selector (diversity
//! first, then uncertainty) and the baseline strategies it is compared with.

mod baselines;
mod eeq;
pub mod kmeans;
mod uncertainty;

pub use baselines::baseline_select;
pub use eeq::{eeq_select, split_by_uncertainty};
pub use kmeans::{kmeans_select, kmeans_select_with, KMeansInit};
pub use uncertainty::{
    breaking_ties, entropy, least_confidence, mean_logprob_uncertainty, score, UncertaintyBasis, UncertaintyScore,
};

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::budget::RoundBudget;
use crate::embed::Embedding;
use crate::learner::Prediction;
use crate::seed;

#[derive(Debug, Error)]
pub enum QueryError {
    #[error("token log-probability list is empty")]
    EmptyLogprobs,
    #[error("token log-probability {0} is not a finite value <= 0")]
    InvalidLogprob(f64),
    #[error("not a probability distribution (sums to {0})")]
    InvalidDistribution(f64),
    #[error("k must be at least 1")]
    ZeroK,
    #[error("k = {k} exceeds the {n} available points")]
    KTooLarge { k: usize, n: usize },
    #[error("candidate shortfall: {required} required, {available} available")]
    Shortfall { required: usize, available: usize },
    #[error("prediction failed for {id:?}: {reason}")]
    Predict { id: String, reason: String },
    #[error("hybrid lambda {0} outside [0, 1]")]
    InvalidLambda(f64),
}

/// Model access for scoring candidates.
pub trait Predictor {
    fn predict(&self, id: &str) -> Result<Prediction, QueryError>;

    /// Score used to rank candidates for the human annotator.
    fn basis(&self) -> UncertaintyBasis {
        UncertaintyBasis::LeastConfidence
    }

    fn uncertainty(&self, id: &str) -> Result<f64, QueryError> {
        score(&self.predict(id)?, self.basis())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StrategyKind {
    Random,
    Entropy,
    LeastConfidence,
    BreakingTies,
    KMeans,
    Diversity,
    Hybrid(f64),
    #[serde(rename = "EEQ")]
    Eeq,
}

impl StrategyKind {
    pub const DEFAULT_HYBRID_LAMBDA: f64 = 0.5;

    pub fn name(&self) -> &'static str {
        match self {
            StrategyKind::Random => "Random",
            StrategyKind::Entropy => "Entropy",
            StrategyKind::LeastConfidence => "LeastConfidence",
            StrategyKind::BreakingTies => "BreakingTies",
            StrategyKind::KMeans => "KMeans",
            StrategyKind::Diversity => "Diversity",
            StrategyKind::Hybrid(_) => "Hybrid",
            StrategyKind::Eeq => "EEQ",
        }
    }

    pub fn all() -> [StrategyKind; 8] {
        [
            StrategyKind::Random,
            StrategyKind::Entropy,
            StrategyKind::LeastConfidence,
            StrategyKind::BreakingTies,
            StrategyKind::KMeans,
            StrategyKind::Diversity,
            StrategyKind::Hybrid(Self::DEFAULT_HYBRID_LAMBDA),
            StrategyKind::Eeq,
        ]
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StrategyKind::Hybrid(l) => write!(f, "Hybrid({l})"),
            other => f.write_str(other.name()),
        }
    }
}

impl FromStr for StrategyKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        let kind = match lower.as_str() {
            "random" => StrategyKind::Random,
            "entropy" => StrategyKind::Entropy,
            "leastconfidence" | "least-c" | "least_confidence" => StrategyKind::LeastConfidence,
            "breakingties" | "breaking-t" | "breaking_ties" => StrategyKind::BreakingTies,
            "kmeans" | "k-means" => StrategyKind::KMeans,
            "diversity" => StrategyKind::Diversity,
            "hybrid" => StrategyKind::Hybrid(Self::DEFAULT_HYBRID_LAMBDA),
            "eeq" => StrategyKind::Eeq,
            _ => {
                if let Some(inner) = lower.strip_prefix("hybrid(").and_then(|r| r.strip_suffix(')')) {
                    let l: f64 = inner.parse().map_err(|_| format!("bad hybrid lambda in {s:?}"))?;
                    StrategyKind::Hybrid(l)
                } else {
                    return Err(format!(
                        "unknown strategy {s:?} (expected one of Random, Entropy, LeastConfidence, BreakingTies, KMeans, Diversity, Hybrid, EEQ)"
                    ));
                }
            }
        };
        Ok(kind)
    }
}

/// Per-round output of a strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryPlan {
    pub round: u32,
    /// Most uncertain first.
    pub human_ids: Vec<String>,
    pub human_uncertainty: Vec<f64>,
    pub llm_ids: Vec<String>,
    pub k_clusters: usize,
    pub strategy: StrategyKind,
    pub seed: u64,
    pub basis: UncertaintyBasis,
}

impl QueryPlan {
    pub fn empty(round: u32, strategy: StrategyKind, seed: u64, basis: UncertaintyBasis) -> Self {
        QueryPlan {
            round,
            human_ids: Vec::new(),
            human_uncertainty: Vec::new(),
            llm_ids: Vec::new(),
            k_clusters: 0,
            strategy,
            seed,
            basis,
        }
    }

    pub fn total(&self) -> usize {
        self.human_ids.len() + self.llm_ids.len()
    }
}

/// Plan one round with any strategy.
///
/// Baselines choose *which* samples to annotate but not *who* annotates
/// them: the selected set is split between fidelities by a seeded shuffle.
/// Only the exploration-exploitation strategy routes by uncertainty.
pub fn plan_round(
    kind: StrategyKind,
    candidates: &[(&str, &Embedding)],
    predictor: &dyn Predictor,
    budget: RoundBudget,
    round: u32,
    seed: u64,
) -> Result<QueryPlan, QueryError> {
    if let StrategyKind::Hybrid(l) = kind {
        if !(0.0..=1.0).contains(&l) {
            return Err(QueryError::InvalidLambda(l));
        }
    }
    if kind == StrategyKind::Eeq {
        return eeq_select(candidates, predictor, budget, round, seed);
    }
    let h = budget.human as usize;
    let total = h + budget.llm as usize;
    if total == 0 {
        return Ok(QueryPlan::empty(round, kind, seed, predictor.basis()));
    }
    if total > candidates.len() {
        return Err(QueryError::Shortfall {
            required: total,
            available: candidates.len(),
        });
    }
    let mut selected = baseline_select(kind, candidates, predictor, total, seed)?;
    selected.shuffle(&mut seed::rng(seed, round, "fidelity-split"));
    let llm_ids = selected.split_off(h);
    let scored = selected
        .into_iter()
        .map(|id| predictor.uncertainty(&id).map(|s| (id, s)))
        .collect::<Result<Vec<_>, _>>()?;
    let (human_ids, human_uncertainty, _) = split_by_uncertainty(scored, h);
    Ok(QueryPlan {
        round,
        human_ids,
        human_uncertainty,
        llm_ids,
        k_clusters: total,
        strategy: kind,
        seed,
        basis: predictor.basis(),
    })
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use std::collections::BTreeMap;

    /// Fixed per-id distributions, optionally shifted uncertainty.
    pub struct TablePredictor {
        pub probs: BTreeMap<String, Vec<f64>>,
        pub shift: f64,
    }

    impl Predictor for TablePredictor {
        fn predict(&self, id: &str) -> Result<Prediction, QueryError> {
            let probs = self.probs.get(id).cloned().ok_or_else(|| QueryError::Predict {
                id: id.into(),
                reason: "unknown".into(),
            })?;
            Ok(Prediction { probs, token_logprobs: None })
        }

        fn uncertainty(&self, id: &str) -> Result<f64, QueryError> {
            Ok(score(&self.predict(id)?, self.basis())? + self.shift)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::test_support::TablePredictor;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::{BTreeMap, BTreeSet};

    fn instance(n: usize, seed: u64) -> (Vec<(String, Embedding)>, TablePredictor) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pts = Vec::new();
        let mut probs = BTreeMap::new();
        for i in 0..n {
            let id = format!("c{i:03}");
            pts.push((id.clone(), Embedding(vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])));
            let raw: Vec<f64> = (0..3).map(|_| rng.gen_range(0.01..1.0)).collect();
            let s: f64 = raw.iter().sum();
            probs.insert(id, raw.into_iter().map(|x| x / s).collect());
        }
        (pts, TablePredictor { probs, shift: 0.0 })
    }

    fn view(p: &[(String, Embedding)]) -> Vec<(&str, &Embedding)> {
        p.iter().map(|(id, e)| (id.as_str(), e)).collect()
    }

    #[test]
    fn every_strategy_respects_budget_and_disjointness() {
        let (pts, pred) = instance(40, 3);
        let budget = RoundBudget { human: 4, llm: 7 };
        for kind in StrategyKind::all() {
            let plan = plan_round(kind, &view(&pts), &pred, budget, 1, 17).unwrap();
            assert_eq!(plan.human_ids.len(), 4, "{kind}");
            assert_eq!(plan.llm_ids.len(), 7, "{kind}");
            let h: BTreeSet<_> = plan.human_ids.iter().collect();
            let l: BTreeSet<_> = plan.llm_ids.iter().collect();
            assert!(h.is_disjoint(&l), "{kind}");
            assert_eq!(h.len() + l.len(), 11, "{kind}");
            assert!(plan.human_uncertainty.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn permutation_invariance() {
        let (pts, pred) = instance(30, 8);
        let mut shuffled = pts.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(1));
        let budget = RoundBudget { human: 3, llm: 5 };
        for kind in StrategyKind::all() {
            let a = plan_round(kind, &view(&pts), &pred, budget, 2, 5).unwrap();
            let b = plan_round(kind, &view(&shuffled), &pred, budget, 2, 5).unwrap();
            assert_eq!(a, b, "{kind}");
        }
    }

    #[test]
    fn shortfall_error() {
        let (pts, pred) = instance(5, 1);
        let err = plan_round(StrategyKind::Random, &view(&pts), &pred, RoundBudget { human: 3, llm: 3 }, 1, 0).unwrap_err();
        assert!(matches!(err, QueryError::Shortfall { required: 6, available: 5 }));
    }

    #[test]
    fn strategy_names_round_trip() {
        for kind in StrategyKind::all() {
            assert_eq!(kind.name().parse::<StrategyKind>().unwrap().name(), kind.name());
        }
        assert_eq!("hybrid(0.25)".parse::<StrategyKind>().unwrap(), StrategyKind::Hybrid(0.25));
        assert!("best".parse::<StrategyKind>().is_err());
    }

    #[test]
    fn invalid_lambda_rejected() {
        let (pts, pred) = instance(5, 1);
        assert!(plan_round(StrategyKind::Hybrid(1.5), &view(&pts), &pred, RoundBudget { human: 1, llm: 1 }, 1, 0).is_err());
    }
}
