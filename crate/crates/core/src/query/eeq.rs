use super::{kmeans_select, Predictor, QueryError, QueryPlan, StrategyKind};
use crate::budget::RoundBudget;
use crate::embed::{rank_order, Embedding};

/// Sort by descending uncertainty (ties by ascending id) and cut after `h`.
/// Returns `(human_ids, human_scores, rest)`.
pub fn split_by_uncertainty(mut scored: Vec<(String, f64)>, h: usize) -> (Vec<String>, Vec<f64>, Vec<String>) {
    scored.sort_by(rank_order);
    let rest = scored.split_off(h.min(scored.len()));
    let (ids, scores) = scored.into_iter().unzip();
    (ids, scores, rest.into_iter().map(|(id, _)| id).collect())
}

/// Two-stage selection: k-means representatives with `k = h + g` for
/// diversity, then the `h` most uncertain of those go to the human annotator
/// and the remaining `g` to the LLM annotator.
pub fn eeq_select(
    candidates: &[(&str, &Embedding)],
    predictor: &dyn Predictor,
    budget: RoundBudget,
    round: u32,
    seed: u64,
) -> Result<QueryPlan, QueryError> {
    let h = budget.human as usize;
    let k = h + budget.llm as usize;
    if k == 0 {
        return Ok(QueryPlan::empty(round, StrategyKind::Eeq, seed, predictor.basis()));
    }
    if candidates.len() < k {
        return Err(QueryError::Shortfall {
            required: k,
            available: candidates.len(),
        });
    }
    let representatives = kmeans_select(candidates, k, seed)?;
    let scored = representatives
        .into_iter()
        .map(|id| predictor.uncertainty(&id).map(|s| (id, s)))
        .collect::<Result<Vec<_>, _>>()?;
    let (human_ids, human_uncertainty, llm_ids) = split_by_uncertainty(scored, h);
    Ok(QueryPlan {
        round,
        human_ids,
        human_uncertainty,
        llm_ids,
        k_clusters: k,
        strategy: StrategyKind::Eeq,
        seed,
        basis: predictor.basis(),
    })
}

#[cfg(test)]
mod tests {
    use super::super::test_support::TablePredictor;
    use super::*;
    use crate::budget::{human_schedule, llm_schedule};
    use std::collections::BTreeMap;

    #[test]
    fn reference_round_one_cluster_count() {
        let h = human_schedule(200, 5)[0];
        let g = llm_schedule(800, 5)[0];
        assert_eq!(h + g, 260);
    }

    #[test]
    fn zero_human_budget_is_pure_diversity() {
        let pts: Vec<(String, Embedding)> = (0..6).map(|i| (format!("p{i}"), Embedding(vec![i as f64, 0.0]))).collect();
        let view: Vec<(&str, &Embedding)> = pts.iter().map(|(id, e)| (id.as_str(), e)).collect();
        let probs: BTreeMap<String, Vec<f64>> = pts.iter().map(|(id, _)| (id.clone(), vec![0.5, 0.5])).collect();
        let pred = TablePredictor { probs, shift: 0.0 };
        let plan = eeq_select(&view, &pred, RoundBudget { human: 0, llm: 3 }, 1, 4).unwrap();
        assert!(plan.human_ids.is_empty());
        assert_eq!(plan.llm_ids.len(), 3);
        assert_eq!(plan.k_clusters, 3);
    }

    #[test]
    fn empty_budget_gives_empty_plan() {
        let pred = TablePredictor { probs: BTreeMap::new(), shift: 0.0 };
        let plan = eeq_select(&[], &pred, RoundBudget { human: 0, llm: 0 }, 3, 0).unwrap();
        assert_eq!(plan.total(), 0);
    }

    #[test]
    fn split_orders_by_uncertainty_then_id() {
        let scored = vec![("b".to_string(), 0.5), ("a".to_string(), 0.5), ("c".to_string(), 0.9), ("d".to_string(), 0.1)];
        let (h, s, rest) = split_by_uncertainty(scored, 2);
        assert_eq!(h, ["c", "a"]);
        assert_eq!(s, [0.9, 0.5]);
        assert_eq!(rest, ["b", "d"]);
    }
}
