use rand::seq::SliceRandom;

use super::kmeans::sq_dist;
use super::{breaking_ties, entropy, kmeans_select, least_confidence, Predictor, QueryError, StrategyKind};
use crate::embed::{rank_order, Embedding};
use crate::seed;

/// Pick `total` candidates with a single-fidelity strategy, in selection order.
pub fn baseline_select(
    kind: StrategyKind,
    candidates: &[(&str, &Embedding)],
    predictor: &dyn Predictor,
    total: usize,
    seed: u64,
) -> Result<Vec<String>, QueryError> {
    if total > candidates.len() {
        return Err(QueryError::Shortfall {
            required: total,
            available: candidates.len(),
        });
    }
    let mut sorted: Vec<(&str, &Embedding)> = candidates.to_vec();
    sorted.sort_by(|a, b| a.0.cmp(b.0));
    if total == 0 {
        return Ok(Vec::new());
    }
    match kind {
        StrategyKind::Random => {
            let mut ids: Vec<String> = sorted.iter().map(|(id, _)| id.to_string()).collect();
            ids.shuffle(&mut seed::rng(seed, 0, "random-baseline"));
            ids.truncate(total);
            Ok(ids)
        }
        StrategyKind::Entropy | StrategyKind::LeastConfidence | StrategyKind::BreakingTies => {
            let f = match kind {
                StrategyKind::Entropy => entropy,
                StrategyKind::LeastConfidence => least_confidence,
                _ => breaking_ties,
            };
            let scores = sorted
                .iter()
                .map(|(id, _)| Ok((id.to_string(), f(&predictor.predict(id)?.probs)?)))
                .collect::<Result<Vec<_>, QueryError>>()?;
            Ok(top_by_score(scores, total))
        }
        StrategyKind::KMeans => kmeans_select(&sorted, total, seed),
        StrategyKind::Diversity => Ok(farthest_point(&sorted, total)),
        StrategyKind::Hybrid(lambda) => {
            if !(0.0..=1.0).contains(&lambda) {
                return Err(QueryError::InvalidLambda(lambda));
            }
            let unc = sorted
                .iter()
                .map(|(id, _)| predictor.uncertainty(id))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(hybrid(&sorted, &unc, lambda, total))
        }
        StrategyKind::Eeq => {
            let plan = super::eeq_select(
                &sorted,
                predictor,
                crate::budget::RoundBudget { human: 0, llm: total as u64 },
                0,
                seed,
            )?;
            Ok(plan.llm_ids)
        }
    }
}

/// Highest scores first, ties by ascending id.
pub(crate) fn top_by_score(mut scores: Vec<(String, f64)>, total: usize) -> Vec<String> {
    scores.sort_by(rank_order);
    scores.into_iter().take(total).map(|(id, _)| id).collect()
}

fn centroid(points: &[(&str, &Embedding)]) -> Vec<f64> {
    let d = points[0].1.dim();
    let mut c = vec![0.0; d];
    for (_, e) in points {
        for (s, x) in c.iter_mut().zip(e.as_slice()) {
            *s += x;
        }
    }
    c.iter_mut().for_each(|x| *x /= points.len() as f64);
    c
}

/// Greedy max-min traversal starting from the point nearest the centroid.
fn farthest_point(points: &[(&str, &Embedding)], total: usize) -> Vec<String> {
    let c = centroid(points);
    let n = points.len();
    let mut taken = vec![false; n];
    // strict comparisons over id-sorted input give ascending-id tie breaks
    let mut first = 0;
    for i in 1..n {
        if sq_dist(points[i].1.as_slice(), &c) < sq_dist(points[first].1.as_slice(), &c) {
            first = i;
        }
    }
    let mut order = vec![first];
    taken[first] = true;
    let mut min_d: Vec<f64> = points.iter().map(|(_, e)| sq_dist(e.as_slice(), points[first].1.as_slice())).collect();
    while order.len() < total {
        let mut best: Option<usize> = None;
        for i in 0..n {
            if !taken[i] && best.map_or(true, |b| min_d[i] > min_d[b]) {
                best = Some(i);
            }
        }
        let next = best.expect("total <= n");
        taken[next] = true;
        order.push(next);
        for i in 0..n {
            min_d[i] = min_d[i].min(sq_dist(points[i].1.as_slice(), points[next].1.as_slice()));
        }
    }
    order.into_iter().map(|i| points[i].0.to_string()).collect()
}

fn min_max_normalize(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

/// Greedy weighted sum of normalised uncertainty and normalised distance to
/// the nearest already-selected point. The first pick has no diversity term.
fn hybrid(points: &[(&str, &Embedding)], uncertainty: &[f64], lambda: f64, total: usize) -> Vec<String> {
    let n = points.len();
    let unc = min_max_normalize(uncertainty);
    let mut taken = vec![false; n];
    let mut min_d = vec![0.0_f64; n];
    let mut order: Vec<usize> = Vec::with_capacity(total);
    while order.len() < total {
        let remaining: Vec<usize> = (0..n).filter(|&i| !taken[i]).collect();
        let div = if order.is_empty() {
            vec![0.0; remaining.len()]
        } else {
            min_max_normalize(&remaining.iter().map(|&i| min_d[i].sqrt()).collect::<Vec<_>>())
        };
        let mut best: Option<(f64, usize)> = None;
        for (j, &i) in remaining.iter().enumerate() {
            let s = lambda * unc[i] + (1.0 - lambda) * div[j];
            if best.map_or(true, |(bs, _)| s > bs) {
                best = Some((s, i));
            }
        }
        let (_, next) = best.expect("total <= n");
        taken[next] = true;
        for i in 0..n {
            let d = sq_dist(points[i].1.as_slice(), points[next].1.as_slice());
            min_d[i] = if order.is_empty() { d } else { min_d[i].min(d) };
        }
        order.push(next);
    }
    order.into_iter().map(|i| points[i].0.to_string()).collect()
}

#[cfg(test)]
mod tests {
    use super::super::test_support::TablePredictor;
    use super::*;
    use std::collections::BTreeMap;

    fn table(rows: &[(&str, &[f64])]) -> TablePredictor {
        TablePredictor {
            probs: rows.iter().map(|(id, p)| (id.to_string(), p.to_vec())).collect(),
            shift: 0.0,
        }
    }

    fn line(n: usize) -> Vec<(String, Embedding)> {
        (0..n).map(|i| (format!("p{i}"), Embedding(vec![i as f64]))).collect()
    }

    fn view(p: &[(String, Embedding)]) -> Vec<(&str, &Embedding)> {
        p.iter().map(|(id, e)| (id.as_str(), e)).collect()
    }

    #[test]
    fn random_is_deterministic_per_seed() {
        let pts = line(20);
        let pred = table(&[]);
        let a = baseline_select(StrategyKind::Random, &view(&pts), &pred, 5, 42).unwrap();
        let b = baseline_select(StrategyKind::Random, &view(&pts), &pred, 5, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
    }

    #[test]
    fn entropy_prefers_uniform() {
        let pts = line(2);
        let pred = table(&[("p0", &[1.0, 0.0]), ("p1", &[0.5, 0.5])]);
        assert_eq!(baseline_select(StrategyKind::Entropy, &view(&pts), &pred, 1, 0).unwrap(), ["p1"]);
    }

    #[test]
    fn breaking_ties_prefers_small_margin() {
        let pts = line(2);
        let pred = table(&[("p0", &[0.9, 0.1]), ("p1", &[0.5, 0.5])]);
        assert_eq!(baseline_select(StrategyKind::BreakingTies, &view(&pts), &pred, 1, 0).unwrap(), ["p1"]);
    }

    #[test]
    fn diversity_starts_near_centroid_then_spreads() {
        let pts = line(11);
        let pred = table(&[]);
        let got = baseline_select(StrategyKind::Diversity, &view(&pts), &pred, 3, 0).unwrap();
        assert_eq!(got, ["p5", "p0", "p10"]);
    }

    #[test]
    fn hybrid_extremes() {
        let pts = line(5);
        let rows: Vec<(String, Vec<f64>)> = (0..5)
            .map(|i| (format!("p{i}"), vec![0.5 + 0.1 * i as f64, 0.5 - 0.1 * i as f64]))
            .collect();
        let pred = TablePredictor { probs: rows.into_iter().collect::<BTreeMap<_, _>>(), shift: 0.0 };
        // lambda = 1: pure least confidence ranking
        let got = baseline_select(StrategyKind::Hybrid(1.0), &view(&pts), &pred, 3, 0).unwrap();
        assert_eq!(got, ["p0", "p1", "p2"]);
        // lambda = 0: after the first pick, farthest from the selection
        let got = baseline_select(StrategyKind::Hybrid(0.0), &view(&pts), &pred, 2, 0).unwrap();
        assert_eq!(got, ["p0", "p4"]);
    }

    #[test]
    fn over_selection_rejected() {
        let pts = line(2);
        assert!(baseline_select(StrategyKind::Random, &view(&pts), &table(&[]), 3, 0).is_err());
    }

    #[test]
    fn score_shift_leaves_ranking_unchanged() {
        let scores: Vec<(String, f64)> = (0..10).map(|i| (format!("s{i}"), ((i * 7) % 5) as f64 * 0.1)).collect();
        let shifted: Vec<(String, f64)> = scores.iter().map(|(id, s)| (id.clone(), s + 3.25)).collect();
        assert_eq!(top_by_score(scores, 4), top_by_score(shifted, 4));
    }
}
