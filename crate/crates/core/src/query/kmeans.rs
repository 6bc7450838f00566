use rand::Rng;

use super::QueryError;
use crate::embed::Embedding;
use crate::seed;

pub const MAX_ITERATIONS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KMeansInit {
    /// First center drawn from `seed`, the rest by greedy farthest point.
    FarthestPoint { seed: u64 },
    /// Every k-subset of points as initial centers; lowest inertia wins.
    /// Only sensible for tiny inputs.
    Exhaustive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    /// Point ids in ascending order; `assignment` is indexed the same way.
    pub ids: Vec<String>,
    pub assignment: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    pub iterations: usize,
}

impl Clustering {
    /// Per cluster, the member nearest its centroid (ties by ascending id).
    pub fn representatives(&self, points: &[&[f64]]) -> Vec<String> {
        (0..self.centroids.len())
            .map(|c| {
                let mut best: Option<(f64, usize)> = None;
                for (i, &a) in self.assignment.iter().enumerate() {
                    if a != c {
                        continue;
                    }
                    let d = sq_dist(points[i], &self.centroids[c]);
                    if best.map_or(true, |(bd, _)| d < bd) {
                        best = Some((d, i));
                    }
                }
                let (_, i) = best.expect("no empty clusters after re-seeding");
                self.ids[i].clone()
            })
            .collect()
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest_center(p: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, cent) in centroids.iter().enumerate() {
        let d = sq_dist(p, cent);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

fn farthest_point_init(points: &[&[f64]], k: usize, seed: u64) -> Vec<Vec<f64>> {
    let n = points.len();
    let first = seed::rng(seed, 0, "kmeans-init").gen_range(0..n);
    let mut chosen = vec![first];
    let mut min_d: Vec<f64> = points.iter().map(|p| sq_dist(p, points[first])).collect();
    while chosen.len() < k {
        let mut best: Option<usize> = None;
        for i in 0..n {
            if chosen.contains(&i) {
                continue;
            }
            if best.map_or(true, |b| min_d[i] > min_d[b]) {
                best = Some(i);
            }
        }
        let next = best.expect("k <= n");
        chosen.push(next);
        for i in 0..n {
            min_d[i] = min_d[i].min(sq_dist(points[i], points[next]));
        }
    }
    chosen.into_iter().map(|i| points[i].to_vec()).collect()
}

fn lloyd(points: &[&[f64]], mut centroids: Vec<Vec<f64>>) -> (Vec<usize>, Vec<Vec<f64>>, usize) {
    let n = points.len();
    let k = centroids.len();
    let dim = points[0].len();
    let mut assignment: Option<Vec<usize>> = None;
    let mut iterations = 0;
    for _ in 0..MAX_ITERATIONS {
        iterations += 1;
        let mut next: Vec<usize> = points.iter().map(|p| nearest_center(p, &centroids)).collect();

        // Re-seed empty clusters from the point farthest from its centroid,
        // taken from a cluster that can spare it.
        let mut sizes = vec![0usize; k];
        for &a in &next {
            sizes[a] += 1;
        }
        for c in 0..k {
            if sizes[c] > 0 {
                continue;
            }
            let mut best: Option<(f64, usize)> = None;
            for i in 0..n {
                if sizes[next[i]] < 2 {
                    continue;
                }
                let d = sq_dist(points[i], &centroids[next[i]]);
                if best.map_or(true, |(bd, _)| d > bd) {
                    best = Some((d, i));
                }
            }
            let (_, i) = best.expect("k <= n leaves a cluster with two members");
            sizes[next[i]] -= 1;
            next[i] = c;
            sizes[c] = 1;
            centroids[c] = points[i].to_vec();
        }

        let converged = assignment.as_ref() == Some(&next);
        let mut sums = vec![vec![0.0; dim]; k];
        for (i, &a) in next.iter().enumerate() {
            for (s, x) in sums[a].iter_mut().zip(points[i]) {
                *s += x;
            }
        }
        centroids = sums
            .into_iter()
            .zip(&sizes)
            .map(|(s, &m)| s.into_iter().map(|x| x / m as f64).collect())
            .collect();
        assignment = Some(next);
        if converged {
            break;
        }
    }
    (assignment.expect("at least one iteration"), centroids, iterations)
}

fn inertia(points: &[&[f64]], assignment: &[usize], centroids: &[Vec<f64>]) -> f64 {
    points
        .iter()
        .zip(assignment)
        .map(|(p, &a)| sq_dist(p, &centroids[a]))
        .sum()
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Lloyd's k-means over the given points.
pub fn kmeans(points: &[(&str, &Embedding)], k: usize, init: KMeansInit) -> Result<Clustering, QueryError> {
    if k == 0 {
        return Err(QueryError::ZeroK);
    }
    if k > points.len() {
        return Err(QueryError::KTooLarge { k, n: points.len() });
    }
    let mut sorted: Vec<(&str, &Embedding)> = points.to_vec();
    sorted.sort_by(|a, b| a.0.cmp(b.0));
    let ids: Vec<String> = sorted.iter().map(|(id, _)| id.to_string()).collect();
    let vecs: Vec<&[f64]> = sorted.iter().map(|(_, e)| e.as_slice()).collect();

    let inits = match init {
        KMeansInit::FarthestPoint { seed } => vec![farthest_point_init(&vecs, k, seed)],
        KMeansInit::Exhaustive => combinations(vecs.len(), k)
            .into_iter()
            .map(|c| c.into_iter().map(|i| vecs[i].to_vec()).collect())
            .collect(),
    };
    let mut best: Option<Clustering> = None;
    for centroids in inits {
        let (assignment, centroids, iterations) = lloyd(&vecs, centroids);
        let inertia = inertia(&vecs, &assignment, &centroids);
        if best.as_ref().map_or(true, |b| inertia < b.inertia) {
            best = Some(Clustering {
                ids: ids.clone(),
                assignment,
                centroids,
                inertia,
                iterations,
            });
        }
    }
    Ok(best.expect("at least one initialisation"))
}

/// One representative per cluster: the id nearest each k-means centroid.
pub fn kmeans_select(points: &[(&str, &Embedding)], k: usize, seed: u64) -> Result<Vec<String>, QueryError> {
    kmeans_select_with(points, k, KMeansInit::FarthestPoint { seed })
}

pub fn kmeans_select_with(points: &[(&str, &Embedding)], k: usize, init: KMeansInit) -> Result<Vec<String>, QueryError> {
    let clustering = kmeans(points, k, init)?;
    let mut sorted: Vec<(&str, &Embedding)> = points.to_vec();
    sorted.sort_by(|a, b| a.0.cmp(b.0));
    let vecs: Vec<&[f64]> = sorted.iter().map(|(_, e)| e.as_slice()).collect();
    Ok(clustering.representatives(&vecs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    fn pts(raw: &[(&str, &[f64])]) -> Vec<(String, Embedding)> {
        raw.iter().map(|(id, v)| (id.to_string(), Embedding(v.to_vec()))).collect()
    }

    fn view(p: &[(String, Embedding)]) -> Vec<(&str, &Embedding)> {
        p.iter().map(|(id, e)| (id.as_str(), e)).collect()
    }

    /// Minimum within-cluster SSE over every partition into k non-empty
    /// groups, reduced to the nearest-to-centroid member of each group.
    fn exhaustive_oracle(p: &[(String, Embedding)], k: usize) -> BTreeSet<String> {
        let mut sorted = p.to_vec();
        sorted.sort_by(|a, b| a.0.cmp(&b.0));
        let n = sorted.len();
        let mut best: Option<(f64, Vec<usize>)> = None;
        let mut labels = vec![0usize; n];
        fn rec(i: usize, used: usize, k: usize, labels: &mut Vec<usize>, pts: &[(String, Embedding)], best: &mut Option<(f64, Vec<usize>)>) {
            let n = labels.len();
            if i == n {
                if used != k {
                    return;
                }
                let mut sse = 0.0;
                for c in 0..k {
                    let members: Vec<&Embedding> = (0..n).filter(|&j| labels[j] == c).map(|j| &pts[j].1).collect();
                    let d = members[0].dim();
                    let mean: Vec<f64> = (0..d).map(|t| members.iter().map(|m| m.0[t]).sum::<f64>() / members.len() as f64).collect();
                    sse += members.iter().map(|m| m.0.iter().zip(&mean).map(|(a, b)| (a - b).powi(2)).sum::<f64>()).sum::<f64>();
                }
                if best.as_ref().map_or(true, |(b, _)| sse < *b - 1e-12) {
                    *best = Some((sse, labels.clone()));
                }
                return;
            }
            // restricted growth strings enumerate set partitions once each
            for c in 0..(used + 1).min(k) {
                labels[i] = c;
                rec(i + 1, used.max(c + 1), k, labels, pts, best);
            }
        }
        rec(0, 0, k, &mut labels, &sorted, &mut best);
        let (_, labels) = best.unwrap();
        let mut out = BTreeSet::new();
        for c in 0..k {
            let members: Vec<usize> = (0..n).filter(|&j| labels[j] == c).collect();
            let d = sorted[0].1.dim();
            let mean: Vec<f64> = (0..d).map(|t| members.iter().map(|&m| sorted[m].1 .0[t]).sum::<f64>() / members.len() as f64).collect();
            let rep = members
                .iter()
                .min_by(|&&a, &&b| {
                    let da: f64 = sorted[a].1 .0.iter().zip(&mean).map(|(x, y)| (x - y).powi(2)).sum();
                    let db: f64 = sorted[b].1 .0.iter().zip(&mean).map(|(x, y)| (x - y).powi(2)).sum();
                    da.partial_cmp(&db).unwrap().then(sorted[a].0.cmp(&sorted[b].0))
                })
                .unwrap();
            out.insert(sorted[*rep].0.clone());
        }
        out
    }

    #[test]
    fn k_equals_n_returns_everything() {
        let p = pts(&[("a", &[0.0, 0.0]), ("b", &[1.0, 0.0]), ("c", &[0.0, 5.0])]);
        let got: BTreeSet<String> = kmeans_select(&view(&p), 3, 1).unwrap().into_iter().collect();
        assert_eq!(got, ["a", "b", "c"].iter().map(|s| s.to_string()).collect());
    }

    #[test]
    fn duplicates_still_give_distinct_ids() {
        let p = pts(&[("a", &[1.0]), ("b", &[1.0]), ("c", &[1.0]), ("d", &[2.0])]);
        let got = kmeans_select(&view(&p), 3, 0).unwrap();
        let set: BTreeSet<&String> = got.iter().collect();
        assert_eq!(set.len(), 3);
    }

    #[test]
    fn two_separated_pairs() {
        let p = pts(&[("a", &[0.0, 0.0]), ("b", &[0.1, 0.0]), ("c", &[10.0, 10.0]), ("d", &[10.0, 10.1])]);
        for seed in 0..8 {
            let got = kmeans_select(&view(&p), 2, seed).unwrap();
            let left = got.iter().filter(|id| *id == "a" || *id == "b").count();
            assert_eq!(left, 1, "seed {seed}: {got:?}");
            assert_eq!(got.iter().collect::<BTreeSet<_>>(), exhaustive_oracle(&p, 2).iter().collect());
        }
    }

    #[test]
    fn planted_two_clusters_match_exhaustive_partition() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..20 {
            let mut raw = Vec::new();
            for i in 0..8 {
                let center = if i < 4 { [0.0, 0.0] } else { [6.0, 3.0] };
                raw.push((
                    format!("p{i}"),
                    Embedding(vec![center[0] + rng.gen_range(-1.0..1.0), center[1] + rng.gen_range(-1.0..1.0)]),
                ));
            }
            let oracle = exhaustive_oracle(&raw, 2);
            let got: BTreeSet<String> = kmeans_select(&view(&raw), 2, trial).unwrap().into_iter().collect();
            assert_eq!(got, oracle, "trial {trial}");
        }
    }

    #[test]
    fn exhaustive_restart_matches_partition_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..30 {
            let n = rng.gen_range(3..=9);
            let k = rng.gen_range(1..=3.min(n));
            let raw: Vec<(String, Embedding)> = (0..n)
                .map(|i| (format!("q{i}"), Embedding(vec![rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)])))
                .collect();
            let got: BTreeSet<String> = kmeans_select_with(&view(&raw), k, KMeansInit::Exhaustive)
                .unwrap()
                .into_iter()
                .collect();
            assert_eq!(got, exhaustive_oracle(&raw, k), "trial {trial} n={n} k={k}");
        }
    }

    #[test]
    fn input_order_does_not_matter() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let raw: Vec<(String, Embedding)> = (0..30)
            .map(|i| (format!("r{i:02}"), Embedding(vec![rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)])))
            .collect();
        let a = kmeans_select(&view(&raw), 5, 9).unwrap();
        let mut rev = raw.clone();
        rev.reverse();
        assert_eq!(a, kmeans_select(&view(&rev), 5, 9).unwrap());
    }

    #[test]
    fn errors() {
        let p = pts(&[("a", &[0.0])]);
        assert!(matches!(kmeans_select(&view(&p), 2, 0), Err(QueryError::KTooLarge { k: 2, n: 1 })));
        assert!(matches!(kmeans_select(&view(&p), 0, 0), Err(QueryError::ZeroK)));
    }
}
