use serde::{Deserialize, Serialize};

use super::{
    snapshot_id, Learner, LearnerError, LearnerInput, LearnerKind, LearnerSnapshot, Prediction, TrainExample,
    SNAPSHOT_VERSION,
};
use crate::model::LabelSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub learning_rate: f64,
    pub epochs: u32,
    pub l2: f64,
    pub seed: u64,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper {
            learning_rate: 0.5,
            epochs: 100,
            l2: 1e-4,
            seed: 0,
        }
    }
}

/// Multinomial logistic regression with a bias column, trained by full-batch
/// gradient descent. Parameters start at zero (uniform predictions).
#[derive(Debug, Clone)]
pub struct ReferenceLearner {
    labels: LabelSet,
    dim: usize,
    /// Row-major `|labels| x (dim + 1)`; last column is the bias.
    weights: Vec<f64>,
    hyper: Hyper,
    round: u32,
}

/// A training example reduced to features and a class index.
struct Row<'a> {
    x: &'a [f64],
    y: usize,
}

impl ReferenceLearner {
    pub const NAME: &'static str = "reference-logreg";

    pub fn new(labels: LabelSet, dim: usize, hyper: Hyper) -> Self {
        let n = labels.len() * (dim + 1);
        ReferenceLearner {
            labels,
            dim,
            weights: vec![0.0; n],
            hyper,
            round: 0,
        }
    }

    pub fn hyper(&self) -> &Hyper {
        &self.hyper
    }

    pub fn params(&self) -> &[f64] {
        &self.weights
    }

    pub fn set_params(&mut self, params: Vec<f64>) {
        assert_eq!(params.len(), self.weights.len());
        self.weights = params;
    }

    fn rows<'a>(&self, batch: &'a [TrainExample<'a>]) -> Result<Vec<Row<'a>>, LearnerError> {
        batch
            .iter()
            .map(|ex| {
                self.check_features(&ex.input)?;
                let y = self
                    .labels
                    .index_of(ex.label)
                    .ok_or_else(|| LearnerError::UnknownLabel(ex.label.0.clone()))?;
                Ok(Row { x: ex.input.features, y })
            })
            .collect()
    }

    fn check_features(&self, input: &LearnerInput<'_>) -> Result<(), LearnerError> {
        if input.features.len() != self.dim || input.features.iter().any(|v| !v.is_finite()) {
            return Err(LearnerError::Unembedded {
                id: input.id.to_string(),
                expected: self.dim,
                got: input.features.len(),
            });
        }
        Ok(())
    }

    fn logits(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        let stride = self.dim + 1;
        (0..self.labels.len())
            .map(|c| {
                let row = &params[c * stride..(c + 1) * stride];
                row[..self.dim].iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + row[self.dim]
            })
            .collect()
    }

    fn softmax(logits: &[f64]) -> Vec<f64> {
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
        let s: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / s).collect()
    }

    fn log_softmax(logits: &[f64]) -> Vec<f64> {
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
        logits.iter().map(|z| z - lse).collect()
    }

    fn mean_loss(&self, params: &[f64], rows: &[Row<'_>]) -> f64 {
        if rows.is_empty() {
            return 0.0;
        }
        let total: f64 = rows.iter().map(|r| -Self::log_softmax(&self.logits(params, r.x))[r.y]).sum();
        total / rows.len() as f64
    }

    fn add_mean_grad(&self, params: &[f64], rows: &[Row<'_>], grad: &mut [f64]) {
        if rows.is_empty() {
            return;
        }
        let stride = self.dim + 1;
        let scale = 1.0 / rows.len() as f64;
        for r in rows {
            let p = Self::softmax(&self.logits(params, r.x));
            for (c, pc) in p.iter().enumerate() {
                let delta = (pc - if c == r.y { 1.0 } else { 0.0 }) * scale;
                let g = &mut grad[c * stride..(c + 1) * stride];
                for (gi, xi) in g[..self.dim].iter_mut().zip(r.x) {
                    *gi += delta * xi;
                }
                g[self.dim] += delta;
            }
        }
    }

    fn l2_term(&self, params: &[f64]) -> f64 {
        let stride = self.dim + 1;
        let sq: f64 = params
            .iter()
            .enumerate()
            .filter(|(i, _)| i % stride != self.dim)
            .map(|(_, w)| w * w)
            .sum();
        0.5 * self.hyper.l2 * sq
    }

    fn objective_rows(&self, params: &[f64], high: &[Row<'_>], low: &[Row<'_>]) -> f64 {
        self.mean_loss(params, high) + self.mean_loss(params, low) + self.l2_term(params)
    }

    fn gradient_rows(&self, params: &[f64], high: &[Row<'_>], low: &[Row<'_>]) -> Vec<f64> {
        let mut grad = vec![0.0; params.len()];
        self.add_mean_grad(params, high, &mut grad);
        self.add_mean_grad(params, low, &mut grad);
        let stride = self.dim + 1;
        for (i, g) in grad.iter_mut().enumerate() {
            if i % stride != self.dim {
                *g += self.hyper.l2 * params[i];
            }
        }
        grad
    }

    /// `mean CE(high) + mean CE(low) + l2/2 |W|^2` at `params`; an empty
    /// batch contributes zero.
    pub fn objective(&self, params: &[f64], high: &[TrainExample<'_>], low: &[TrainExample<'_>]) -> Result<f64, LearnerError> {
        Ok(self.objective_rows(params, &self.rows(high)?, &self.rows(low)?))
    }

    /// Analytic gradient of [`Self::objective`].
    pub fn gradient(&self, params: &[f64], high: &[TrainExample<'_>], low: &[TrainExample<'_>]) -> Result<Vec<f64>, LearnerError> {
        Ok(self.gradient_rows(params, &self.rows(high)?, &self.rows(low)?))
    }

    /// Run the configured epochs of gradient descent; returns the objective
    /// value after every epoch.
    pub fn train(&mut self, high: &[TrainExample<'_>], low: &[TrainExample<'_>]) -> Result<Vec<f64>, LearnerError> {
        let high = self.rows(high)?;
        let low = self.rows(low)?;
        let mut trace = Vec::with_capacity(self.hyper.epochs as usize);
        for _ in 0..self.hyper.epochs {
            let grad = self.gradient_rows(&self.weights, &high, &low);
            for (w, g) in self.weights.iter_mut().zip(&grad) {
                *w -= self.hyper.learning_rate * g;
            }
            trace.push(self.objective_rows(&self.weights, &high, &low));
        }
        Ok(trace)
    }
}

impl Learner for ReferenceLearner {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn kind(&self) -> LearnerKind {
        LearnerKind::Classifier
    }

    fn labels(&self) -> &LabelSet {
        &self.labels
    }

    fn init_tune(&mut self, batch: &[TrainExample<'_>]) -> Result<LearnerSnapshot, LearnerError> {
        if batch.is_empty() {
            return Err(LearnerError::EmptyWarmstart);
        }
        self.train(batch, &[])?;
        self.round = 0;
        Ok(self.snapshot())
    }

    fn round_tune(
        &mut self,
        round: u32,
        high: &[TrainExample<'_>],
        low: &[TrainExample<'_>],
    ) -> Result<LearnerSnapshot, LearnerError> {
        if high.is_empty() && low.is_empty() {
            return Err(LearnerError::EmptyBatches);
        }
        self.train(high, low)?;
        self.round = round;
        Ok(self.snapshot())
    }

    fn predict(&self, input: &LearnerInput<'_>) -> Result<Prediction, LearnerError> {
        self.check_features(input)?;
        let logits = self.logits(&self.weights, input.features);
        let probs = Self::softmax(&logits);
        let top = Self::log_softmax(&logits).into_iter().fold(f64::NEG_INFINITY, f64::max);
        Ok(Prediction {
            probs,
            token_logprobs: Some(vec![top.min(0.0)]),
        })
    }

    fn snapshot(&self) -> LearnerSnapshot {
        LearnerSnapshot {
            version: SNAPSHOT_VERSION,
            id: snapshot_id(Self::NAME, self.round, &self.weights, ""),
            learner: Self::NAME.to_string(),
            round: self.round,
            dim: self.dim,
            n_labels: self.labels.len(),
            hyper: self.hyper,
            params: self.weights.clone(),
            external_state: None,
        }
    }

    fn restore(&mut self, snap: &LearnerSnapshot) -> Result<(), LearnerError> {
        if snap.version != SNAPSHOT_VERSION {
            return Err(LearnerError::Version {
                found: snap.version,
                expected: SNAPSHOT_VERSION,
            });
        }
        if snap.learner != Self::NAME || snap.dim != self.dim || snap.n_labels != self.labels.len() {
            return Err(LearnerError::Incompatible(format!(
                "{} d={} labels={} vs {} d={} labels={}",
                snap.learner,
                snap.dim,
                snap.n_labels,
                Self::NAME,
                self.dim,
                self.labels.len()
            )));
        }
        if snap.params.len() != self.weights.len() || snap.params.iter().any(|p| !p.is_finite()) {
            return Err(LearnerError::Incompatible("parameter block malformed".into()));
        }
        self.weights = snap.params.clone();
        self.round = snap.round;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Label;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Data {
        ids: Vec<String>,
        xs: Vec<Vec<f64>>,
        ys: Vec<Label>,
    }

    impl Data {
        fn examples(&self) -> Vec<TrainExample<'_>> {
            (0..self.ids.len())
                .map(|i| TrainExample {
                    input: LearnerInput { id: &self.ids[i], text: "", features: &self.xs[i] },
                    label: &self.ys[i],
                })
                .collect()
        }
    }

    fn labels3() -> LabelSet {
        LabelSet::new(["a", "b", "c"]).unwrap()
    }

    fn random_data(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Data {
        let names = ["a", "b", "c"];
        Data {
            ids: (0..n).map(|i| format!("x{i}")).collect(),
            xs: (0..n).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect(),
            ys: (0..n).map(|_| Label::from(names[rng.gen_range(0..3)])).collect(),
        }
    }

    #[test]
    fn zero_weights_predict_uniform() {
        let l = ReferenceLearner::new(labels3(), 4, Hyper::default());
        let p = l.predict(&LearnerInput { id: "q", text: "", features: &[0.3, -1.0, 2.0, 0.0] }).unwrap();
        for v in &p.probs {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn distribution_normalised() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data = random_data(30, 5, &mut rng);
        let mut l = ReferenceLearner::new(labels3(), 5, Hyper { epochs: 20, ..Hyper::default() });
        l.init_tune(&data.examples()).unwrap();
        for _ in 0..100 {
            let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let p = l.predict(&LearnerInput { id: "q", text: "", features: &x }).unwrap();
            assert!((p.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn unembedded_sample_rejected() {
        let l = ReferenceLearner::new(labels3(), 4, Hyper::default());
        assert!(matches!(
            l.predict(&LearnerInput { id: "q", text: "", features: &[1.0] }),
            Err(LearnerError::Unembedded { .. })
        ));
    }

    #[test]
    fn single_example_is_learned() {
        let data = Data { ids: vec!["x".into()], xs: vec![vec![0.2, -0.4, 0.9]], ys: vec!["c".into()] };
        let mut l = ReferenceLearner::new(labels3(), 3, Hyper { epochs: 200, ..Hyper::default() });
        l.init_tune(&data.examples()).unwrap();
        let p = l.predict(&data.examples()[0].input).unwrap();
        assert_eq!(p.argmax(), 2);
    }

    #[test]
    fn zero_epochs_is_identity() {
        let data = Data { ids: vec!["x".into()], xs: vec![vec![1.0, 0.0]], ys: vec!["a".into()] };
        let mut l = ReferenceLearner::new(labels3(), 2, Hyper { epochs: 0, ..Hyper::default() });
        let snap = l.init_tune(&data.examples()).unwrap();
        assert!(snap.params.iter().all(|w| *w == 0.0));
    }

    #[test]
    fn training_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = random_data(25, 4, &mut rng);
        let mut a = ReferenceLearner::new(labels3(), 4, Hyper::default());
        let mut b = ReferenceLearner::new(labels3(), 4, Hyper::default());
        assert_eq!(a.init_tune(&data.examples()).unwrap(), b.init_tune(&data.examples()).unwrap());
    }

    #[test]
    fn empty_batches_rejected() {
        let mut l = ReferenceLearner::new(labels3(), 2, Hyper::default());
        assert!(matches!(l.init_tune(&[]), Err(LearnerError::EmptyWarmstart)));
        assert!(matches!(l.round_tune(1, &[], &[]), Err(LearnerError::EmptyBatches)));
    }

    #[test]
    fn empty_low_batch_reduces_to_warmstart_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data = random_data(10, 3, &mut rng);
        let mut a = ReferenceLearner::new(labels3(), 3, Hyper::default());
        let mut b = ReferenceLearner::new(labels3(), 3, Hyper::default());
        let sa = a.init_tune(&data.examples()).unwrap();
        let sb = b.round_tune(1, &data.examples(), &[]).unwrap();
        assert_eq!(sa.params, sb.params);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let high = random_data(1, 3, &mut rng);
        let low = random_data(3, 3, &mut rng);
        let l = ReferenceLearner::new(labels3(), 3, Hyper { l2: 0.01, ..Hyper::default() });
        let params: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g = l.gradient(&params, &high.examples(), &low.examples()).unwrap();
        let h = 1e-6;
        for i in 0..params.len() {
            let mut p = params.clone();
            p[i] += h;
            let up = l.objective(&p, &high.examples(), &low.examples()).unwrap();
            p[i] -= 2.0 * h;
            let down = l.objective(&p, &high.examples(), &low.examples()).unwrap();
            let fd = (up - down) / (2.0 * h);
            let rel = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-8);
            assert!(rel < 1e-4, "param {i}: fd {fd} analytic {}", g[i]);
        }
        // grad(h_1) + (1/3) sum grad(g_i), each computed on its own
        let l0 = ReferenceLearner::new(labels3(), 3, Hyper { l2: 0.0, ..Hyper::default() });
        let total = l0.gradient(&params, &high.examples(), &low.examples()).unwrap();
        let gh = l0.gradient(&params, &high.examples(), &[]).unwrap();
        let mut gl = vec![0.0; 12];
        for ex in low.examples() {
            let gi = l0.gradient(&params, &[ex], &[]).unwrap();
            gl.iter_mut().zip(gi).for_each(|(a, b)| *a += b / 3.0);
        }
        for i in 0..12 {
            assert!((total[i] - gh[i] - gl[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn duplication_leaves_objective_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let high = random_data(4, 3, &mut rng);
        let low = random_data(6, 3, &mut rng);
        let l = ReferenceLearner::new(labels3(), 3, Hyper::default());
        let params: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let base = l.objective(&params, &high.examples(), &low.examples()).unwrap();
        fn dup(d: &Data) -> Vec<TrainExample<'_>> {
            let mut e = d.examples();
            e.extend(d.examples());
            e
        }
        let doubled = l.objective(&params, &dup(&high), &dup(&low)).unwrap();
        assert!((base - doubled).abs() < 1e-12);
    }

    #[test]
    fn separable_toy_set_reaches_full_train_accuracy() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let labels = LabelSet::new(["neg", "pos"]).unwrap();
        let xs: Vec<Vec<f64>> = (0..20)
            .map(|i| {
                let side = if i < 10 { -1.0 } else { 1.0 };
                vec![side * rng.gen_range(0.2..1.0), rng.gen_range(-1.0..1.0)]
            })
            .collect();
        let ys: Vec<Label> = (0..20).map(|i| if i < 10 { "neg".into() } else { "pos".into() }).collect();
        let data = Data { ids: (0..20).map(|i| format!("t{i}")).collect(), xs, ys };
        let mut l = ReferenceLearner::new(labels, 2, Hyper { epochs: 500, l2: 0.0, ..Hyper::default() });
        l.init_tune(&data.examples()).unwrap();
        let correct = data
            .examples()
            .iter()
            .filter(|ex| l.predict(&ex.input).unwrap().argmax() == l.labels().index_of(ex.label).unwrap())
            .count();
        assert_eq!(correct, 20);
    }

    #[test]
    fn training_loss_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let high = random_data(8, 4, &mut rng);
        let low = random_data(12, 4, &mut rng);
        let mut l = ReferenceLearner::new(labels3(), 4, Hyper { learning_rate: 0.1, epochs: 50, ..Hyper::default() });
        let trace = l.train(&high.examples(), &low.examples()).unwrap();
        for w in trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-9);
        }
    }

    #[test]
    fn snapshot_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let data = random_data(10, 3, &mut rng);
        let mut l = ReferenceLearner::new(labels3(), 3, Hyper::default());
        let snap = l.round_tune(2, &data.examples(), &[]).unwrap();
        let json = serde_json::to_string(&snap).unwrap();
        let back: LearnerSnapshot = serde_json::from_str(&json).unwrap();
        let mut fresh = ReferenceLearner::new(labels3(), 3, Hyper::default());
        fresh.restore(&back).unwrap();
        for ex in data.examples() {
            assert_eq!(l.predict(&ex.input).unwrap(), fresh.predict(&ex.input).unwrap());
        }
        let mut bad = back.clone();
        bad.version = 99;
        assert!(matches!(fresh.restore(&bad), Err(LearnerError::Version { .. })));
    }
}
