use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::EvalError;
use crate::embed::HashingEncoder;
use crate::model::{Label, Sample};
use crate::seed;

/// Tokens emitted per unit of latent activation.
const TOKENS_PER_UNIT: f64 = 4.0;
/// Offset added before clipping at zero so off-class topics still appear.
const BASELINE: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthTask {
    pub pool: Vec<Sample>,
    pub test: Vec<Sample>,
    pub labels: Vec<Label>,
    /// One topic word per latent dimension; the first `n_classes` belong to classes.
    pub vocabulary: Vec<String>,
}

/// Picks one word per latent dimension so each lands in its own encoder bucket.
fn vocabulary(dims: usize) -> Vec<String> {
    let enc = HashingEncoder::new(HashingEncoder::DEFAULT_DIM);
    let mut used = BTreeSet::new();
    let mut words = Vec::with_capacity(dims);
    for d in 0..dims {
        let word = (0..)
            .map(|n| format!("w{d}x{n}"))
            .find(|w| used.insert(enc.bucket(w)))
            .expect("enough buckets");
        words.push(word);
    }
    words
}

/// Knobs for [`synth_task_with`].
#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub n_classes: usize,
    pub n_samples: usize,
    pub separation: f64,
    /// Fraction of gold labels flipped to another class.
    pub noise: f64,
    /// Class-independent dimensions shared by every sample.
    pub nuisance_dims: usize,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams { n_classes: 4, n_samples: 3750, separation: 4.0, noise: 0.0, nuisance_dims: 4, seed: 0 }
    }
}

/// [`synth_task_with`] with the default number of nuisance dimensions.
pub fn synth_task(n_classes: usize, n_samples: usize, separation: f64, noise: f64, seed: u64) -> Result<SynthTask, EvalError> {
    synth_task_with(&SynthParams { n_classes, n_samples, separation, noise, seed, ..SynthParams::default() })
}

/// Synthetic classification task.
///
/// Latent points are drawn from `n_classes` unit-variance isotropic Gaussians
/// whose centroids are pairwise `separation` apart (class `k` sits at
/// `separation / sqrt(2)` along its own axis). Each point is rendered as a
/// bag of topic words whose counts follow the clipped latent coordinates, so
/// the hashing encoder maps it near its cluster. A `noise` fraction of gold
/// labels is flipped to another class. Nuisance dimensions carry pure noise
/// around the origin. 80% of samples form the pool, the rest the test set.
pub fn synth_task_with(p: &SynthParams) -> Result<SynthTask, EvalError> {
    let SynthParams { n_classes, n_samples, separation, noise, nuisance_dims, seed: seed_value } = *p;
    if n_classes < 2 {
        return Err(EvalError::Synth("n_classes must be at least 2".into()));
    }
    if !(separation > 0.0 && separation.is_finite()) {
        return Err(EvalError::Synth(format!("separation must be positive, got {separation}")));
    }
    if !(0.0..=1.0).contains(&noise) {
        return Err(EvalError::Synth(format!("noise {noise} outside [0, 1]")));
    }
    let dims = n_classes + nuisance_dims;
    if dims > HashingEncoder::DEFAULT_DIM {
        return Err(EvalError::Synth(format!(
            "{n_classes} classes need {dims} distinct encoder buckets, only {} exist",
            HashingEncoder::DEFAULT_DIM
        )));
    }
    if n_samples < n_classes {
        return Err(EvalError::Synth(format!("{n_samples} samples cannot cover {n_classes} classes")));
    }
    let words = vocabulary(dims);
    let labels: Vec<Label> = (0..n_classes).map(|k| Label::new(format!("c{k}"))).collect();
    let offset = separation / std::f64::consts::SQRT_2;
    let mut rng = seed::rng(seed_value, 0, "synth");
    let width = n_samples.to_string().len();
    let mut samples = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let class = i % n_classes;
        let mut tokens: Vec<&str> = Vec::new();
        for (d, word) in words.iter().enumerate() {
            let centre = if d == class { offset } else { 0.0 };
            let noise_z: f64 = StandardNormal.sample(&mut rng);
            let z = centre + noise_z;
            let count = (TOKENS_PER_UNIT * (z + BASELINE).max(0.0)).round() as usize;
            tokens.extend(std::iter::repeat(word.as_str()).take(count));
        }
        if tokens.is_empty() {
            // keep every text embeddable
            tokens.push(&words[class]);
        }
        tokens.shuffle(&mut rng);
        let gold = if noise > 0.0 && rng.gen::<f64>() < noise {
            let other = (class + rng.gen_range(1..n_classes)) % n_classes;
            labels[other].clone()
        } else {
            labels[class].clone()
        };
        samples.push(Sample::new(format!("s{i:0width$}"), tokens.join(" ")).with_gold(gold));
    }
    samples.shuffle(&mut rng);
    let n_test = n_samples / 5;
    let test = samples.split_off(n_samples - n_test);
    Ok(SynthTask { pool: samples, test, labels, vocabulary: words })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::Encoder;

    #[test]
    fn split_arithmetic() {
        let t = synth_task(2, 10, 3.0, 0.0, 1).unwrap();
        assert_eq!((t.pool.len(), t.test.len()), (8, 2));
        let t = synth_task(4, 3750, 3.0, 0.0, 1).unwrap();
        assert_eq!((t.pool.len(), t.test.len()), (3000, 750));
    }

    #[test]
    fn deterministic() {
        assert_eq!(synth_task(3, 100, 2.0, 0.1, 5).unwrap(), synth_task(3, 100, 2.0, 0.1, 5).unwrap());
        assert_ne!(synth_task(3, 100, 2.0, 0.1, 5).unwrap(), synth_task(3, 100, 2.0, 0.1, 6).unwrap());
    }

    #[test]
    fn infeasible_parameters() {
        assert!(synth_task(1, 10, 1.0, 0.0, 0).is_err());
        assert!(synth_task(2, 10, 0.0, 0.0, 0).is_err());
        assert!(synth_task(2, 10, 1.0, 1.5, 0).is_err());
        assert!(synth_task(100, 1000, 1.0, 0.0, 0).is_err());
        assert!(synth_task_with(&SynthParams { nuisance_dims: 61, ..SynthParams::default() }).is_err());
    }

    #[test]
    fn nuisance_dims_widen_the_vocabulary() {
        let t = synth_task_with(&SynthParams { n_samples: 40, nuisance_dims: 20, ..SynthParams::default() }).unwrap();
        assert_eq!(t.vocabulary.len(), 24);
        assert_eq!(synth_task(4, 40, 4.0, 0.0, 0).unwrap().vocabulary.len(), 8);
    }

    #[test]
    fn vocabulary_occupies_distinct_buckets() {
        let words = vocabulary(20);
        let enc = HashingEncoder::new(HashingEncoder::DEFAULT_DIM);
        let buckets: BTreeSet<usize> = words.iter().map(|w| enc.bucket(w)).collect();
        assert_eq!(buckets.len(), 20);
    }

    #[test]
    fn texts_embed_near_their_class_axis() {
        let t = synth_task(4, 400, 6.0, 0.0, 2).unwrap();
        let enc = HashingEncoder::new(HashingEncoder::DEFAULT_DIM);
        let mut hits = 0;
        for s in t.pool.iter().chain(&t.test) {
            let v = enc.encode(&s.text).unwrap();
            let best = (0..4).max_by(|&a, &b| {
                let va = v.as_slice()[enc.bucket(&t.vocabulary[a])];
                let vb = v.as_slice()[enc.bucket(&t.vocabulary[b])];
                va.total_cmp(&vb)
            });
            let class: usize = s.gold_label().unwrap().as_str()[1..].parse().unwrap();
            hits += usize::from(best == Some(class));
        }
        assert!(hits as f64 / 400.0 > 0.95, "{hits}");
    }

    #[test]
    fn label_noise_rate() {
        let t = synth_task(4, 4000, 50.0, 0.2, 3).unwrap();
        let enc = HashingEncoder::new(HashingEncoder::DEFAULT_DIM);
        let flipped = t
            .pool
            .iter()
            .chain(&t.test)
            .filter(|s| {
                let v = enc.encode(&s.text).unwrap();
                let class: usize = s.gold_label().unwrap().as_str()[1..].parse().unwrap();
                v.as_slice()[enc.bucket(&t.vocabulary[class])] < 0.5
            })
            .count();
        assert!((flipped as f64 / 4000.0 - 0.2).abs() < 0.03, "{flipped}");
    }
}
