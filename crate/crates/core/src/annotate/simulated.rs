use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{AnnotateFailure, AnnotationContext, Annotator, AnnotatorResult};
use crate::model::{Fidelity, Label, LabelSet, Sample};
use crate::seed;

fn gold(sample: &Sample) -> Result<&Label, AnnotateFailure> {
    sample.gold_label().ok_or_else(|| AnnotateFailure::MissingGold(sample.id.clone()))
}

/// Answers with the withheld gold label: the simulated human.
#[derive(Debug, Clone)]
pub struct OracleAnnotator {
    name: String,
}

impl OracleAnnotator {
    pub fn new() -> Self {
        OracleAnnotator { name: "oracle".into() }
    }
}

impl Default for OracleAnnotator {
    fn default() -> Self {
        Self::new()
    }
}

impl Annotator for OracleAnnotator {
    fn name(&self) -> &str {
        &self.name
    }

    fn fidelity(&self) -> Fidelity {
        Fidelity::High
    }

    fn annotate_batch(&self, samples: &[&Sample], _ctx: &AnnotationContext<'_>) -> Vec<AnnotatorResult> {
        samples
            .iter()
            .map(|s| AnnotatorResult {
                sample_id: s.id.clone(),
                outcome: gold(s).cloned(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoisyProfile {
    pub accuracy: f64,
    pub seed: u64,
}

/// Gold with probability `p`, otherwise a uniformly chosen wrong label.
/// Each draw is seeded by `(seed, sample_id)`, so batch order is irrelevant.
fn noisy_label(sample: &Sample, labels: &LabelSet, p: f64, seed: u64, purpose: &str) -> Result<Label, AnnotateFailure> {
    let gold = gold(sample)?;
    let mut rng = seed::rng(seed, 0, &format!("{purpose}/{}", sample.id));
    if rng.gen::<f64>() < p {
        return Ok(gold.clone());
    }
    let wrong: Vec<&Label> = labels.iter().filter(|l| *l != gold).collect();
    if wrong.is_empty() {
        return Ok(gold.clone());
    }
    Ok(wrong[rng.gen_range(0..wrong.len())].clone())
}

/// Simulated low-fidelity annotator with a fixed accuracy.
#[derive(Debug, Clone)]
pub struct NoisyAnnotator {
    name: String,
    profile: NoisyProfile,
}

impl NoisyAnnotator {
    pub fn new(profile: NoisyProfile) -> Result<Self, String> {
        if !(0.0..=1.0).contains(&profile.accuracy) {
            return Err(format!("noisy accuracy {} outside [0, 1]", profile.accuracy));
        }
        Ok(NoisyAnnotator {
            name: format!("noisy(p={})", profile.accuracy),
            profile,
        })
    }
}

impl Annotator for NoisyAnnotator {
    fn name(&self) -> &str {
        &self.name
    }

    fn fidelity(&self) -> Fidelity {
        Fidelity::Low
    }

    fn annotate_batch(&self, samples: &[&Sample], ctx: &AnnotationContext<'_>) -> Vec<AnnotatorResult> {
        samples
            .iter()
            .map(|s| AnnotatorResult {
                sample_id: s.id.clone(),
                outcome: noisy_label(s, ctx.labels, self.profile.accuracy, self.profile.seed, "noisy"),
            })
            .collect()
    }
}

/// Simulated in-context learner: accuracy grows with how similar the
/// retrieved examples are to the query,
/// `p = clamp(base + gain * mean_similarity, 0, ceiling)`.
/// Without any retrieved context the mean similarity is taken as zero.
#[derive(Debug, Clone)]
pub struct ContextSensitiveAnnotator {
    name: String,
    pub base: f64,
    pub gain: f64,
    pub ceiling: f64,
    pub seed: u64,
}

impl ContextSensitiveAnnotator {
    pub fn new(base: f64, gain: f64, ceiling: f64, seed: u64) -> Self {
        ContextSensitiveAnnotator {
            name: format!("context-sim(base={base},gain={gain})"),
            base,
            gain,
            ceiling,
            seed,
        }
    }

    pub fn accuracy_for(&self, mean_similarity: f64) -> f64 {
        (self.base + self.gain * mean_similarity).clamp(0.0, self.ceiling.min(1.0))
    }
}

impl Annotator for ContextSensitiveAnnotator {
    fn name(&self) -> &str {
        &self.name
    }

    fn fidelity(&self) -> Fidelity {
        Fidelity::Low
    }

    fn annotate_batch(&self, samples: &[&Sample], ctx: &AnnotationContext<'_>) -> Vec<AnnotatorResult> {
        samples
            .iter()
            .map(|s| {
                let examples = ctx.retriever.map(|r| r.retrieve(s)).transpose();
                let outcome = match examples {
                    Err(e) if !matches!(e, crate::embed::EmbedError::NoContext) => Err(AnnotateFailure::Other(e.to_string())),
                    other => {
                        let ex = other.ok().flatten().unwrap_or_default();
                        let sim = if ex.is_empty() {
                            0.0
                        } else {
                            ex.iter().map(|e| e.similarity).sum::<f64>() / ex.len() as f64
                        };
                        noisy_label(s, ctx.labels, self.accuracy_for(sim), self.seed, "context-sim")
                    }
                };
                AnnotatorResult { sample_id: s.id.clone(), outcome }
            })
            .collect()
    }
}

/// Which requests a [`FaultInjector`] fails.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FaultPlan {
    /// Each sample fails independently with this probability, seeded per id.
    Rate { rate: f64, seed: u64 },
    /// The first `count` samples of the batch in `round` fail.
    FirstInRound { round: u32, count: usize },
}

/// Wraps an annotator and turns some of its answers into failures.
pub struct FaultInjector<A> {
    inner: A,
    plan: FaultPlan,
    name: String,
}

impl<A: Annotator> FaultInjector<A> {
    pub fn new(inner: A, plan: FaultPlan) -> Self {
        let name = format!("{}+faults", inner.name());
        FaultInjector { inner, plan, name }
    }

    fn fails(&self, index: usize, sample: &Sample, round: u32) -> bool {
        match &self.plan {
            FaultPlan::Rate { rate, seed } => {
                *rate > 0.0 && seed::rng(*seed, 0, &format!("fault/{}", sample.id)).gen::<f64>() < *rate
            }
            FaultPlan::FirstInRound { round: r, count } => *r == round && index < *count,
        }
    }
}

impl<A: Annotator> Annotator for FaultInjector<A> {
    fn name(&self) -> &str {
        &self.name
    }

    fn fidelity(&self) -> Fidelity {
        self.inner.fidelity()
    }

    fn annotate_batch(&self, samples: &[&Sample], ctx: &AnnotationContext<'_>) -> Vec<AnnotatorResult> {
        let mut out = self.inner.annotate_batch(samples, ctx);
        for (i, (r, s)) in out.iter_mut().zip(samples).enumerate() {
            if self.fails(i, s, ctx.round) {
                r.outcome = Err(AnnotateFailure::Transport { attempts: 1, last: "injected fault".into() });
            }
        }
        out
    }
}
