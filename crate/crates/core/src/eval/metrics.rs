use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::model::{Label, LabelSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Metric {
    Accuracy,
    MacroF1,
    WeightedF1,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Accuracy, Metric::MacroF1, Metric::WeightedF1];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::MacroF1 => "macro_f1",
            Metric::WeightedF1 => "weighted_f1",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub weighted_f1: f64,
}

impl Scores {
    pub fn get(&self, m: Metric) -> f64 {
        match m {
            Metric::Accuracy => self.accuracy,
            Metric::MacroF1 => self.macro_f1,
            Metric::WeightedF1 => self.weighted_f1,
        }
    }

    pub fn from_fn(mut f: impl FnMut(Metric) -> f64) -> Self {
        Scores { accuracy: f(Metric::Accuracy), macro_f1: f(Metric::MacroF1), weighted_f1: f(Metric::WeightedF1) }
    }
}

struct ClassCounts {
    tp: usize,
    fp: usize,
    fn_: usize,
}

impl ClassCounts {
    fn support(&self) -> usize {
        self.tp + self.fn_
    }

    /// `None` for a class absent from both gold and predictions.
    fn f1(&self) -> Option<f64> {
        let denom = 2 * self.tp + self.fp + self.fn_;
        (denom > 0).then(|| 2.0 * self.tp as f64 / denom as f64)
    }
}

fn counts(preds: &[Label], golds: &[Label], labels: &LabelSet) -> Result<Vec<ClassCounts>, EvalError> {
    if preds.len() != golds.len() {
        return Err(EvalError::LengthMismatch { predictions: preds.len(), golds: golds.len() });
    }
    if preds.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut c: Vec<ClassCounts> = (0..labels.len()).map(|_| ClassCounts { tp: 0, fp: 0, fn_: 0 }).collect();
    let index = |l: &Label| labels.index_of(l).ok_or_else(|| EvalError::UnknownLabel(l.0.clone()));
    for (p, g) in preds.iter().zip(golds) {
        let (pi, gi) = (index(p)?, index(g)?);
        if pi == gi {
            c[pi].tp += 1;
        } else {
            c[pi].fp += 1;
            c[gi].fn_ += 1;
        }
    }
    Ok(c)
}

/// Accuracy, macro F1 over classes present in gold or predictions, and
/// support-weighted F1.
pub fn score_all(preds: &[Label], golds: &[Label], labels: &LabelSet) -> Result<Scores, EvalError> {
    let c = counts(preds, golds, labels)?;
    let n = preds.len() as f64;
    let accuracy = c.iter().map(|k| k.tp).sum::<usize>() as f64 / n;
    let present: Vec<f64> = c.iter().filter_map(ClassCounts::f1).collect();
    let macro_f1 = present.iter().sum::<f64>() / present.len() as f64;
    let weighted_f1 = c.iter().map(|k| k.support() as f64 * k.f1().unwrap_or(0.0)).sum::<f64>() / n;
    Ok(Scores { accuracy, macro_f1, weighted_f1 })
}

pub fn score(preds: &[Label], golds: &[Label], labels: &LabelSet, metric: Metric) -> Result<f64, EvalError> {
    Ok(score_all(preds, golds, labels)?.get(metric))
}
