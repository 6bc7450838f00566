use serde::{Deserialize, Serialize};

use super::QueryError;
use crate::learner::Prediction;

const DIST_TOL: f64 = 1e-9;

/// How an uncertainty score was computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UncertaintyBasis {
    MeanTokenLogProb,
    LeastConfidence,
    Entropy,
    Margin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyScore {
    pub sample_id: String,
    pub score: f64,
    pub basis: UncertaintyBasis,
}

/// Negated mean token log-probability; higher means more uncertain.
pub fn mean_logprob_uncertainty(token_logprobs: &[f64]) -> Result<f64, QueryError> {
    if token_logprobs.is_empty() {
        return Err(QueryError::EmptyLogprobs);
    }
    if let Some(bad) = token_logprobs.iter().find(|lp| !lp.is_finite() || **lp > 0.0) {
        return Err(QueryError::InvalidLogprob(*bad));
    }
    let mean = token_logprobs.iter().sum::<f64>() / token_logprobs.len() as f64;
    Ok(-mean)
}

fn check_distribution(p: &[f64]) -> Result<(), QueryError> {
    let sum: f64 = p.iter().sum();
    if p.is_empty() || p.iter().any(|x| !x.is_finite() || *x < 0.0) || (sum - 1.0).abs() > DIST_TOL {
        return Err(QueryError::InvalidDistribution(sum));
    }
    Ok(())
}

/// `1 - max_y p(y)`.
pub fn least_confidence(p: &[f64]) -> Result<f64, QueryError> {
    check_distribution(p)?;
    Ok(1.0 - p.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

/// Shannon entropy in nats.
pub fn entropy(p: &[f64]) -> Result<f64, QueryError> {
    check_distribution(p)?;
    Ok(-p.iter().filter(|x| **x > 0.0).map(|x| x * x.ln()).sum::<f64>())
}

/// `1 - (p_first - p_second)`; a single-class distribution has margin 1.
pub fn breaking_ties(p: &[f64]) -> Result<f64, QueryError> {
    check_distribution(p)?;
    let mut sorted = p.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let second = sorted.get(1).copied().unwrap_or(0.0);
    Ok(1.0 - (sorted[0] - second))
}

pub fn score(pred: &Prediction, basis: UncertaintyBasis) -> Result<f64, QueryError> {
    match basis {
        UncertaintyBasis::MeanTokenLogProb => {
            let lps = pred.token_logprobs.as_deref().ok_or(QueryError::EmptyLogprobs)?;
            mean_logprob_uncertainty(lps)
        }
        UncertaintyBasis::LeastConfidence => least_confidence(&pred.probs),
        UncertaintyBasis::Entropy => entropy(&pred.probs),
        UncertaintyBasis::Margin => breaking_ties(&pred.probs),
    }
}
