use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::engine::{RunState, RunStatus};
use crate::budget::BudgetConfig;
use crate::eval::Scores;
use crate::model::Fidelity;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: u32,
    pub candidates: usize,
    pub k_clusters: usize,
    pub human: usize,
    pub llm: usize,
    pub failed: usize,
    pub snapshot: String,
    pub metrics: Option<Scores>,
}

/// Final run summary. Contains no paths or timestamps, so identical runs
/// produce identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub strategy: String,
    pub seed: u64,
    pub budget: BudgetConfig,
    pub status: RunStatus,
    pub spent_human: u64,
    pub spent_llm: u64,
    pub warmstart: usize,
    pub annotated_human: usize,
    pub annotated_llm: usize,
    pub rounds: Vec<RoundReport>,
    pub warmstart_metrics: Option<Scores>,
    pub final_metrics: Option<Scores>,
    pub final_snapshot: Option<String>,
    /// Hash over every annotation in sequence order.
    pub annotations_digest: String,
}

impl RunReport {
    pub fn from_state(state: &RunState) -> Self {
        let mut h = Sha256::new();
        for a in state.annotated.in_sequence_order() {
            h.update(format!("{}\t{}\t{}\t{}\t{}\t{}\n", a.sequence, a.sample_id, a.label, a.fidelity, a.round, a.source).as_bytes());
        }
        let digest = h.finalize().iter().map(|b| format!("{b:02x}")).collect();
        let count = |f: Fidelity| state.annotated.annotations().filter(|a| a.fidelity == f).count();
        RunReport {
            strategy: state.config.strategy.to_string(),
            seed: state.config.seed,
            budget: state.config.budget.clone(),
            status: state.status,
            spent_human: state.ledger.spent_human,
            spent_llm: state.ledger.spent_llm,
            warmstart: state.warmstart_ids.len(),
            annotated_human: count(Fidelity::High),
            annotated_llm: count(Fidelity::Low),
            rounds: state
                .rounds
                .iter()
                .map(|r| RoundReport {
                    round: r.round,
                    candidates: r.candidate_ids.len(),
                    k_clusters: r.plan.k_clusters,
                    human: r.human_committed,
                    llm: r.llm_committed,
                    failed: r.failed_ids.len(),
                    snapshot: r.learner_snapshot_id.clone(),
                    metrics: state.metrics.get(&r.round).copied(),
                })
                .collect(),
            warmstart_metrics: state.metrics.get(&0).copied(),
            final_metrics: state.metrics.values().next_back().copied(),
            final_snapshot: state.learner.as_ref().map(|s| s.id.clone()),
            annotations_digest: digest,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{:.2}", 100.0 * x))
}

/// Plain-text rendering of one run: a per-round table plus totals.
pub fn render_text(r: &RunReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "strategy {}  seed {}  status {:?}", r.strategy, r.seed, r.status);
    let _ = writeln!(
        s,
        "budget B={} B_H={} B_G={} R={}  warm start {}",
        r.budget.total, r.budget.human, r.budget.llm, r.budget.rounds, r.warmstart
    );
    let _ = writeln!(s, "{:>5} {:>10} {:>6} {:>6} {:>6} {:>7} {:>9} {:>9} {:>11}", "round", "candidates", "k", "human", "llm", "failed", "accuracy", "macro-F1", "weighted-F1");
    if let Some(m) = r.warmstart_metrics {
        let _ = writeln!(
            s,
            "{:>5} {:>10} {:>6} {:>6} {:>6} {:>7} {:>9} {:>9} {:>11}",
            0, "-", "-", r.warmstart, 0, 0, pct(Some(m.accuracy)), pct(Some(m.macro_f1)), pct(Some(m.weighted_f1))
        );
    }
    for row in &r.rounds {
        let m = row.metrics;
        let _ = writeln!(
            s,
            "{:>5} {:>10} {:>6} {:>6} {:>6} {:>7} {:>9} {:>9} {:>11}",
            row.round,
            row.candidates,
            row.k_clusters,
            row.human,
            row.llm,
            row.failed,
            pct(m.map(|m| m.accuracy)),
            pct(m.map(|m| m.macro_f1)),
            pct(m.map(|m| m.weighted_f1))
        );
    }
    let _ = writeln!(s, "spent human {} llm {} (annotated {} high, {} low)", r.spent_human, r.spent_llm, r.annotated_human, r.annotated_llm);
    s
}
