mod common;

use std::collections::BTreeSet;
use std::sync::atomic::Ordering;
use std::sync::Mutex;

use common::{components, config, engine, engine_with, task};
use mfl_core::annotate::{
    AnnotationContext, Annotator, AnnotatorResult, FaultInjector, FaultPlan, NoisyAnnotator, NoisyProfile,
};
use mfl_core::learner::{Learner, LearnerError, LearnerInput, LearnerKind, LearnerSnapshot, Prediction, TrainExample};
use mfl_core::model::{DataPool, Fidelity, LabelSet, Sample};
use mfl_core::orchestrator::{Checkpoint, DoneReason, Engine, RunError, RunStatus};

#[test]
fn reference_config_spends_the_decaying_schedule() {
    let t = task(3000, 1);
    let mut e = engine(config(200, 800, 5, 10), &t);
    let report = e.run().unwrap();
    let human: Vec<usize> = report.rounds.iter().map(|r| r.human).collect();
    let llm: Vec<usize> = report.rounds.iter().map(|r| r.llm).collect();
    assert_eq!(human, [100, 50, 25, 13, 12]);
    assert_eq!(llm, [160; 5]);
    assert_eq!((report.spent_human, report.spent_llm), (200, 800));
    assert_eq!(e.state().annotated.len(), 1000 + 10);
    assert_eq!(report.status, RunStatus::Done(DoneReason::BudgetExhausted));
    let k: Vec<usize> = report.rounds.iter().map(|r| r.k_clusters).collect();
    assert_eq!(k, [260, 210, 185, 173, 172]);
}

#[test]
fn llm_failures_roll_over_into_the_next_round() {
    let t = task(3000, 2);
    let cfg = config(200, 800, 5, 10);
    let mut c = components(&cfg, &t);
    let noisy = NoisyAnnotator::new(NoisyProfile { accuracy: 0.75, seed: 3 }).unwrap();
    c.low = Box::new(FaultInjector::new(noisy, FaultPlan::FirstInRound { round: 2, count: 10 }));
    let mut e = engine_with(cfg, &t, c);
    e.initialize().unwrap();
    e.run_round().unwrap();
    let r2 = e.run_round().unwrap().clone();
    assert_eq!((r2.human_committed, r2.llm_committed, r2.failed_ids.len()), (50, 150, 10));
    let ledger = &e.state().ledger;
    assert_eq!(ledger.spent_human + ledger.spent_llm, 460);
    assert_eq!(ledger.spent_llm, 310);
    assert_eq!(ledger.allocation(3).llm, 170);
    let status = e.status();
    assert_eq!((status.budgets.human_spent, status.budgets.llm_spent), (150, 310));
    // failed samples stay in the pool
    assert!(r2.failed_ids.iter().all(|id| e.pool().is_unannotated(id)));
}

#[test]
fn warm_start_leaves_the_rest_unannotated() {
    let t = task(3000, 3);
    let mut e = engine(config(200, 800, 5, 10), &t);
    e.initialize().unwrap();
    assert_eq!(e.pool().unannotated_ids().len(), 2990);
    let ws = &e.state().warmstart_ids;
    assert_eq!(ws.len(), 10);
    for id in ws {
        let a = e.state().annotated.get(id).unwrap();
        assert_eq!((a.fidelity, a.round), (Fidelity::High, 0));
    }
    assert_eq!(e.state().ledger.spent_human, 0);
    assert_eq!(e.status().budgets.human_spent, 0);
}

#[test]
fn zero_finetune_rounds_stops_after_warm_start() {
    let t = task(400, 4);
    let mut cfg = config(20, 80, 3, 5);
    cfg.budget.max_finetune_rounds = 0;
    let mut e = engine(cfg, &t);
    let report = e.run().unwrap();
    assert_eq!(report.status, RunStatus::Done(DoneReason::ComputeExhausted));
    assert!(report.rounds.is_empty());
    assert_eq!(e.state().annotated.len(), 5);
}

#[test]
fn compute_limit_below_rounds() {
    let t = task(600, 5);
    let mut cfg = config(40, 160, 5, 5);
    cfg.budget.max_finetune_rounds = 2;
    let mut e = engine(cfg, &t);
    let report = e.run().unwrap();
    assert_eq!(report.rounds.len(), 2);
    assert_eq!(report.status, RunStatus::Done(DoneReason::ComputeExhausted));
}

#[test]
fn high_annotations_precede_low_within_each_round() {
    let t = task(800, 6);
    let mut e = engine(config(60, 240, 3, 5), &t);
    e.run().unwrap();
    let annotated = &e.state().annotated;
    annotated.check_invariants().unwrap();
    for round in 1..=3 {
        let last_high = annotated.annotations().filter(|a| a.round == round && a.fidelity == Fidelity::High).map(|a| a.sequence).max();
        let first_low = annotated.annotations().filter(|a| a.round == round && a.fidelity == Fidelity::Low).map(|a| a.sequence).min();
        if let (Some(h), Some(l)) = (last_high, first_low) {
            assert!(h < l, "round {round}: high {h} after low {l}");
        }
    }
    // warm start first, rounds in order
    let seq = annotated.in_sequence_order();
    assert!(seq.windows(2).all(|w| w[0].round <= w[1].round && w[0].sequence < w[1].sequence));
}

/// Low annotator that labels by gold and records what its retriever returned.
struct Recorder {
    seen: Mutex<Vec<(u32, Vec<String>)>>,
}

impl Annotator for Recorder {
    fn name(&self) -> &str {
        "recorder"
    }

    fn fidelity(&self) -> Fidelity {
        Fidelity::Low
    }

    fn annotate_batch(&self, samples: &[&Sample], ctx: &AnnotationContext<'_>) -> Vec<AnnotatorResult> {
        let r = ctx.retriever.expect("retriever for low annotations");
        samples
            .iter()
            .map(|s| {
                let ex = r.retrieve(s).unwrap();
                assert!(ex.windows(2).all(|w| w[0].similarity >= w[1].similarity));
                self.seen.lock().unwrap().push((ctx.round, ex.into_iter().map(|e| e.sample_id).collect()));
                AnnotatorResult { sample_id: s.id.clone(), outcome: Ok(s.gold_label().unwrap().clone()) }
            })
            .collect()
    }
}

#[test]
fn retrieval_draws_only_from_human_labels_including_the_current_round() {
    use std::sync::Arc;
    struct Shared(Arc<Mutex<Vec<(u32, Vec<String>)>>>);
    impl Annotator for Shared {
        fn name(&self) -> &str {
            "shared-recorder"
        }
        fn fidelity(&self) -> Fidelity {
            Fidelity::Low
        }
        fn annotate_batch(&self, samples: &[&Sample], ctx: &AnnotationContext<'_>) -> Vec<AnnotatorResult> {
            let rec = Recorder { seen: Mutex::new(Vec::new()) };
            let out = rec.annotate_batch(samples, ctx);
            self.0.lock().unwrap().extend(rec.seen.into_inner().unwrap());
            out
        }
    }
    let t = task(800, 8);
    let cfg = config(60, 240, 3, 5);
    let log = Arc::new(Mutex::new(Vec::new()));
    let mut c = components(&cfg, &t);
    c.low = Box::new(Shared(log.clone()));
    let mut e = engine_with(cfg, &t, c);
    e.run().unwrap();
    let state = e.state();
    let log = log.lock().unwrap();
    assert_eq!(log.len(), 240);
    for round in 1..=3u32 {
        let allowed: BTreeSet<&str> = state
            .annotated
            .annotations()
            .filter(|a| a.fidelity == Fidelity::High && a.round <= round)
            .map(|a| a.sample_id.as_str())
            .collect();
        let fresh: BTreeSet<&str> = state
            .annotated
            .annotations()
            .filter(|a| a.fidelity == Fidelity::High && a.round == round)
            .map(|a| a.sample_id.as_str())
            .collect();
        let mut used_fresh = false;
        for (r, ids) in log.iter().filter(|(r, _)| *r == round) {
            assert_eq!(ids.len(), 5, "round {r}");
            for id in ids {
                assert!(allowed.contains(id.as_str()), "round {r}: {id} is not a human label yet");
                used_fresh |= fresh.contains(id.as_str());
            }
        }
        assert!(used_fresh, "round {round} never retrieved its own human labels");
    }
}

#[test]
fn resume_mid_run_replays_bit_identically() {
    let t = task(1000, 9);
    let cfg = config(100, 400, 5, 10);
    let mut full = engine(cfg.clone(), &t);
    full.run().unwrap();

    let mut part = engine(cfg.clone(), &t);
    part.initialize().unwrap();
    for _ in 0..3 {
        part.run_round().unwrap();
    }
    let bytes = part.checkpoint().unwrap();
    drop(part);
    let ckpt = Checkpoint::decode(&bytes).unwrap();
    let pool = DataPool::from_samples(t.pool.clone()).unwrap();
    let mut resumed = Engine::resume_with(ckpt, pool, t.test.clone(), components(&cfg, &t)).unwrap();
    assert_eq!(resumed.state().status, RunStatus::Running(4));
    resumed.run().unwrap();

    assert_eq!(resumed.report().to_json(), full.report().to_json());
    assert_eq!(resumed.checkpoint().unwrap(), full.checkpoint().unwrap());
}

#[test]
fn checkpoint_resume_checkpoint_is_byte_identical() {
    let t = task(500, 10);
    let cfg = config(40, 160, 4, 5);
    let mut e = engine(cfg.clone(), &t);
    e.initialize().unwrap();
    e.run_round().unwrap();
    let a = e.checkpoint().unwrap();
    let pool = DataPool::from_samples(t.pool.clone()).unwrap();
    let r = Engine::resume_with(Checkpoint::decode(&a).unwrap(), pool, t.test.clone(), components(&cfg, &t)).unwrap();
    assert_eq!(r.checkpoint().unwrap(), a);
}

#[test]
fn tampered_ledger_is_rejected() {
    let t = task(500, 11);
    let cfg = config(40, 160, 4, 5);
    let mut e = engine(cfg.clone(), &t);
    e.initialize().unwrap();
    e.run_round().unwrap();
    let mut ckpt = Checkpoint::decode(&e.checkpoint().unwrap()).unwrap();
    ckpt.state.ledger.spent_human += 3;
    let pool = DataPool::from_samples(t.pool.clone()).unwrap();
    let err = Engine::resume_with(ckpt, pool, t.test.clone(), components(&cfg, &t)).err().unwrap();
    assert!(matches!(err, RunError::Budget(_) | RunError::Integrity(_)), "{err}");
}

#[test]
fn resume_against_a_different_pool_is_rejected() {
    let t = task(500, 12);
    let cfg = config(40, 160, 4, 5);
    let mut e = engine(cfg.clone(), &t);
    e.initialize().unwrap();
    let ckpt = Checkpoint::decode(&e.checkpoint().unwrap()).unwrap();
    let mut samples = t.pool.clone();
    samples[0].text.push_str(" extra");
    let pool = DataPool::from_samples(samples).unwrap();
    let err = Engine::resume_with(ckpt, pool, t.test.clone(), components(&cfg, &t)).err().unwrap();
    assert!(matches!(err, RunError::Integrity(_)), "{err}");
}

#[test]
fn newer_checkpoint_version_is_rejected() {
    let t = task(300, 13);
    let e = engine(config(20, 80, 2, 5), &t);
    let text = String::from_utf8(e.checkpoint().unwrap()).unwrap().replacen("\"version\": 1", "\"version\": 99", 1);
    let err = Checkpoint::decode(text.as_bytes()).err().unwrap();
    assert!(matches!(err, RunError::CheckpointVersion { found: 99, .. }), "{err}");
}

#[test]
fn cold_start_runs_without_warm_start() {
    let t = task(600, 14);
    let mut cfg = config(40, 160, 3, 0);
    assert!(cfg.validate().is_err());
    cfg.allow_cold_start = true;
    let mut e = engine(cfg, &t);
    let report = e.run().unwrap();
    assert_eq!(report.warmstart, 0);
    assert_eq!(e.state().annotated.len(), 200);
    assert!(report.final_metrics.is_some());
}

#[test]
fn round_with_every_annotation_failing_is_a_no_op() {
    let t = task(500, 15);
    let cfg = config(0, 120, 3, 5);
    let mut c = components(&cfg, &t);
    let noisy = NoisyAnnotator::new(NoisyProfile { accuracy: 0.75, seed: 3 }).unwrap();
    c.low = Box::new(FaultInjector::new(noisy, FaultPlan::FirstInRound { round: 1, count: 1000 }));
    let mut e = engine_with(cfg, &t, c);
    e.initialize().unwrap();
    let before = e.state().learner.clone();
    let r1 = e.run_round().unwrap().clone();
    assert_eq!((r1.human_committed, r1.llm_committed, r1.failed_ids.len()), (0, 0, 40));
    // nothing annotated, nothing tuned
    assert_eq!(e.state().learner, before);
    assert_eq!(e.state().ledger.allocation(2).llm, 80);
    assert_eq!(e.pool().unannotated_ids().len(), 495);
    e.run().unwrap();
    // the last round's carry is lost
    assert_eq!(e.state().ledger.spent_llm, 80 + 40);
}

#[test]
fn stop_flag_ends_the_run_at_a_round_boundary() {
    let t = task(500, 16);
    let mut e = engine(config(40, 160, 4, 5), &t);
    e.initialize().unwrap();
    e.run_round().unwrap();
    e.stop_handle().store(true, Ordering::SeqCst);
    let report = e.run().unwrap();
    assert_eq!(report.status, RunStatus::Done(DoneReason::Stopped));
    assert_eq!(report.rounds.len(), 1);
    e.stop_now().unwrap();
    assert_eq!(e.state().status, RunStatus::Done(DoneReason::Stopped));
    assert!(e.run_round().is_err());
}

#[test]
fn shortfall_shrinks_the_plan_instead_of_failing() {
    let t = task(120, 17);
    let mut e = engine(config(40, 160, 3, 5), &t);
    let report = e.run().unwrap();
    // round 2 wants 63 samples but only 42 remain
    assert_eq!(report.rounds.len(), 2);
    assert_eq!((report.rounds[1].human, report.rounds[1].llm), (10, 32));
    assert_eq!(e.pool().unannotated_ids().len(), 0);
    assert_eq!(report.status, RunStatus::Done(DoneReason::PoolExhausted));
    assert_eq!(e.state().annotated.len(), 120);
}

/// Reference learner that fails to tune in one chosen round.
struct Flaky {
    inner: Box<dyn Learner>,
    fail_round: u32,
}

impl Learner for Flaky {
    fn name(&self) -> &str {
        self.inner.name()
    }
    fn kind(&self) -> LearnerKind {
        self.inner.kind()
    }
    fn labels(&self) -> &LabelSet {
        self.inner.labels()
    }
    fn init_tune(&mut self, batch: &[TrainExample<'_>]) -> Result<LearnerSnapshot, LearnerError> {
        self.inner.init_tune(batch)
    }
    fn round_tune(&mut self, round: u32, high: &[TrainExample<'_>], low: &[TrainExample<'_>]) -> Result<LearnerSnapshot, LearnerError> {
        let snap = self.inner.round_tune(round, high, low)?;
        if round == self.fail_round {
            self.fail_round = u32::MAX;
            return Err(LearnerError::External("trainer crashed".into()));
        }
        Ok(snap)
    }
    fn predict(&self, input: &LearnerInput<'_>) -> Result<Prediction, LearnerError> {
        self.inner.predict(input)
    }
    fn snapshot(&self) -> LearnerSnapshot {
        self.inner.snapshot()
    }
    fn restore(&mut self, snapshot: &LearnerSnapshot) -> Result<(), LearnerError> {
        self.inner.restore(snapshot)
    }
}

#[test]
fn failed_round_rolls_back_and_can_be_retried() {
    let t = task(600, 18);
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(40, 160, 3, 5);
    cfg.run_dir = Some(dir.path().join("run"));
    let mut c = components(&cfg, &t);
    c.learner = Box::new(Flaky { inner: c.learner, fail_round: 2 });
    let mut e = engine_with(cfg.clone(), &t, c);
    e.initialize().unwrap();
    e.run_round().unwrap();
    let before = e.checkpoint().unwrap();
    let err = e.run_round().err().unwrap();
    assert!(err.to_string().contains("trainer crashed"), "{err}");
    assert_eq!(e.checkpoint().unwrap(), before);
    assert!(e.status_board().get().unwrap().error.unwrap().contains("trainer crashed"));
    let rd = mfl_core::orchestrator::RunDir::open(&dir.path().join("run")).unwrap();
    assert!(rd.checkpoint_path("aborted-round-2").exists());
    assert_eq!(rd.read_annotations().unwrap().len(), e.state().annotated.len());

    // the retry matches a run that never failed
    let mut clean = engine(cfg_without_dir(&cfg), &t);
    clean.run().unwrap();
    e.run().unwrap();
    assert_eq!(e.report().to_json(), clean.report().to_json());
}

fn cfg_without_dir(cfg: &mfl_core::orchestrator::RunConfig) -> mfl_core::orchestrator::RunConfig {
    let mut c = cfg.clone();
    c.run_dir = None;
    c
}
