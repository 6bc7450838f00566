use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

use log::{info, warn};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::components::{resolve_labels, Components};
use super::config::RunConfig;
use super::persist::{pool_digest, Checkpoint, RunDir, CHECKPOINT_VERSION};
use super::report::RunReport;
use super::RunError;
use crate::annotate::{AnnotateFailure, AnnotationContext, Annotator, ContextExample, ContextRetriever};
use crate::budget::{should_terminate, BudgetLedger, RoundBudget, Termination};
use crate::embed::{retrieve_prompt_examples, EmbedError, EmbeddingStore, RetrievalParams};
use crate::eval::{score_all, Scores};
use crate::learner::{LearnerInput, LearnerSnapshot, Prediction, TrainExample};
use crate::model::{
    commit_annotations, load_pool, AnnotatedSet, Annotation, DataPool, Fidelity, LabelSet, NewAnnotation, PoolFormat,
    RoundState, Sample,
};
use crate::query::{plan_round, Predictor, QueryError, QueryPlan, UncertaintyBasis};
use crate::seed;

/// Pool cap applied when `subsample_size` is not configured.
pub const DEFAULT_SUBSAMPLE_CAP: usize = 3000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DoneReason {
    BudgetExhausted,
    ComputeExhausted,
    RoundsCompleted,
    PoolExhausted,
    Stopped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunStatus {
    Init,
    /// Next round to run.
    Running(u32),
    Done(DoneReason),
}

/// What the loop is doing right now, for status readers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Init,
    Warmstart,
    Planning,
    HumanAnnotation,
    LlmAnnotation,
    Tuning,
    Idle,
    Done,
}

/// Serializable run state; together with the pool it determines the rest of the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub config: RunConfig,
    pub labels: LabelSet,
    pub ledger: BudgetLedger,
    pub annotated: AnnotatedSet,
    pub rounds: Vec<RoundState>,
    pub status: RunStatus,
    pub learner: Option<LearnerSnapshot>,
    pub warmstart_ids: Vec<String>,
    /// Test-set scores keyed by round (0 = after the warm start).
    pub metrics: BTreeMap<u32, Scores>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetStatus {
    pub total: u64,
    pub human_allocated: u64,
    pub llm_allocated: u64,
    /// Committed annotations by fidelity, excluding the warm start.
    pub human_spent: u64,
    pub llm_spent: u64,
    pub round_allocation: Option<RoundBudget>,
}

/// One consistent read of a run, published at every phase change and commit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusSnapshot {
    pub round: u32,
    pub status: RunStatus,
    pub phase: Phase,
    pub budgets: BudgetStatus,
    pub annotations: usize,
    pub warmstart: usize,
    pub metrics: Option<Scores>,
    pub error: Option<String>,
}

#[derive(Debug, Default)]
pub struct StatusBoard {
    inner: Mutex<Option<StatusSnapshot>>,
}

impl StatusBoard {
    pub fn get(&self) -> Option<StatusSnapshot> {
        self.inner.lock().expect("status poisoned").clone()
    }

    fn set(&self, s: StatusSnapshot) {
        *self.inner.lock().expect("status poisoned") = Some(s);
    }

    pub fn set_error(&self, e: &str) {
        if let Some(s) = self.inner.lock().expect("status poisoned").as_mut() {
            s.error = Some(e.to_string());
        }
    }
}

/// Loads the pool and optional test set named in the config and resolves the label set.
pub fn load_inputs(config: &RunConfig) -> Result<(DataPool, Vec<Sample>, LabelSet), RunError> {
    let read = |path: &Path| {
        let fmt = config.pool_format.unwrap_or_else(|| PoolFormat::from_path(path));
        load_pool(path, fmt).map_err(|source| RunError::Pool { path: path.display().to_string(), source })
    };
    let pool = read(&config.pool)?;
    let test: Vec<Sample> = match &config.test {
        Some(p) => read(p)?.samples().cloned().collect(),
        None => Vec::new(),
    };
    let labels = resolve_labels(config, &pool)?;
    for s in &test {
        if pool.get(&s.id).is_some() {
            return Err(RunError::Integrity(format!("test sample {:?} also appears in the pool", s.id)));
        }
    }
    Ok((pool, test, labels))
}

/// Precomputed predictions for the round's candidates.
struct CachedPredictor {
    preds: BTreeMap<String, Prediction>,
    basis: UncertaintyBasis,
}

impl Predictor for CachedPredictor {
    fn predict(&self, id: &str) -> Result<Prediction, QueryError> {
        self.preds.get(id).cloned().ok_or_else(|| QueryError::Predict { id: id.into(), reason: "not a candidate".into() })
    }

    fn basis(&self) -> UncertaintyBasis {
        self.basis
    }
}

/// Retrieval over the human-annotated set as it stands when constructed.
struct PoolRetriever<'a> {
    store: &'a EmbeddingStore,
    pool: &'a DataPool,
    annotated: &'a AnnotatedSet,
    params: RetrievalParams,
}

impl ContextRetriever for PoolRetriever<'_> {
    fn retrieve(&self, sample: &Sample) -> Result<Vec<ContextExample>, EmbedError> {
        let q = self.store.get(&sample.id)?;
        let found = retrieve_prompt_examples(self.store, &sample.id, q, self.annotated, &self.params)?;
        Ok(found
            .into_iter()
            .map(|r| ContextExample {
                text: self.pool.get(&r.sample_id).map(|s| s.text.clone()).unwrap_or_default(),
                sample_id: r.sample_id,
                label: r.label,
                similarity: r.similarity,
            })
            .collect())
    }
}

fn learner_input<'a>(pool: &'a DataPool, store: &'a EmbeddingStore, id: &'a str) -> Result<LearnerInput<'a>, RunError> {
    let sample = pool.get(id).ok_or_else(|| RunError::Integrity(format!("unknown sample {id:?}")))?;
    Ok(LearnerInput { id, text: &sample.text, features: store.get(id)?.as_slice() })
}

pub struct Engine {
    state: RunState,
    pool: DataPool,
    test: Vec<Sample>,
    store: EmbeddingStore,
    components: Components,
    run_dir: Option<RunDir>,
    board: Arc<StatusBoard>,
    stop: Arc<AtomicBool>,
    phase: Phase,
}

impl Engine {
    /// Loads inputs and builds the configured components.
    pub fn from_config(config: RunConfig, queue: Option<Arc<crate::annotate::HumanQueue>>) -> Result<Self, RunError> {
        config.validate()?;
        let (pool, test, labels) = load_inputs(&config)?;
        let components = Components::from_config(&config, &labels, queue)?;
        Self::new(config, labels, pool, test, components)
    }

    /// A fresh run over an in-memory pool.
    pub fn new(config: RunConfig, labels: LabelSet, pool: DataPool, test: Vec<Sample>, components: Components) -> Result<Self, RunError> {
        config.validate()?;
        pool.validate_labels(&labels)?;
        if config.budget.warmstart as usize > pool.len() {
            return Err(RunError::Config(super::ConfigError {
                key: "warmstart".into(),
                reason: format!("{} exceeds the pool size {}", config.budget.warmstart, pool.len()),
            }));
        }
        let store = Self::build_store(&components, &pool, &test)?;
        let ledger = BudgetLedger::new(config.budget.clone())?;
        let run_dir = match &config.run_dir {
            Some(d) => Some(RunDir::create(d, &config)?),
            None => None,
        };
        let state = RunState {
            config,
            labels,
            ledger,
            annotated: AnnotatedSet::new(),
            rounds: Vec::new(),
            status: RunStatus::Init,
            learner: None,
            warmstart_ids: Vec::new(),
            metrics: BTreeMap::new(),
        };
        let engine = Engine {
            state,
            pool,
            test,
            store,
            components,
            run_dir,
            board: Arc::new(StatusBoard::default()),
            stop: Arc::new(AtomicBool::new(false)),
            phase: Phase::Init,
        };
        engine.publish();
        Ok(engine)
    }

    fn build_store(components: &Components, pool: &DataPool, test: &[Sample]) -> Result<EmbeddingStore, RunError> {
        let enc = components.encoder.as_ref();
        let mut store = EmbeddingStore::build(enc, pool)?;
        if !test.is_empty() {
            let items: Vec<(&str, &str)> = test.iter().map(|s| (s.id.as_str(), s.text.as_str())).collect();
            for (s, v) in test.iter().zip(enc.encode_batch(&items)?) {
                store.insert(&s.id, v)?;
            }
        }
        Ok(store)
    }

    /// Resumes from a checkpoint file, reloading the pool named in its config.
    pub fn resume(path: &Path, queue: Option<Arc<crate::annotate::HumanQueue>>) -> Result<Self, RunError> {
        let bytes = std::fs::read(path).map_err(|e| RunError::io(path, e))?;
        let ckpt = Checkpoint::decode(&bytes)?;
        let config = ckpt.state.config.clone();
        if !config.pool.exists() {
            return Err(RunError::io(&config.pool, "pool file not found"));
        }
        let (pool, test, labels) = load_inputs(&config)?;
        let components = Components::from_config(&config, &labels, queue)?;
        Self::resume_with(ckpt, pool, test, components)
    }

    /// Resumes from a decoded checkpoint over a caller-supplied pool.
    pub fn resume_with(ckpt: Checkpoint, mut pool: DataPool, test: Vec<Sample>, mut components: Components) -> Result<Self, RunError> {
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(RunError::CheckpointVersion { found: ckpt.version, expected: CHECKPOINT_VERSION });
        }
        let digest = pool_digest(&pool);
        if digest != ckpt.pool_digest {
            return Err(RunError::Integrity(format!("pool digest {digest} differs from the checkpoint's {}", ckpt.pool_digest)));
        }
        let state = ckpt.state;
        state.ledger.check_integrity()?;
        state.annotated.check_invariants().map_err(RunError::Integrity)?;
        if state.rounds.len() as u32 != state.ledger.rounds_run {
            return Err(RunError::Integrity(format!(
                "{} round records but the ledger counts {} rounds",
                state.rounds.len(),
                state.ledger.rounds_run
            )));
        }
        let (mut high, mut low) = (0u64, 0u64);
        for a in state.annotated.annotations() {
            match (a.fidelity, a.round) {
                (Fidelity::High, 0) => {}
                (Fidelity::High, _) => high += 1,
                (Fidelity::Low, _) => low += 1,
            }
        }
        if (high, low) != (state.ledger.spent_human, state.ledger.spent_llm) {
            return Err(RunError::Integrity(format!(
                "ledger records {} human and {} llm annotations but the log holds {high} and {low}",
                state.ledger.spent_human, state.ledger.spent_llm
            )));
        }
        let mut keep: BTreeSet<String> = pool.unannotated_ids().iter().cloned().collect();
        for a in state.annotated.annotations() {
            if !keep.remove(&a.sample_id) {
                return Err(RunError::Integrity(format!("annotated sample {:?} is not in the pool", a.sample_id)));
            }
        }
        pool.retain_unannotated(&keep);
        if let Some(snap) = &state.learner {
            components.learner.restore(snap)?;
        }
        let store = Self::build_store(&components, &pool, &test)?;
        let run_dir = match &state.config.run_dir {
            Some(d) => {
                let rd = RunDir::open(d)?;
                rd.truncate_annotations(state.annotated.len())?;
                Some(rd)
            }
            None => None,
        };
        let engine = Engine {
            state,
            pool,
            test,
            store,
            components,
            run_dir,
            board: Arc::new(StatusBoard::default()),
            stop: Arc::new(AtomicBool::new(false)),
            phase: Phase::Idle,
        };
        engine.publish();
        Ok(engine)
    }

    pub fn state(&self) -> &RunState {
        &self.state
    }

    pub fn pool(&self) -> &DataPool {
        &self.pool
    }

    pub fn store(&self) -> &EmbeddingStore {
        &self.store
    }

    pub fn components(&self) -> &Components {
        &self.components
    }

    pub fn status_board(&self) -> Arc<StatusBoard> {
        self.board.clone()
    }

    /// Setting the flag stops the run at the next round boundary. A round
    /// still waiting on human answers is discarded.
    pub fn stop_handle(&self) -> Arc<AtomicBool> {
        self.stop.clone()
    }

    pub fn status(&self) -> StatusSnapshot {
        let cfg = &self.state.config.budget;
        let mut human_spent = 0;
        let mut llm_spent = 0;
        for a in self.state.annotated.annotations() {
            match (a.fidelity, a.round) {
                (Fidelity::High, 0) => {}
                (Fidelity::High, _) => human_spent += 1,
                (Fidelity::Low, _) => llm_spent += 1,
            }
        }
        let round = match self.state.status {
            RunStatus::Running(r) => r,
            _ => self.state.ledger.rounds_run,
        };
        let round_allocation = match self.state.status {
            RunStatus::Running(r) => Some(self.state.ledger.allocation(r)),
            _ => None,
        };
        StatusSnapshot {
            round,
            status: self.state.status,
            phase: self.phase,
            budgets: BudgetStatus {
                total: cfg.total,
                human_allocated: cfg.human,
                llm_allocated: cfg.llm,
                human_spent,
                llm_spent,
                round_allocation,
            },
            annotations: self.state.annotated.len(),
            warmstart: self.state.warmstart_ids.len(),
            metrics: self.state.metrics.values().next_back().copied(),
            error: None,
        }
    }

    fn publish(&self) {
        self.board.set(self.status());
    }

    fn set_phase(&mut self, phase: Phase) {
        self.phase = phase;
        self.publish();
    }

    fn input<'a>(&'a self, id: &'a str) -> Result<LearnerInput<'a>, RunError> {
        learner_input(&self.pool, &self.store, id)
    }

    fn commit(&mut self, batch: Vec<NewAnnotation>) -> Result<Vec<Annotation>, RunError> {
        let committed = commit_annotations(&mut self.pool, &mut self.state.annotated, &self.state.labels, batch)?;
        if let Some(rd) = &self.run_dir {
            rd.append_annotations(&committed)?;
        }
        self.publish();
        Ok(committed)
    }

    fn evaluate(&mut self, round: u32) -> Result<(), RunError> {
        if self.test.is_empty() || self.test.iter().any(|s| !s.has_gold()) {
            return Ok(());
        }
        let inputs: Vec<LearnerInput<'_>> = self
            .test
            .iter()
            .map(|s| Ok(LearnerInput { id: &s.id, text: &s.text, features: self.store.get(&s.id)?.as_slice() }))
            .collect::<Result<_, RunError>>()?;
        let preds = self.components.learner.predict_batch(&inputs)?;
        let labels = &self.state.labels;
        let predicted: Vec<_> = preds.iter().map(|p| labels.get(p.argmax()).expect("label index").clone()).collect();
        let golds: Vec<_> = self.test.iter().map(|s| s.gold_label().expect("checked").clone()).collect();
        let scores = score_all(&predicted, &golds, labels).map_err(|e| RunError::State(e.to_string()))?;
        self.state.metrics.insert(round, scores);
        Ok(())
    }

    /// Draws and annotates the warm-start set, then init-tunes the learner.
    pub fn initialize(&mut self) -> Result<(), RunError> {
        if self.state.status != RunStatus::Init {
            return Err(RunError::State("already initialized".into()));
        }
        self.set_phase(Phase::Warmstart);
        let n = self.state.config.budget.warmstart as usize;
        let mut ids: Vec<String> = self.pool.unannotated_ids().to_vec();
        ids.shuffle(&mut seed::rng(self.state.config.seed, 0, "warmstart"));
        ids.truncate(n);
        ids.sort();
        if !ids.is_empty() {
            let samples: Vec<&Sample> = ids.iter().map(|id| self.pool.get(id).expect("pool id")).collect();
            let none = BTreeMap::new();
            let ctx = AnnotationContext { round: 0, labels: &self.state.labels, retriever: None, uncertainty: &none };
            let results = self.components.high.annotate_batch(&samples, &ctx);
            if self.stop.load(Ordering::SeqCst) {
                return self.stop_now();
            }
            let mut batch = Vec::with_capacity(results.len());
            for r in results {
                match r.outcome {
                    Ok(label) => batch.push(NewAnnotation {
                        sample_id: r.sample_id,
                        label,
                        fidelity: Fidelity::High,
                        source: self.components.high.name().to_string(),
                        round: 0,
                    }),
                    Err(e) => return Err(RunError::Warmstart(format!("sample {:?}: {e}", r.sample_id))),
                }
            }
            self.commit(batch)?;
            let committed: Vec<(String, crate::model::Label)> =
                ids.iter().map(|id| (id.clone(), self.state.annotated.get(id).expect("committed").label.clone())).collect();
            let examples: Vec<TrainExample<'_>> = committed
                .iter()
                .map(|(id, label)| Ok(TrainExample { input: learner_input(&self.pool, &self.store, id)?, label }))
                .collect::<Result<_, RunError>>()?;
            let snap = self.components.learner.init_tune(&examples)?;
            self.state.learner = Some(snap);
        } else {
            info!("cold start: no warm-start set, learner keeps its initial parameters");
            self.state.learner = Some(self.components.learner.snapshot());
        }
        self.state.ledger.warmstart_spent = ids.len() as u64;
        self.state.warmstart_ids = ids;
        self.evaluate(0)?;
        self.state.status = RunStatus::Running(1);
        self.after_round(0)?;
        Ok(())
    }

    fn after_round(&mut self, round: u32) -> Result<(), RunError> {
        self.update_status();
        if let Some(rd) = &self.run_dir {
            rd.write_checkpoint(&format!("round-{round}"), &self.checkpoint()?)?;
            if matches!(self.state.status, RunStatus::Done(_)) {
                rd.write_report(&self.report())?;
            }
        }
        let phase = if matches!(self.state.status, RunStatus::Done(_)) { Phase::Done } else { Phase::Idle };
        self.set_phase(phase);
        Ok(())
    }

    /// Moves `Running` to `Done` when a termination criterion holds.
    fn update_status(&mut self) {
        let RunStatus::Running(next) = self.state.status else {
            return;
        };
        let reason = match should_terminate(&self.state.ledger) {
            Termination::BudgetExhausted => Some(DoneReason::BudgetExhausted),
            Termination::ComputeExhausted => Some(DoneReason::ComputeExhausted),
            Termination::Continue if next > self.state.config.budget.rounds => Some(DoneReason::RoundsCompleted),
            Termination::Continue if self.pool.unannotated_ids().is_empty() => Some(DoneReason::PoolExhausted),
            Termination::Continue => None,
        };
        if let Some(r) = reason {
            info!("run finished: {r:?}");
            self.state.status = RunStatus::Done(r);
        }
    }

    fn subsample(&self, round: u32) -> Vec<String> {
        let unannotated = self.pool.unannotated_ids();
        let cap = self.state.config.subsample_size.unwrap_or(DEFAULT_SUBSAMPLE_CAP);
        let mut ids = unannotated.to_vec();
        if ids.len() > cap {
            ids.shuffle(&mut seed::rng(self.state.config.seed, round, "subsample"));
            ids.truncate(cap);
        }
        ids.sort();
        ids
    }

    fn plan(&self, round: u32, candidates: &[String]) -> Result<QueryPlan, RunError> {
        let alloc = self.state.ledger.allocation(round);
        let n = candidates.len() as u64;
        let budget = if alloc.total() > n {
            let human = alloc.human.min(n);
            let llm = alloc.llm.min(n - human);
            warn!("round {round}: {n} candidates for an allocation of {}; shrinking to {human} + {llm}", alloc.total());
            RoundBudget { human, llm }
        } else {
            alloc
        };
        let inputs: Vec<LearnerInput<'_>> = candidates.iter().map(|id| self.input(id)).collect::<Result<_, _>>()?;
        let preds = self.components.learner.predict_batch(&inputs)?;
        let predictor = CachedPredictor {
            preds: candidates.iter().cloned().zip(preds).collect(),
            basis: self.components.learner.kind().uncertainty_basis(),
        };
        let points: Vec<(&str, &crate::embed::Embedding)> =
            candidates.iter().map(|id| Ok((id.as_str(), self.store.get(id)?))).collect::<Result<_, RunError>>()?;
        let plan = plan_round(
            self.state.config.strategy,
            &points,
            &predictor,
            budget,
            round,
            seed::derive(self.state.config.seed, round, "plan"),
        )?;
        Ok(plan)
    }

    fn annotate(
        &mut self,
        round: u32,
        fidelity: Fidelity,
        ids: &[String],
        uncertainty: &BTreeMap<String, f64>,
        failed: &mut Vec<String>,
    ) -> Result<usize, RunError> {
        if ids.is_empty() {
            return Ok(0);
        }
        let c = &self.state.config;
        let params = RetrievalParams {
            neighbors: c.retrieval_neighbors,
            shots: c.retrieval_shots,
            mode: c.retrieval_mode,
            seed: seed::derive(c.seed, round, "retrieval"),
        };
        let retriever = PoolRetriever { store: &self.store, pool: &self.pool, annotated: &self.state.annotated, params };
        let samples: Vec<&Sample> = ids.iter().map(|id| self.pool.get(id).expect("candidate in pool")).collect();
        let ctx = AnnotationContext { round, labels: &self.state.labels, retriever: Some(&retriever), uncertainty };
        let annotator: &dyn Annotator = match fidelity {
            Fidelity::High => self.components.high.as_ref(),
            Fidelity::Low => self.components.low.as_ref(),
        };
        let source = annotator.name().to_string();
        let mut results = annotator.annotate_batch(&samples, &ctx);
        results.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
        let mut batch = Vec::new();
        for r in results {
            match r.outcome {
                Ok(label) if self.state.labels.contains(&label) => batch.push(NewAnnotation {
                    sample_id: r.sample_id,
                    label,
                    fidelity,
                    source: source.clone(),
                    round,
                }),
                Ok(label) => {
                    warn!("round {round}: {fidelity} annotator returned unknown label {label} for {:?}", r.sample_id);
                    failed.push(r.sample_id);
                }
                Err(AnnotateFailure::MissingGold(id)) => {
                    warn!("round {round}: sample {id:?} has no gold label");
                    failed.push(id);
                }
                Err(e) => {
                    warn!("round {round}: {fidelity} annotation of {:?} failed: {e}", r.sample_id);
                    failed.push(r.sample_id);
                }
            }
        }
        Ok(self.commit(batch)?.len())
    }

    fn tune(&mut self, round: u32) -> Result<(), RunError> {
        let cumulative = self.state.config.tune_on_cumulative;
        let mut high = Vec::new();
        let mut low = Vec::new();
        for a in self.state.annotated.annotations() {
            if cumulative || a.round == round {
                match a.fidelity {
                    Fidelity::High => high.push((a.sample_id.clone(), a.label.clone())),
                    Fidelity::Low => low.push((a.sample_id.clone(), a.label.clone())),
                }
            }
        }
        if high.is_empty() && low.is_empty() {
            warn!("round {round}: nothing annotated, skipping tuning");
            return Ok(());
        }
        fn examples<'a>(pool: &'a DataPool, store: &'a EmbeddingStore, v: &'a [(String, crate::model::Label)]) -> Result<Vec<TrainExample<'a>>, RunError> {
            v.iter().map(|(id, label)| Ok(TrainExample { input: learner_input(pool, store, id)?, label })).collect()
        }
        let high_ex = examples(&self.pool, &self.store, &high)?;
        let low_ex = examples(&self.pool, &self.store, &low)?;
        let snap = self.components.learner.round_tune(round, &high_ex, &low_ex)?;
        self.state.learner = Some(snap);
        Ok(())
    }

    /// Runs the next round. On error the state is rolled back to the
    /// previous round boundary and checkpointed.
    pub fn run_round(&mut self) -> Result<&RoundState, RunError> {
        let RunStatus::Running(round) = self.state.status else {
            return Err(RunError::State(format!("status is {:?}", self.state.status)));
        };
        let saved = (self.state.clone(), self.pool.clone());
        match self.run_round_inner(round) {
            Ok(()) => Ok(self.state.rounds.last().expect("round recorded")),
            Err(e) => {
                warn!("round {round} aborted: {e}");
                let (state, pool) = saved;
                self.state = state;
                self.pool = pool;
                if let Some(snap) = &self.state.learner {
                    self.components.learner.restore(snap)?;
                }
                if let Some(rd) = &self.run_dir {
                    rd.truncate_annotations(self.state.annotated.len())?;
                    if !matches!(e, RunError::Interrupted(_)) {
                        rd.write_checkpoint(&format!("aborted-round-{round}"), &self.checkpoint()?)?;
                    }
                }
                if !matches!(e, RunError::Interrupted(_)) {
                    self.board.set_error(&e.to_string());
                }
                Err(e)
            }
        }
    }

    fn run_round_inner(&mut self, round: u32) -> Result<(), RunError> {
        self.set_phase(Phase::Planning);
        let candidates = self.subsample(round);
        let plan = self.plan(round, &candidates)?;
        let alloc = self.state.ledger.allocation(round);
        if plan.total() == 0 {
            warn!("round {round}: empty plan");
        }
        let uncertainty: BTreeMap<String, f64> =
            plan.human_ids.iter().cloned().zip(plan.human_uncertainty.iter().copied()).collect();
        let mut failed = Vec::new();

        self.set_phase(Phase::HumanAnnotation);
        let human = self.annotate(round, Fidelity::High, &plan.human_ids, &uncertainty, &mut failed)?;
        // a stop while waiting on people discards the round rather than committing part of it
        if self.stop.load(Ordering::SeqCst) {
            return Err(RunError::Interrupted(round));
        }

        // the retriever for the LLM step is built after the human commit
        self.set_phase(Phase::LlmAnnotation);
        let mut llm_ids = plan.llm_ids.clone();
        llm_ids.sort();
        let llm = self.annotate(round, Fidelity::Low, &llm_ids, &BTreeMap::new(), &mut failed)?;

        self.set_phase(Phase::Tuning);
        self.tune(round)?;
        self.evaluate(round)?;

        debug_assert!(human as u64 <= alloc.human && llm as u64 <= alloc.llm);
        self.state.ledger.record_round(round, human as u64, llm as u64);
        self.state.ledger.check_integrity()?;
        failed.sort();
        self.state.rounds.push(RoundState {
            round,
            candidate_ids: candidates,
            plan,
            learner_snapshot_id: self.state.learner.as_ref().map(|s| s.id.clone()).unwrap_or_default(),
            human_committed: human,
            llm_committed: llm,
            failed_ids: failed,
        });
        self.state.status = RunStatus::Running(round + 1);
        self.after_round(round)
    }

    /// Runs to completion (or until stopped) and returns the report.
    pub fn run(&mut self) -> Result<RunReport, RunError> {
        if self.state.status == RunStatus::Init {
            self.initialize()?;
        }
        while let RunStatus::Running(_) = self.state.status {
            if self.stop.load(Ordering::SeqCst) {
                self.stop_now()?;
                break;
            }
            match self.run_round() {
                Ok(_) => {}
                Err(RunError::Interrupted(round)) => {
                    info!("round {round} discarded on stop");
                    self.stop_now()?;
                }
                Err(e) => return Err(e),
            }
        }
        Ok(self.report())
    }

    /// Marks the run stopped and checkpoints it. Idempotent.
    pub fn stop_now(&mut self) -> Result<(), RunError> {
        if matches!(self.state.status, RunStatus::Done(_)) {
            return Ok(());
        }
        self.state.status = RunStatus::Done(DoneReason::Stopped);
        let label = format!("round-{}", self.state.ledger.rounds_run);
        if let Some(rd) = &self.run_dir {
            rd.write_checkpoint(&label, &self.checkpoint()?)?;
            rd.write_report(&self.report())?;
        }
        self.set_phase(Phase::Done);
        Ok(())
    }

    pub fn checkpoint(&self) -> Result<Vec<u8>, RunError> {
        Checkpoint { version: CHECKPOINT_VERSION, pool_digest: pool_digest(&self.pool), state: self.state.clone() }.encode()
    }

    pub fn report(&self) -> RunReport {
        RunReport::from_state(&self.state)
    }
}
