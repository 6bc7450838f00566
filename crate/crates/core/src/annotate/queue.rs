use std::collections::BTreeMap;
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{AnnotateFailure, AnnotationContext, Annotator, AnnotatorResult, ContextExample};
use crate::model::{Fidelity, Label, LabelSet, Sample};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", content = "label", rename_all = "snake_case")]
pub enum QueueStatus {
    Pending,
    Answered(Label),
    Withdrawn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueItem {
    pub sample_id: String,
    pub text: String,
    pub uncertainty: f64,
    pub round: u32,
    pub retrieved_context: Vec<ContextExample>,
    pub status: QueueStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubmitOutcome {
    Accepted,
    /// Same label resubmitted; nothing changed.
    AlreadyRecorded,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SubmitError {
    #[error("sample {0:?} is not in the queue")]
    Unknown(String),
    #[error("sample {id:?} already answered with {existing:?}")]
    Conflict { id: String, existing: Label },
    #[error("sample {0:?} is no longer pending")]
    NotPending(String),
    #[error("label {label:?} is not one of {allowed}")]
    InvalidLabel { label: String, allowed: LabelSet },
    #[error("queue closed")]
    Closed,
}

#[derive(Debug, Default)]
struct Inner {
    items: BTreeMap<String, QueueItem>,
    labels: Option<LabelSet>,
    version: u64,
    closed: bool,
}

impl Inner {
    fn bump(&mut self) {
        self.version += 1;
    }

    fn pending(&self) -> Vec<QueueItem> {
        let mut out: Vec<QueueItem> = self
            .items
            .values()
            .filter(|i| i.status == QueueStatus::Pending)
            .cloned()
            .collect();
        out.sort_by(|a, b| b.uncertainty.total_cmp(&a.uncertainty).then_with(|| a.sample_id.cmp(&b.sample_id)));
        out
    }
}

/// Work queue shared between the engine and whoever answers high-fidelity
/// requests (the review console, a test, a script).
#[derive(Debug, Default)]
pub struct HumanQueue {
    inner: Mutex<Inner>,
    changed: Condvar,
}

impl HumanQueue {
    pub fn new() -> Self {
        Self::default()
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().expect("human queue poisoned")
    }

    pub fn set_labels(&self, labels: LabelSet) {
        self.lock().labels = Some(labels);
    }

    /// Adds items as pending. An id already in the queue is replaced only if
    /// it was withdrawn.
    pub fn enqueue(&self, items: Vec<QueueItem>) {
        let mut g = self.lock();
        for mut item in items {
            item.status = QueueStatus::Pending;
            match g.items.get(&item.sample_id) {
                Some(existing) if existing.status != QueueStatus::Withdrawn => {}
                _ => {
                    g.items.insert(item.sample_id.clone(), item);
                }
            }
        }
        g.bump();
        self.changed.notify_all();
    }

    pub fn version(&self) -> u64 {
        self.lock().version
    }

    /// Pending items, most uncertain first.
    pub fn pending(&self) -> Vec<QueueItem> {
        self.lock().pending()
    }

    pub fn get(&self, id: &str) -> Option<QueueItem> {
        self.lock().items.get(id).cloned()
    }

    /// Long poll: returns once the version differs from `since` or the
    /// timeout passes, with the current version and pending items.
    pub fn wait_for_change(&self, since: u64, timeout: Duration) -> (u64, Vec<QueueItem>) {
        let g = self.lock();
        let (g, _) = self
            .changed
            .wait_timeout_while(g, timeout, |i| i.version == since && !i.closed)
            .expect("human queue poisoned");
        (g.version, g.pending())
    }

    pub fn submit(&self, id: &str, label: &str) -> Result<SubmitOutcome, SubmitError> {
        let mut g = self.lock();
        if g.closed {
            return Err(SubmitError::Closed);
        }
        if let Some(labels) = &g.labels {
            if !labels.contains(&Label::from(label)) {
                return Err(SubmitError::InvalidLabel { label: label.to_string(), allowed: labels.clone() });
            }
        }
        let item = g.items.get_mut(id).ok_or_else(|| SubmitError::Unknown(id.to_string()))?;
        match &item.status {
            QueueStatus::Pending => {
                item.status = QueueStatus::Answered(Label::from(label));
                g.bump();
                self.changed.notify_all();
                Ok(SubmitOutcome::Accepted)
            }
            QueueStatus::Answered(existing) if existing.as_str() == label => Ok(SubmitOutcome::AlreadyRecorded),
            QueueStatus::Answered(existing) => Err(SubmitError::Conflict { id: id.to_string(), existing: existing.clone() }),
            QueueStatus::Withdrawn => Err(SubmitError::NotPending(id.to_string())),
        }
    }

    /// Blocks until every id is answered, the timeout passes or the queue is
    /// closed. Returns the answers so far and the ids still pending.
    pub fn wait_all(&self, ids: &[String], timeout: Option<Duration>) -> (BTreeMap<String, Label>, Vec<String>) {
        let deadline = timeout.map(|t| Instant::now() + t);
        let mut g = self.lock();
        loop {
            let (done, pending) = Self::collect(&g, ids);
            if pending.is_empty() || g.closed {
                return (done, pending);
            }
            match deadline {
                None => g = self.changed.wait(g).expect("human queue poisoned"),
                Some(d) => {
                    let now = Instant::now();
                    if now >= d {
                        return (done, pending);
                    }
                    g = self.changed.wait_timeout(g, d - now).expect("human queue poisoned").0;
                }
            }
        }
    }

    fn collect(g: &Inner, ids: &[String]) -> (BTreeMap<String, Label>, Vec<String>) {
        let mut done = BTreeMap::new();
        let mut pending = Vec::new();
        for id in ids {
            match g.items.get(id).map(|i| &i.status) {
                Some(QueueStatus::Answered(l)) => {
                    done.insert(id.clone(), l.clone());
                }
                Some(QueueStatus::Pending) => pending.push(id.clone()),
                _ => {}
            }
        }
        (done, pending)
    }

    /// Marks pending items as withdrawn; answered ones are left alone.
    pub fn withdraw(&self, ids: &[String]) {
        let mut g = self.lock();
        for id in ids {
            if let Some(item) = g.items.get_mut(id) {
                if item.status == QueueStatus::Pending {
                    item.status = QueueStatus::Withdrawn;
                }
            }
        }
        g.bump();
        self.changed.notify_all();
    }

    /// Wakes all waiters; later submissions are refused.
    pub fn close(&self) {
        let mut g = self.lock();
        g.closed = true;
        g.bump();
        self.changed.notify_all();
    }

    pub fn is_closed(&self) -> bool {
        self.lock().closed
    }
}

/// High-fidelity annotator that publishes requests on a [`HumanQueue`] and
/// waits for answers. Requests still pending at the timeout are withdrawn
/// and reported as failures.
pub struct HumanQueueAnnotator {
    queue: Arc<HumanQueue>,
    timeout: Option<Duration>,
}

impl HumanQueueAnnotator {
    pub fn new(queue: Arc<HumanQueue>, timeout: Option<Duration>) -> Self {
        HumanQueueAnnotator { queue, timeout }
    }

    pub fn queue(&self) -> &Arc<HumanQueue> {
        &self.queue
    }
}

impl Annotator for HumanQueueAnnotator {
    fn name(&self) -> &str {
        "human-queue"
    }

    fn fidelity(&self) -> Fidelity {
        Fidelity::High
    }

    fn annotate_batch(&self, samples: &[&Sample], ctx: &AnnotationContext<'_>) -> Vec<AnnotatorResult> {
        self.queue.set_labels(ctx.labels.clone());
        let items = samples
            .iter()
            .map(|s| QueueItem {
                sample_id: s.id.clone(),
                text: s.text.clone(),
                uncertainty: ctx.uncertainty.get(&s.id).copied().unwrap_or(0.0),
                round: ctx.round,
                retrieved_context: ctx.retriever.and_then(|r| r.retrieve(s).ok()).unwrap_or_default(),
                status: QueueStatus::Pending,
            })
            .collect();
        self.queue.enqueue(items);
        let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
        let (mut done, pending) = self.queue.wait_all(&ids, self.timeout);
        self.queue.withdraw(&pending);
        ids.into_iter()
            .map(|id| {
                let outcome = done.remove(&id).ok_or(AnnotateFailure::Pending);
                AnnotatorResult { sample_id: id, outcome }
            })
            .collect()
    }
}
