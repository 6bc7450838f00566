use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::thread::JoinHandle;

use log::{error, info};
use mfl_core::annotate::HumanQueue;
use mfl_core::model::LabelSet;
use mfl_core::orchestrator::{Engine, RunConfig, RunError, StatusBoard, StatusSnapshot};

/// One run driven on its own thread.
pub struct RunHandle {
    pub id: String,
    pub run_dir: Option<PathBuf>,
    pub labels: LabelSet,
    queue: Arc<HumanQueue>,
    board: Arc<StatusBoard>,
    stop: Arc<AtomicBool>,
    worker: Mutex<Option<JoinHandle<()>>>,
}

impl RunHandle {
    pub fn queue(&self) -> &Arc<HumanQueue> {
        &self.queue
    }

    /// Latest published snapshot, including any error that ended the run.
    pub fn status(&self) -> StatusSnapshot {
        self.board.get().expect("engines publish on construction")
    }

    pub fn is_finished(&self) -> bool {
        self.worker.lock().expect("worker poisoned").as_ref().is_none_or(JoinHandle::is_finished)
    }

    /// Asks the run to stop, unblocks any human wait and waits for the
    /// engine to checkpoint. Safe to call more than once.
    pub fn stop(&self) -> StatusSnapshot {
        self.stop.store(true, Ordering::SeqCst);
        self.queue.close();
        let worker = self.worker.lock().expect("worker poisoned").take();
        if let Some(w) = worker {
            if w.join().is_err() {
                self.board.set_error("run thread panicked");
            }
        }
        self.status()
    }

    /// Blocks until the run thread exits on its own.
    pub fn wait(&self) -> StatusSnapshot {
        let worker = self.worker.lock().expect("worker poisoned").take();
        if let Some(w) = worker {
            if w.join().is_err() {
                self.board.set_error("run thread panicked");
            }
        }
        self.status()
    }
}

/// All runs known to one service process.
pub struct Registry {
    runs: RwLock<BTreeMap<String, Arc<RunHandle>>>,
    runs_root: Option<PathBuf>,
    next: AtomicU64,
}

impl Registry {
    /// `runs_root` holds a directory per run for configs that name none.
    pub fn new(runs_root: Option<PathBuf>) -> Self {
        Registry { runs: RwLock::new(BTreeMap::new()), runs_root, next: AtomicU64::new(1) }
    }

    pub fn get(&self, id: &str) -> Option<Arc<RunHandle>> {
        self.runs.read().expect("registry poisoned").get(id).cloned()
    }

    pub fn ids(&self) -> Vec<String> {
        self.runs.read().expect("registry poisoned").keys().cloned().collect()
    }

    /// Builds the engine (loading and embedding the pool) and starts it on a
    /// background thread.
    pub fn start(&self, mut config: RunConfig) -> Result<Arc<RunHandle>, RunError> {
        config.validate()?;
        let id = format!("run-{}", self.next.fetch_add(1, Ordering::SeqCst));
        if config.run_dir.is_none() {
            config.run_dir = self.runs_root.as_ref().map(|r| r.join(&id));
        }
        let run_dir = config.run_dir.clone();
        let queue = Arc::new(HumanQueue::new());
        let mut engine = Engine::from_config(config, Some(queue.clone()))?;
        let labels = engine.state().labels.clone();
        queue.set_labels(labels.clone());
        let board = engine.status_board();
        let stop = engine.stop_handle();
        let thread_id = id.clone();
        let worker = std::thread::Builder::new()
            .name(thread_id.clone())
            .spawn(move || match engine.run() {
                Ok(r) => info!("{thread_id}: finished with {:?}", r.status),
                Err(e) => {
                    error!("{thread_id}: {e}");
                    engine.status_board().set_error(&e.to_string());
                }
            })
            .map_err(|e| RunError::State(format!("cannot start run thread: {e}")))?;
        let handle = Arc::new(RunHandle {
            id: id.clone(),
            run_dir,
            labels,
            queue,
            board,
            stop,
            worker: Mutex::new(Some(worker)),
        });
        self.runs.write().expect("registry poisoned").insert(id, handle.clone());
        Ok(handle)
    }

    /// Stops every run; used on shutdown.
    pub fn stop_all(&self) {
        let runs: Vec<Arc<RunHandle>> = self.runs.read().expect("registry poisoned").values().cloned().collect();
        for r in runs {
            r.stop();
        }
    }
}
