use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::RunConfig;
use super::engine::RunState;
use super::report::RunReport;
use super::RunError;
use crate::model::{Annotation, DataPool};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Content hash over every sample in load order (ids, texts and gold labels).
pub fn pool_digest(pool: &DataPool) -> String {
    let mut h = Sha256::new();
    for s in pool.samples() {
        h.update(s.id.as_bytes());
        h.update([0]);
        h.update(s.text.as_bytes());
        h.update([0]);
        if let Some(l) = s.gold_label() {
            h.update(l.as_str().as_bytes());
        }
        h.update([1]);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub pool_digest: String,
    pub state: RunState,
}

impl Checkpoint {
    pub fn encode(&self) -> Result<Vec<u8>, RunError> {
        let mut v = serde_json::to_vec_pretty(self).map_err(|e| RunError::State(e.to_string()))?;
        v.push(b'\n');
        Ok(v)
    }

    /// Checks the version before the schema so old files get a clear error.
    pub fn decode(bytes: &[u8]) -> Result<Self, RunError> {
        let value: serde_json::Value =
            serde_json::from_slice(bytes).map_err(|e| RunError::Integrity(format!("not a checkpoint: {e}")))?;
        let found = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if found != CHECKPOINT_VERSION {
            return Err(RunError::CheckpointVersion { found, expected: CHECKPOINT_VERSION });
        }
        serde_json::from_value(value).map_err(|e| RunError::Integrity(format!("malformed checkpoint: {e}")))
    }
}

/// Run directory: `config`, `checkpoints/round-<r>`, `annotations`, `report`.
#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn create(root: &Path, config: &RunConfig) -> Result<Self, RunError> {
        fs::create_dir_all(root.join("checkpoints")).map_err(|e| RunError::io(root, e))?;
        let cfg = root.join("config");
        fs::write(&cfg, config.to_flat()).map_err(|e| RunError::io(&cfg, e))?;
        let ann = root.join("annotations");
        File::create(&ann).map_err(|e| RunError::io(&ann, e))?;
        Ok(RunDir { root: root.to_path_buf() })
    }

    pub fn open(root: &Path) -> Result<Self, RunError> {
        fs::create_dir_all(root.join("checkpoints")).map_err(|e| RunError::io(root, e))?;
        Ok(RunDir { root: root.to_path_buf() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn checkpoint_path(&self, label: &str) -> PathBuf {
        self.root.join("checkpoints").join(label)
    }

    pub fn annotations_path(&self) -> PathBuf {
        self.root.join("annotations")
    }

    pub fn report_path(&self) -> PathBuf {
        self.root.join("report")
    }

    pub fn append_annotations(&self, batch: &[Annotation]) -> Result<(), RunError> {
        if batch.is_empty() {
            return Ok(());
        }
        let path = self.annotations_path();
        let mut f = OpenOptions::new().create(true).append(true).open(&path).map_err(|e| RunError::io(&path, e))?;
        let mut buf = Vec::new();
        for a in batch {
            serde_json::to_writer(&mut buf, a).map_err(|e| RunError::State(e.to_string()))?;
            buf.push(b'\n');
        }
        f.write_all(&buf).map_err(|e| RunError::io(&path, e))
    }

    /// Drops log lines beyond the first `n` (those written after the checkpoint being resumed).
    pub fn truncate_annotations(&self, n: usize) -> Result<(), RunError> {
        let path = self.annotations_path();
        let lines: Vec<String> = match File::open(&path) {
            Ok(f) => BufReader::new(f).lines().collect::<Result<_, _>>().map_err(|e| RunError::io(&path, e))?,
            Err(_) => Vec::new(),
        };
        if lines.len() < n {
            return Err(RunError::Integrity(format!(
                "{} holds {} annotations but the checkpoint has {n}",
                path.display(),
                lines.len()
            )));
        }
        let mut out = String::new();
        for l in &lines[..n] {
            out.push_str(l);
            out.push('\n');
        }
        fs::write(&path, out).map_err(|e| RunError::io(&path, e))
    }

    pub fn read_annotations(&self) -> Result<Vec<Annotation>, RunError> {
        let path = self.annotations_path();
        let f = File::open(&path).map_err(|e| RunError::io(&path, e))?;
        BufReader::new(f)
            .lines()
            .map(|l| {
                let l = l.map_err(|e| RunError::io(&path, e))?;
                serde_json::from_str(&l).map_err(|e| RunError::io(&path, e))
            })
            .collect()
    }

    pub fn write_checkpoint(&self, label: &str, bytes: &[u8]) -> Result<(), RunError> {
        let path = self.checkpoint_path(label);
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, bytes).map_err(|e| RunError::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| RunError::io(&path, e))
    }

    pub fn write_report(&self, report: &RunReport) -> Result<(), RunError> {
        let path = self.report_path();
        fs::write(&path, report.to_json()).map_err(|e| RunError::io(&path, e))
    }

    pub fn read_report(root: &Path) -> Result<RunReport, RunError> {
        let path = root.join("report");
        let bytes = fs::read(&path).map_err(|e| RunError::io(&path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| RunError::io(&path, e))
    }
}
