use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};

use super::{
    snapshot_id, Hyper, Learner, LearnerError, LearnerInput, LearnerKind, LearnerSnapshot, Prediction, TrainExample,
    SNAPSHOT_VERSION,
};
use crate::model::LabelSet;

/// Out-of-process learner driven through files.
///
/// Invocations (appended to `command`):
///
/// ```text
/// train   <state-in|-> <state-out> <high.jsonl> <low.jsonl>
/// predict <state|->    <probe.jsonl> <out.jsonl>
/// ```
///
/// Train files use the pool record format with the fidelity under
/// `meta.fidelity`; the prediction file echoes each probe `id` with a `probs`
/// array in label-set order.
pub struct ExternalLearner {
    name: String,
    labels: LabelSet,
    command: Vec<String>,
    work_dir: PathBuf,
    state: Option<PathBuf>,
    round: u32,
}

#[derive(Serialize)]
struct TrainRecord<'a> {
    id: &'a str,
    text: &'a str,
    label: &'a str,
    meta: BTreeMap<&'static str, &'static str>,
}

#[derive(Serialize)]
struct ProbeRecord<'a> {
    id: &'a str,
    text: &'a str,
}

#[derive(Deserialize)]
struct PredictionRecord {
    id: String,
    probs: Vec<f64>,
    #[serde(default)]
    token_logprobs: Option<Vec<f64>>,
}

impl ExternalLearner {
    pub fn new(name: impl Into<String>, labels: LabelSet, command: Vec<String>, work_dir: PathBuf) -> Result<Self, LearnerError> {
        if command.is_empty() {
            return Err(LearnerError::External("empty learner command".into()));
        }
        fs::create_dir_all(&work_dir).map_err(|e| LearnerError::External(format!("{}: {e}", work_dir.display())))?;
        Ok(ExternalLearner {
            name: name.into(),
            labels,
            command,
            work_dir,
            state: None,
            round: 0,
        })
    }

    fn run(&self, args: &[&str]) -> Result<(), LearnerError> {
        let (prog, base) = self.command.split_first().expect("non-empty command");
        let status = Command::new(prog)
            .args(base)
            .args(args)
            .status()
            .map_err(|e| LearnerError::External(format!("spawn {prog}: {e}")))?;
        if !status.success() {
            return Err(LearnerError::External(format!("{prog} {} exited with {status}", args.first().unwrap_or(&""))));
        }
        Ok(())
    }

    fn write_batch(&self, path: &Path, batch: &[TrainExample<'_>], fidelity: &'static str) -> Result<(), LearnerError> {
        let io = |e: std::io::Error| LearnerError::External(format!("{}: {e}", path.display()));
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        for ex in batch {
            if !self.labels.contains(ex.label) {
                return Err(LearnerError::UnknownLabel(ex.label.0.clone()));
            }
            let rec = TrainRecord {
                id: ex.input.id,
                text: ex.input.text,
                label: ex.label.as_str(),
                meta: BTreeMap::from([("fidelity", fidelity)]),
            };
            serde_json::to_writer(&mut w, &rec).map_err(|e| LearnerError::External(e.to_string()))?;
            w.write_all(b"\n").map_err(io)?;
        }
        w.flush().map_err(io)
    }

    fn state_arg(&self) -> String {
        self.state.as_ref().map_or_else(|| "-".to_string(), |p| p.display().to_string())
    }

    fn tune(&mut self, round: u32, high: &[TrainExample<'_>], low: &[TrainExample<'_>]) -> Result<LearnerSnapshot, LearnerError> {
        let high_path = self.work_dir.join(format!("train-r{round}-high.jsonl"));
        let low_path = self.work_dir.join(format!("train-r{round}-low.jsonl"));
        self.write_batch(&high_path, high, "High")?;
        self.write_batch(&low_path, low, "Low")?;
        let out = self.work_dir.join(format!("state-r{round}"));
        let state_in = self.state_arg();
        self.run(&[
            "train",
            &state_in,
            &out.display().to_string(),
            &high_path.display().to_string(),
            &low_path.display().to_string(),
        ])?;
        self.state = Some(out);
        self.round = round;
        Ok(self.snapshot())
    }
}

impl Learner for ExternalLearner {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> LearnerKind {
        LearnerKind::Generative
    }

    fn labels(&self) -> &LabelSet {
        &self.labels
    }

    fn init_tune(&mut self, batch: &[TrainExample<'_>]) -> Result<LearnerSnapshot, LearnerError> {
        if batch.is_empty() {
            return Err(LearnerError::EmptyWarmstart);
        }
        self.tune(0, batch, &[])
    }

    fn round_tune(&mut self, round: u32, high: &[TrainExample<'_>], low: &[TrainExample<'_>]) -> Result<LearnerSnapshot, LearnerError> {
        if high.is_empty() && low.is_empty() {
            return Err(LearnerError::EmptyBatches);
        }
        self.tune(round, high, low)
    }

    fn predict(&self, input: &LearnerInput<'_>) -> Result<Prediction, LearnerError> {
        Ok(self.predict_batch(std::slice::from_ref(input))?.remove(0))
    }

    fn predict_batch(&self, inputs: &[LearnerInput<'_>]) -> Result<Vec<Prediction>, LearnerError> {
        let probe = self.work_dir.join("probe.jsonl");
        let out = self.work_dir.join("predictions.jsonl");
        let io = |p: &Path, e: std::io::Error| LearnerError::External(format!("{}: {e}", p.display()));
        {
            let mut w = BufWriter::new(File::create(&probe).map_err(|e| io(&probe, e))?);
            for i in inputs {
                serde_json::to_writer(&mut w, &ProbeRecord { id: i.id, text: i.text })
                    .map_err(|e| LearnerError::External(e.to_string()))?;
                w.write_all(b"\n").map_err(|e| io(&probe, e))?;
            }
            w.flush().map_err(|e| io(&probe, e))?;
        }
        self.run(&["predict", &self.state_arg(), &probe.display().to_string(), &out.display().to_string()])?;
        let mut got = BTreeMap::new();
        for line in BufReader::new(File::open(&out).map_err(|e| io(&out, e))?).lines() {
            let line = line.map_err(|e| io(&out, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: PredictionRecord =
                serde_json::from_str(&line).map_err(|e| LearnerError::External(format!("bad prediction line: {e}")))?;
            let sum: f64 = rec.probs.iter().sum();
            if rec.probs.len() != self.labels.len() || (sum - 1.0).abs() > 1e-6 {
                return Err(LearnerError::External(format!(
                    "prediction for {:?} must be {} probabilities summing to 1",
                    rec.id,
                    self.labels.len()
                )));
            }
            // renormalise so downstream checks hold at 1e-9
            let probs: Vec<f64> = rec.probs.iter().map(|p| p / sum).collect();
            let token_logprobs = rec
                .token_logprobs
                .or_else(|| Some(vec![probs.iter().copied().fold(f64::NEG_INFINITY, f64::max).ln().min(0.0)]));
            got.insert(rec.id, Prediction { probs, token_logprobs });
        }
        inputs
            .iter()
            .map(|i| {
                got.get(i.id)
                    .cloned()
                    .ok_or_else(|| LearnerError::External(format!("no prediction for {:?}", i.id)))
            })
            .collect()
    }

    fn snapshot(&self) -> LearnerSnapshot {
        let state = self.state.as_ref().map(|p| p.display().to_string());
        LearnerSnapshot {
            version: SNAPSHOT_VERSION,
            id: snapshot_id(&self.name, self.round, &[], state.as_deref().unwrap_or("-")),
            learner: format!("external:{}", self.name),
            round: self.round,
            dim: 0,
            n_labels: self.labels.len(),
            hyper: Hyper { learning_rate: 0.0, epochs: 0, l2: 0.0, seed: 0 },
            params: Vec::new(),
            external_state: state,
        }
    }

    fn restore(&mut self, snap: &LearnerSnapshot) -> Result<(), LearnerError> {
        if snap.version != SNAPSHOT_VERSION {
            return Err(LearnerError::Version { found: snap.version, expected: SNAPSHOT_VERSION });
        }
        if snap.learner != format!("external:{}", self.name) || snap.n_labels != self.labels.len() {
            return Err(LearnerError::Incompatible(format!("snapshot from {}", snap.learner)));
        }
        self.state = snap.external_state.as_ref().map(PathBuf::from);
        self.round = snap.round;
        Ok(())
    }
}
