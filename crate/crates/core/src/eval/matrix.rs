use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{EvalError, Metric, Scores};
use crate::orchestrator::{Engine, RunConfig};

/// One named configuration: flat-key overrides applied over the matrix base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixCell {
    pub name: String,
    #[serde(default)]
    pub overrides: BTreeMap<String, String>,
}

impl MatrixCell {
    pub fn new<K: Into<String>, V: Into<String>>(name: impl Into<String>, overrides: impl IntoIterator<Item = (K, V)>) -> Self {
        MatrixCell {
            name: name.into(),
            overrides: overrides.into_iter().map(|(k, v)| (k.into(), v.into())).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentMatrix {
    /// Flat config keys shared by every cell; must name `pool` and `test`.
    pub base: BTreeMap<String, String>,
    pub cells: Vec<MatrixCell>,
    #[serde(default = "default_trials")]
    pub trials: u32,
    /// Trial `t` runs with seed `seed + t`.
    #[serde(default)]
    pub seed: u64,
    /// Concurrent runs; 0 means one per available core.
    #[serde(default)]
    pub parallelism: usize,
}

fn default_trials() -> u32 {
    3
}

impl ExperimentMatrix {
    pub fn new(base: BTreeMap<String, String>, cells: Vec<MatrixCell>) -> Self {
        ExperimentMatrix { base, cells, trials: default_trials(), seed: 0, parallelism: 0 }
    }

    fn config_for(&self, cell: &MatrixCell, trial: u32, run_dir: Option<&Path>) -> Result<RunConfig, String> {
        let mut pairs = self.base.clone();
        pairs.extend(cell.overrides.clone());
        pairs.insert("seed".into(), (self.seed + u64::from(trial)).to_string());
        if let Some(d) = run_dir {
            pairs.insert("run_dir".into(), d.display().to_string());
        }
        let config = RunConfig::from_pairs(&pairs).map_err(|e| e.to_string())?;
        if config.test.is_none() {
            return Err("config key `test`: required by the experiment harness".into());
        }
        Ok(config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub trial: u32,
    pub seed: u64,
    pub scores: Option<Scores>,
    pub error: Option<String>,
    pub run_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixRow {
    pub name: String,
    pub human: Option<u64>,
    pub llm: Option<u64>,
    pub strategy: Option<String>,
    pub schedule: Option<String>,
    pub retrieval: Option<String>,
    pub trials: Vec<TrialOutcome>,
    pub failed: bool,
    /// Over successful trials.
    pub mean: Option<Scores>,
    /// Sample standard deviation; zero for a single trial.
    pub std: Option<Scores>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixReport {
    pub trials: u32,
    pub rows: Vec<MatrixRow>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

fn sanitize(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

fn run_one(matrix: &ExperimentMatrix, cell: &MatrixCell, trial: u32, run_dir: Option<PathBuf>) -> TrialOutcome {
    let seed = matrix.seed + u64::from(trial);
    let result = matrix.config_for(cell, trial, run_dir.as_deref()).and_then(|config| {
        let mut engine = Engine::from_config(config, None).map_err(|e| e.to_string())?;
        let report = engine.run().map_err(|e| e.to_string())?;
        report.final_metrics.ok_or_else(|| "run produced no test metrics".to_string())
    });
    let (scores, error) = match result {
        Ok(s) => (Some(s), None),
        Err(e) => (None, Some(e)),
    };
    TrialOutcome { trial, seed, scores, error, run_dir }
}

/// Runs every cell `trials` times. Failed runs mark their cell failed; the
/// rest of the matrix still runs. With `out_dir`, each run gets its own run
/// directory and the report is written as `matrix.tsv`, `matrix.jsonl` and
/// `matrix.json`.
pub fn run_matrix(matrix: &ExperimentMatrix, out_dir: Option<&Path>) -> Result<MatrixReport, EvalError> {
    if matrix.trials == 0 {
        return Err(EvalError::Matrix("trials must be at least 1".into()));
    }
    let mut names = std::collections::BTreeSet::new();
    for c in &matrix.cells {
        if !names.insert(sanitize(&c.name)) {
            return Err(EvalError::Matrix(format!("duplicate cell name {:?}", c.name)));
        }
    }
    let jobs: Vec<(usize, u32)> = (0..matrix.cells.len()).flat_map(|c| (0..matrix.trials).map(move |t| (c, t))).collect();
    let workers = match matrix.parallelism {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        n => n,
    }
    .min(jobs.len().max(1));
    let next = AtomicUsize::new(0);
    let results: Mutex<BTreeMap<(usize, u32), TrialOutcome>> = Mutex::new(BTreeMap::new());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(c, t)) = jobs.get(i) else { break };
                let cell = &matrix.cells[c];
                let dir = out_dir.map(|d| d.join(sanitize(&cell.name)).join(format!("trial-{t}")));
                let outcome = run_one(matrix, cell, t, dir);
                results.lock().expect("results poisoned").insert((c, t), outcome);
            });
        }
    });
    let mut results = results.into_inner().expect("results poisoned");
    let rows = matrix
        .cells
        .iter()
        .enumerate()
        .map(|(c, cell)| {
            let trials: Vec<TrialOutcome> = (0..matrix.trials).map(|t| results.remove(&(c, t)).expect("every job ran")).collect();
            let ok: Vec<Scores> = trials.iter().filter_map(|t| t.scores).collect();
            let (mean, std) = if ok.is_empty() {
                (None, None)
            } else {
                let ms = |m: Metric| mean_std(&ok.iter().map(|s| s.get(m)).collect::<Vec<_>>());
                (Some(Scores::from_fn(|m| ms(m).0)), Some(Scores::from_fn(|m| ms(m).1)))
            };
            let config = matrix.config_for(cell, 0, None).ok();
            MatrixRow {
                name: cell.name.clone(),
                human: config.as_ref().map(|c| c.budget.human),
                llm: config.as_ref().map(|c| c.budget.llm),
                strategy: config.as_ref().map(|c| c.strategy.to_string()),
                schedule: config.as_ref().map(|c| format!("{:?}", c.budget.schedule)),
                retrieval: config.as_ref().map(|c| format!("{:?}", c.retrieval_mode)),
                failed: trials.iter().any(|t| t.error.is_some()),
                trials,
                mean,
                std,
            }
        })
        .collect();
    let report = MatrixReport { trials: matrix.trials, rows };
    if let Some(d) = out_dir {
        let io = |p: &Path, e: std::io::Error| EvalError::Matrix(format!("{}: {e}", p.display()));
        fs::create_dir_all(d).map_err(|e| io(d, e))?;
        let tsv = d.join("matrix.tsv");
        fs::write(&tsv, report.to_tsv()).map_err(|e| io(&tsv, e))?;
        let log = d.join("matrix.jsonl");
        fs::write(&log, report.to_jsonl()).map_err(|e| io(&log, e))?;
        let full = d.join("matrix.json");
        let json = serde_json::to_string_pretty(&report).expect("report serializes");
        fs::write(&full, json + "\n").map_err(|e| io(&full, e))?;
    }
    Ok(report)
}

fn fmt_opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "-".into(), T::to_string)
}

impl MatrixReport {
    /// Reads the `matrix.json` written by [`run_matrix`].
    pub fn load(dir: &Path) -> Result<Self, EvalError> {
        let p = dir.join("matrix.json");
        let text = fs::read_to_string(&p).map_err(|e| EvalError::Matrix(format!("{}: {e}", p.display())))?;
        serde_json::from_str(&text).map_err(|e| EvalError::Matrix(format!("{}: {e}", p.display())))
    }

    pub fn row(&self, name: &str) -> Option<&MatrixRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// Tab-separated: one line per cell with mean and std per metric.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("name\thuman\tllm\tstrategy\tschedule\tretrieval\ttrials\tfailed");
        for m in Metric::ALL {
            let _ = write!(s, "\t{0}_mean\t{0}_std", m.name());
        }
        s.push('\n');
        for r in &self.rows {
            let ok = r.trials.iter().filter(|t| t.scores.is_some()).count();
            let _ = write!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}\t{ok}\t{}",
                r.name,
                fmt_opt(&r.human),
                fmt_opt(&r.llm),
                fmt_opt(&r.strategy),
                fmt_opt(&r.schedule),
                fmt_opt(&r.retrieval),
                r.failed
            );
            for m in Metric::ALL {
                match (r.mean, r.std) {
                    (Some(mean), Some(std)) => {
                        let _ = write!(s, "\t{:.6}\t{:.6}", mean.get(m), std.get(m));
                    }
                    _ => s.push_str("\t-\t-"),
                }
            }
            s.push('\n');
        }
        s
    }

    /// Structured log: one JSON object per trial, then one per aggregated row.
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.rows {
            for t in &r.trials {
                let line = serde_json::json!({"kind": "trial", "cell": r.name, "trial": t.trial, "seed": t.seed, "scores": t.scores, "error": t.error});
                let _ = writeln!(s, "{line}");
            }
        }
        for r in &self.rows {
            let line = serde_json::json!({"kind": "row", "cell": r.name, "failed": r.failed, "mean": r.mean, "std": r.std});
            let _ = writeln!(s, "{line}");
        }
        s
    }
}

fn cell_text(r: &MatrixRow, m: Metric) -> String {
    match (r.mean, r.std) {
        (Some(mean), Some(std)) => {
            let mut t = format!("{:.2} ± {:.2}", 100.0 * mean.get(m), 100.0 * std.get(m));
            if r.failed {
                t.push('*');
            }
            t
        }
        _ => "failed".into(),
    }
}

/// One row per configuration with budget split, strategy and metric columns.
pub fn render_rows(report: &MatrixReport) -> String {
    let name_w = report.rows.iter().map(|r| r.name.len()).max().unwrap_or(4).max(4);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<name_w$}  {:>6}  {:>6}  {:<16}  {:<9}  {:<9}  {:>16}  {:>16}  {:>16}",
        "name", "human", "llm", "strategy", "schedule", "retrieval", "accuracy", "macro-F1", "weighted-F1"
    );
    for r in &report.rows {
        let _ = writeln!(
            s,
            "{:<name_w$}  {:>6}  {:>6}  {:<16}  {:<9}  {:<9}  {:>16}  {:>16}  {:>16}",
            r.name,
            fmt_opt(&r.human),
            fmt_opt(&r.llm),
            fmt_opt(&r.strategy),
            fmt_opt(&r.schedule),
            fmt_opt(&r.retrieval),
            cell_text(r, Metric::Accuracy),
            cell_text(r, Metric::MacroF1),
            cell_text(r, Metric::WeightedF1)
        );
    }
    if report.rows.iter().any(|r| r.failed) {
        s.push_str("* some trials failed; mean over the successful ones\n");
    }
    s
}

/// One column per configuration, a single metric row (strategy comparison layout).
pub fn render_columns(report: &MatrixReport, label: &str, metric: Metric) -> String {
    let widths: Vec<usize> = report.rows.iter().map(|r| r.name.len().max(cell_text(r, metric).len())).collect();
    let label_w = label.len().max(metric.name().len());
    let mut s = format!("{:<label_w$}", "");
    for (r, w) in report.rows.iter().zip(&widths) {
        let _ = write!(s, "  {:>w$}", r.name);
    }
    s.push('\n');
    let _ = write!(s, "{label:<label_w$}");
    for (r, w) in report.rows.iter().zip(&widths) {
        let _ = write!(s, "  {:>w$}", cell_text(r, metric));
    }
    s.push('\n');
    s
}
