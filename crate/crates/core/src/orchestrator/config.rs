use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::budget::{BudgetConfig, ScheduleKind};
use crate::embed::RetrievalMode;
use crate::model::PoolFormat;
use crate::query::StrategyKind;

/// Bad or missing configuration, always naming the offending key.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("config key `{key}`: {reason}")]
pub struct ConfigError {
    pub key: String,
    pub reason: String,
}

fn err(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError { key: key.to_string(), reason: reason.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HighBinding {
    Oracle,
    /// Live human queue, answered through the service.
    Queue,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LowBinding {
    Oracle,
    Noisy,
    /// Simulated annotator whose accuracy rises with retrieved-context similarity.
    Context,
    Llm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LearnerBinding {
    Reference,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderBinding {
    Hashing,
    Process,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmConfig {
    pub base_url: String,
    pub model: String,
    pub retries: u32,
    pub max_inflight: usize,
    pub timeout_ms: u64,
    pub backoff_ms: u64,
    pub template: Option<PathBuf>,
    /// Environment variable holding the API key, if any.
    pub api_key_env: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub budget: BudgetConfig,
    pub strategy: StrategyKind,
    /// Defaults to `min(|U|, 3000)`.
    pub subsample_size: Option<usize>,
    pub seed: u64,
    pub pool: PathBuf,
    pub pool_format: Option<PoolFormat>,
    pub test: Option<PathBuf>,
    pub labels: Option<Vec<String>>,
    pub annotator_high: HighBinding,
    pub annotator_low: LowBinding,
    pub noisy_accuracy: f64,
    pub context_base: f64,
    pub context_gain: f64,
    pub context_ceiling: f64,
    /// Fraction of low-fidelity requests that fail (fault injection).
    pub low_failure_rate: f64,
    pub llm: LlmConfig,
    pub retrieval_neighbors: usize,
    pub retrieval_shots: usize,
    pub retrieval_mode: RetrievalMode,
    pub learner: LearnerBinding,
    pub learner_learning_rate: f64,
    pub learner_epochs: u32,
    pub learner_l2: f64,
    pub learner_command: Vec<String>,
    pub tune_on_cumulative: bool,
    pub allow_cold_start: bool,
    pub encoder: EncoderBinding,
    pub encoder_dim: usize,
    pub encoder_name: Option<String>,
    pub encoder_command: Vec<String>,
    pub encoder_url: Option<String>,
    pub encoder_cache: Option<PathBuf>,
    pub human_timeout_ms: Option<u64>,
    pub run_dir: Option<PathBuf>,
    pub listen_addr: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            budget: BudgetConfig {
                total: 1000,
                human: 200,
                llm: 800,
                rounds: 5,
                warmstart: 10,
                max_finetune_rounds: 5,
                schedule: ScheduleKind::Variable,
            },
            strategy: StrategyKind::Eeq,
            subsample_size: None,
            seed: 0,
            pool: PathBuf::new(),
            pool_format: None,
            test: None,
            labels: None,
            annotator_high: HighBinding::Oracle,
            annotator_low: LowBinding::Noisy,
            noisy_accuracy: 0.75,
            context_base: 0.4,
            context_gain: 0.5,
            context_ceiling: 0.95,
            low_failure_rate: 0.0,
            llm: LlmConfig {
                base_url: "http://127.0.0.1:8000/v1".into(),
                model: "default".into(),
                retries: 3,
                max_inflight: 4,
                timeout_ms: 30_000,
                backoff_ms: 200,
                template: None,
                api_key_env: None,
            },
            retrieval_neighbors: 50,
            retrieval_shots: 5,
            retrieval_mode: RetrievalMode::Similar,
            learner: LearnerBinding::Reference,
            learner_learning_rate: 0.5,
            learner_epochs: 100,
            learner_l2: 1e-4,
            learner_command: Vec::new(),
            tune_on_cumulative: false,
            allow_cold_start: false,
            encoder: EncoderBinding::Hashing,
            encoder_dim: crate::embed::HashingEncoder::DEFAULT_DIM,
            encoder_name: None,
            encoder_command: Vec::new(),
            encoder_url: None,
            encoder_cache: None,
            human_timeout_ms: None,
            run_dir: None,
            listen_addr: "127.0.0.1:8080".into(),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| err(key, format!("cannot parse {v:?}: {e}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool, ConfigError> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(err(key, format!("expected true or false, got {v:?}"))),
    }
}

fn parse_enum<T: serde::de::DeserializeOwned>(key: &str, v: &str, allowed: &str) -> Result<T, ConfigError> {
    serde_json::from_value(serde_json::Value::String(v.to_ascii_lowercase()))
        .map_err(|_| err(key, format!("unknown value {v:?} (expected one of {allowed})")))
}

fn parse_list(v: &str) -> Vec<String> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
}

fn parse_command(v: &str) -> Vec<String> {
    v.split_whitespace().map(String::from).collect()
}

fn unquote(v: &str) -> &str {
    let v = v.trim();
    if v.len() >= 2 && ((v.starts_with('"') && v.ends_with('"')) || (v.starts_with('\'') && v.ends_with('\''))) {
        &v[1..v.len() - 1]
    } else {
        v
    }
}

/// Splits `key = value` lines; `#` starts a comment line.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| err(line, format!("line {} is not `key = value`", i + 1)))?;
        let k = k.trim();
        if out.insert(k.to_string(), unquote(v).to_string()).is_some() {
            return Err(err(k, format!("set twice (line {})", i + 1)));
        }
    }
    Ok(out)
}

impl RunConfig {
    /// Builds a config from flat keys over the defaults. Unknown keys are errors.
    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self, ConfigError> {
        let mut c = RunConfig::default();
        let mut total_set = false;
        let mut max_rounds_set = false;
        let mut lambda: Option<f64> = None;
        for (key, v) in pairs {
            let k = key.as_str();
            let v = v.as_str();
            match k {
                "budget.total" => {
                    c.budget.total = parse(k, v)?;
                    total_set = true;
                }
                "budget.human" => c.budget.human = parse(k, v)?,
                "budget.llm" => c.budget.llm = parse(k, v)?,
                "budget.schedule" => c.budget.schedule = parse_enum(k, v, "variable, equal")?,
                "rounds" => c.budget.rounds = parse(k, v)?,
                "warmstart" => c.budget.warmstart = parse(k, v)?,
                "max_finetune_rounds" => {
                    c.budget.max_finetune_rounds = parse(k, v)?;
                    max_rounds_set = true;
                }
                "strategy" => c.strategy = v.parse().map_err(|e: String| err(k, e))?,
                "strategy.hybrid_lambda" => lambda = Some(parse(k, v)?),
                "subsample_size" => c.subsample_size = Some(parse(k, v)?),
                "seed" => c.seed = parse(k, v)?,
                "pool" => c.pool = PathBuf::from(v),
                "pool.format" => c.pool_format = Some(v.parse().map_err(|e: String| err(k, e))?),
                "test" => c.test = Some(PathBuf::from(v)),
                "labels" => c.labels = Some(parse_list(v)),
                "annotator.high" => c.annotator_high = parse_enum(k, v, "oracle, queue")?,
                "annotator.low" => c.annotator_low = parse_enum(k, v, "oracle, noisy, context, llm")?,
                "annotator.low.failure_rate" => c.low_failure_rate = parse(k, v)?,
                "noisy.accuracy" => c.noisy_accuracy = parse(k, v)?,
                "context.base" => c.context_base = parse(k, v)?,
                "context.gain" => c.context_gain = parse(k, v)?,
                "context.ceiling" => c.context_ceiling = parse(k, v)?,
                "llm.base_url" => c.llm.base_url = v.to_string(),
                "llm.model" => c.llm.model = v.to_string(),
                "llm.retries" => c.llm.retries = parse(k, v)?,
                "llm.max_inflight" => c.llm.max_inflight = parse(k, v)?,
                "llm.timeout_ms" => c.llm.timeout_ms = parse(k, v)?,
                "llm.backoff_ms" => c.llm.backoff_ms = parse(k, v)?,
                "llm.template" => c.llm.template = Some(PathBuf::from(v)),
                "llm.api_key_env" => c.llm.api_key_env = Some(v.to_string()),
                "retrieval.neighbors" => c.retrieval_neighbors = parse(k, v)?,
                "retrieval.shots" => c.retrieval_shots = parse(k, v)?,
                "retrieval.mode" => c.retrieval_mode = parse_enum(k, v, "similar, random")?,
                "learner" => c.learner = parse_enum(k, v, "reference, external")?,
                "learner.learning_rate" => c.learner_learning_rate = parse(k, v)?,
                "learner.epochs" => c.learner_epochs = parse(k, v)?,
                "learner.l2" => c.learner_l2 = parse(k, v)?,
                "learner.command" => c.learner_command = parse_command(v),
                "tune_on_cumulative" => c.tune_on_cumulative = parse_bool(k, v)?,
                "allow_cold_start" => c.allow_cold_start = parse_bool(k, v)?,
                "encoder" => c.encoder = parse_enum(k, v, "hashing, process, http")?,
                "encoder.dim" => c.encoder_dim = parse(k, v)?,
                "encoder.name" => c.encoder_name = Some(v.to_string()),
                "encoder.command" => c.encoder_command = parse_command(v),
                "encoder.url" => c.encoder_url = Some(v.to_string()),
                "encoder.cache" => c.encoder_cache = Some(PathBuf::from(v)),
                "human.timeout_ms" => c.human_timeout_ms = Some(parse(k, v)?),
                "run_dir" => c.run_dir = Some(PathBuf::from(v)),
                "service.listen_addr" => c.listen_addr = v.to_string(),
                _ => return Err(err(k, "unknown key")),
            }
        }
        if let Some(l) = lambda {
            match c.strategy {
                StrategyKind::Hybrid(_) => c.strategy = StrategyKind::Hybrid(l),
                _ => return Err(err("strategy.hybrid_lambda", "only meaningful with strategy = Hybrid")),
            }
        }
        if !total_set {
            c.budget.total = c.budget.human + c.budget.llm;
        }
        if !max_rounds_set {
            c.budget.max_finetune_rounds = c.budget.rounds;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn parse_str(text: &str) -> Result<Self, ConfigError> {
        Self::from_pairs(&parse_pairs(text)?)
    }

    /// Reads a config file; relative paths inside resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| err("config", format!("{}: {e}", path.display())))?;
        let mut c = Self::parse_str(&text)?;
        if let Some(dir) = path.parent() {
            c.resolve_paths(dir);
        }
        Ok(c)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() && !p.as_os_str().is_empty() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.pool);
        for p in [&mut self.test, &mut self.llm.template, &mut self.encoder_cache, &mut self.run_dir]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let b = &self.budget;
        if b.total != b.human + b.llm {
            return Err(err(
                "budget.total",
                format!("budget.total ({}) must equal budget.human + budget.llm ({} + {})", b.total, b.human, b.llm),
            ));
        }
        if b.rounds == 0 {
            return Err(err("rounds", "must be at least 1"));
        }
        if b.warmstart == 0 && !self.allow_cold_start {
            return Err(err("warmstart", "must be at least 1 unless allow_cold_start = true"));
        }
        if self.pool.as_os_str().is_empty() {
            return Err(err("pool", "required"));
        }
        if let StrategyKind::Hybrid(l) = self.strategy {
            if !(0.0..=1.0).contains(&l) {
                return Err(err("strategy.hybrid_lambda", format!("{l} outside [0, 1]")));
            }
        }
        if let Some(s) = self.subsample_size {
            let peak = b
                .human_schedule()
                .iter()
                .zip(b.llm_schedule())
                .map(|(h, g)| h + g)
                .max()
                .unwrap_or(0);
            if (s as u64) < peak {
                return Err(err("subsample_size", format!("{s} is smaller than the largest round allocation {peak}")));
            }
        }
        for (key, p) in [
            ("noisy.accuracy", self.noisy_accuracy),
            ("context.ceiling", self.context_ceiling),
            ("annotator.low.failure_rate", self.low_failure_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(err(key, format!("{p} outside [0, 1]")));
            }
        }
        if let Some(labels) = &self.labels {
            if labels.is_empty() {
                return Err(err("labels", "empty label list"));
            }
        }
        if self.retrieval_neighbors == 0 {
            return Err(err("retrieval.neighbors", "must be at least 1"));
        }
        if self.learner == LearnerBinding::External && self.learner_command.is_empty() {
            return Err(err("learner.command", "required when learner = external"));
        }
        if self.encoder_dim == 0 {
            return Err(err("encoder.dim", "must be at least 1"));
        }
        match self.encoder {
            EncoderBinding::Process if self.encoder_command.is_empty() => {
                return Err(err("encoder.command", "required when encoder = process"))
            }
            EncoderBinding::Http if self.encoder_url.is_none() => {
                return Err(err("encoder.url", "required when encoder = http"))
            }
            _ => {}
        }
        if self.learner_learning_rate <= 0.0 || !self.learner_learning_rate.is_finite() {
            return Err(err("learner.learning_rate", "must be a positive number"));
        }
        if self.learner_l2 < 0.0 {
            return Err(err("learner.l2", "must be non-negative"));
        }
        Ok(())
    }

    /// Flat `key = value` form; parsing it back yields an equal config.
    pub fn to_flat(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        let b = &self.budget;
        put("budget.total", b.total.to_string());
        put("budget.human", b.human.to_string());
        put("budget.llm", b.llm.to_string());
        put("budget.schedule", enum_name(&b.schedule));
        put("rounds", b.rounds.to_string());
        put("warmstart", b.warmstart.to_string());
        put("max_finetune_rounds", b.max_finetune_rounds.to_string());
        match self.strategy {
            StrategyKind::Hybrid(l) => {
                put("strategy", "Hybrid".into());
                put("strategy.hybrid_lambda", format!("{l:?}"));
            }
            other => put("strategy", other.name().into()),
        }
        if let Some(n) = self.subsample_size {
            put("subsample_size", n.to_string());
        }
        put("seed", self.seed.to_string());
        put("pool", self.pool.display().to_string());
        if let Some(f) = self.pool_format {
            put("pool.format", enum_name(&f));
        }
        if let Some(t) = &self.test {
            put("test", t.display().to_string());
        }
        if let Some(l) = &self.labels {
            put("labels", l.join(","));
        }
        put("annotator.high", enum_name(&self.annotator_high));
        put("annotator.low", enum_name(&self.annotator_low));
        put("annotator.low.failure_rate", format!("{:?}", self.low_failure_rate));
        put("noisy.accuracy", format!("{:?}", self.noisy_accuracy));
        put("context.base", format!("{:?}", self.context_base));
        put("context.gain", format!("{:?}", self.context_gain));
        put("context.ceiling", format!("{:?}", self.context_ceiling));
        put("llm.base_url", self.llm.base_url.clone());
        put("llm.model", self.llm.model.clone());
        put("llm.retries", self.llm.retries.to_string());
        put("llm.max_inflight", self.llm.max_inflight.to_string());
        put("llm.timeout_ms", self.llm.timeout_ms.to_string());
        put("llm.backoff_ms", self.llm.backoff_ms.to_string());
        if let Some(t) = &self.llm.template {
            put("llm.template", t.display().to_string());
        }
        if let Some(e) = &self.llm.api_key_env {
            put("llm.api_key_env", e.clone());
        }
        put("retrieval.neighbors", self.retrieval_neighbors.to_string());
        put("retrieval.shots", self.retrieval_shots.to_string());
        put("retrieval.mode", enum_name(&self.retrieval_mode));
        put("learner", enum_name(&self.learner));
        put("learner.learning_rate", format!("{:?}", self.learner_learning_rate));
        put("learner.epochs", self.learner_epochs.to_string());
        put("learner.l2", format!("{:?}", self.learner_l2));
        if !self.learner_command.is_empty() {
            put("learner.command", self.learner_command.join(" "));
        }
        put("tune_on_cumulative", self.tune_on_cumulative.to_string());
        put("allow_cold_start", self.allow_cold_start.to_string());
        put("encoder", enum_name(&self.encoder));
        put("encoder.dim", self.encoder_dim.to_string());
        if let Some(n) = &self.encoder_name {
            put("encoder.name", n.clone());
        }
        if !self.encoder_command.is_empty() {
            put("encoder.command", self.encoder_command.join(" "));
        }
        if let Some(u) = &self.encoder_url {
            put("encoder.url", u.clone());
        }
        if let Some(p) = &self.encoder_cache {
            put("encoder.cache", p.display().to_string());
        }
        if let Some(t) = self.human_timeout_ms {
            put("human.timeout_ms", t.to_string());
        }
        if let Some(d) = &self.run_dir {
            put("run_dir", d.display().to_string());
        }
        put("service.listen_addr", self.listen_addr.clone());
        s
    }
}

fn enum_name<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        other => panic!("not a unit enum: {other:?}"),
    }
}
