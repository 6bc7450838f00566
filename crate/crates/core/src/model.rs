//! Shared data model: samples, labels, annotations, the unannotated pool and
//! the annotated set.
//!
//! Gold labels ride along with each [`Sample`] so the simulated human can
//! answer queries, but acquisition strategies and learners never receive a
//! `Sample`. They operate on ids, embeddings and [`crate::learner::LearnerInput`]
//! views, none of which carry the gold label. Only the oracle-style annotators
//! and the evaluation code call [`Sample::gold_label`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::query::QueryPlan;

/// A categorical label value.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Label(pub String);

impl Label {
    pub fn new(value: impl Into<String>) -> Self {
        Label(value.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Label {
    fn from(s: &str) -> Self {
        Label(s.to_string())
    }
}

/// Finite ordered set of labels. Order defines the class index used by learners.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Label>", into = "Vec<Label>")]
pub struct LabelSet {
    labels: Vec<Label>,
}

impl LabelSet {
    pub fn new<I, L>(labels: I) -> Result<Self, PoolError>
    where
        I: IntoIterator<Item = L>,
        L: Into<Label>,
    {
        let labels: Vec<Label> = labels.into_iter().map(Into::into).collect();
        if labels.is_empty() {
            return Err(PoolError::EmptyLabelSet);
        }
        let mut seen = BTreeSet::new();
        for l in &labels {
            if !seen.insert(l.clone()) {
                return Err(PoolError::DuplicateLabel(l.0.clone()));
            }
        }
        Ok(LabelSet { labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn contains(&self, label: &Label) -> bool {
        self.labels.contains(label)
    }

    pub fn index_of(&self, label: &Label) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn get(&self, index: usize) -> Option<&Label> {
        self.labels.get(index)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Label> {
        self.labels.iter()
    }

    pub fn as_slice(&self) -> &[Label] {
        &self.labels
    }
}

impl TryFrom<Vec<Label>> for LabelSet {
    type Error = PoolError;
    fn try_from(v: Vec<Label>) -> Result<Self, Self::Error> {
        LabelSet::new(v)
    }
}

impl From<LabelSet> for Vec<Label> {
    fn from(s: LabelSet) -> Self {
        s.labels
    }
}

impl fmt::Display for LabelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.labels.iter().map(Label::as_str).collect();
        write!(f, "{{{}}}", names.join(","))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Fidelity {
    High,
    Low,
}

impl fmt::Display for Fidelity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Fidelity::High => f.write_str("High"),
            Fidelity::Low => f.write_str("Low"),
        }
    }
}

/// One unannotated instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub text: String,
    #[serde(rename = "label", default, skip_serializing_if = "Option::is_none")]
    gold_label: Option<Label>,
    #[serde(rename = "meta", default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

impl Sample {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Sample {
            id: id.into(),
            text: text.into(),
            gold_label: None,
            metadata: BTreeMap::new(),
        }
    }

    pub fn with_gold(mut self, label: impl Into<Label>) -> Self {
        self.gold_label = Some(label.into());
        self
    }

    /// Withheld ground truth. Reserved for oracle annotators and evaluation.
    pub fn gold_label(&self) -> Option<&Label> {
        self.gold_label.as_ref()
    }

    pub fn has_gold(&self) -> bool {
        self.gold_label.is_some()
    }
}

/// A committed label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub sample_id: String,
    pub label: Label,
    pub fidelity: Fidelity,
    pub source: String,
    pub round: u32,
    pub sequence: u64,
}

/// An annotation awaiting commit; the sequence number is assigned at commit time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NewAnnotation {
    pub sample_id: String,
    pub label: Label,
    pub fidelity: Fidelity,
    pub source: String,
    pub round: u32,
}

#[derive(Debug, Error)]
pub enum PoolError {
    #[error("cannot open pool file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("duplicate sample id {id:?} at line {line}")]
    DuplicateId { id: String, line: usize },
    #[error("malformed record at line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("label set must be non-empty")]
    EmptyLabelSet,
    #[error("label {0:?} appears twice in label set")]
    DuplicateLabel(String),
    #[error("sample {id:?} has gold label {label:?} outside label set {labels}")]
    GoldOutsideLabelSet {
        id: String,
        label: String,
        labels: LabelSet,
    },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CommitError {
    #[error("sample {0:?} is not in the unannotated pool")]
    NotUnannotated(String),
    #[error("sample {0:?} appears twice in one batch")]
    DuplicateInBatch(String),
    #[error("label {label:?} for sample {id:?} is not in label set {labels}")]
    InvalidLabel {
        id: String,
        label: String,
        labels: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolFormat {
    Jsonl,
    Csv,
}

impl std::str::FromStr for PoolFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" | "json" => Ok(PoolFormat::Jsonl),
            "csv" => Ok(PoolFormat::Csv),
            other => Err(format!("unknown pool format {other:?} (expected jsonl or csv)")),
        }
    }
}

impl PoolFormat {
    /// Guess the format from a file extension, defaulting to jsonl.
    pub fn from_path(path: &Path) -> PoolFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => PoolFormat::Csv,
            _ => PoolFormat::Jsonl,
        }
    }
}

/// The unannotated pool `U` plus every sample ever loaded.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DataPool {
    samples: BTreeMap<String, Sample>,
    order: Vec<String>,
    unannotated: Vec<String>,
    unannotated_set: BTreeSet<String>,
}

impl DataPool {
    pub fn from_samples(samples: Vec<Sample>) -> Result<Self, PoolError> {
        let mut pool = DataPool::default();
        for (i, s) in samples.into_iter().enumerate() {
            pool.insert(s, i + 1)?;
        }
        Ok(pool)
    }

    fn insert(&mut self, sample: Sample, line: usize) -> Result<(), PoolError> {
        if self.samples.contains_key(&sample.id) {
            return Err(PoolError::DuplicateId {
                id: sample.id,
                line,
            });
        }
        self.order.push(sample.id.clone());
        self.unannotated.push(sample.id.clone());
        self.unannotated_set.insert(sample.id.clone());
        self.samples.insert(sample.id.clone(), sample);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Sample> {
        self.samples.get(id)
    }

    /// All samples in load order.
    pub fn samples(&self) -> impl Iterator<Item = &Sample> {
        self.order.iter().map(move |id| &self.samples[id])
    }

    /// Unannotated ids in load order.
    pub fn unannotated_ids(&self) -> &[String] {
        &self.unannotated
    }

    pub fn is_unannotated(&self, id: &str) -> bool {
        self.unannotated_set.contains(id)
    }

    /// Restrict the unannotated set to `ids` (checkpoint restore).
    pub(crate) fn retain_unannotated(&mut self, keep: &BTreeSet<String>) {
        self.unannotated.retain(|id| keep.contains(id));
        self.unannotated_set.retain(|id| keep.contains(id));
    }

    fn remove_unannotated(&mut self, ids: &BTreeSet<&str>) {
        self.unannotated.retain(|id| !ids.contains(id.as_str()));
        self.unannotated_set.retain(|id| !ids.contains(id.as_str()));
    }

    /// Sorted distinct gold labels, if any sample carries one.
    pub fn observed_labels(&self) -> Option<LabelSet> {
        let labels: BTreeSet<Label> = self
            .samples
            .values()
            .filter_map(|s| s.gold_label.clone())
            .collect();
        if labels.is_empty() {
            None
        } else {
            LabelSet::new(labels).ok()
        }
    }

    pub fn validate_labels(&self, labels: &LabelSet) -> Result<(), PoolError> {
        for s in self.samples.values() {
            if let Some(g) = &s.gold_label {
                if !labels.contains(g) {
                    return Err(PoolError::GoldOutsideLabelSet {
                        id: s.id.clone(),
                        label: g.0.clone(),
                        labels: labels.clone(),
                    });
                }
            }
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct PoolRecord {
    id: Option<String>,
    text: Option<String>,
    #[serde(default)]
    label: Option<String>,
    #[serde(default)]
    meta: BTreeMap<String, String>,
}

impl PoolRecord {
    fn into_sample(self, line: usize) -> Result<Sample, PoolError> {
        let id = self.id.ok_or_else(|| PoolError::Malformed {
            line,
            reason: "missing field `id`".into(),
        })?;
        let text = self.text.ok_or_else(|| PoolError::Malformed {
            line,
            reason: "missing field `text`".into(),
        })?;
        Ok(Sample {
            id,
            text,
            gold_label: self.label.filter(|l| !l.is_empty()).map(Label),
            metadata: self.meta,
        })
    }
}

/// Load a pool file. Every id starts out unannotated.
pub fn load_pool(path: &Path, format: PoolFormat) -> Result<DataPool, PoolError> {
    let file = File::open(path).map_err(|source| PoolError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut pool = DataPool::default();
    match format {
        PoolFormat::Jsonl => {
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line_no = i + 1;
                let line = line.map_err(|e| PoolError::Malformed {
                    line: line_no,
                    reason: e.to_string(),
                })?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: PoolRecord =
                    serde_json::from_str(&line).map_err(|e| PoolError::Malformed {
                        line: line_no,
                        reason: e.to_string(),
                    })?;
                pool.insert(record.into_sample(line_no)?, line_no)?;
            }
        }
        PoolFormat::Csv => {
            let mut reader = csv::ReaderBuilder::new().flexible(false).from_reader(file);
            for result in reader.deserialize::<PoolRecord>() {
                let record = result.map_err(|e| PoolError::Malformed {
                    line: e.position().map(|p| p.line() as usize).unwrap_or(0),
                    reason: e.to_string(),
                })?;
                // header is line 1
                let line_no = pool.len() + 2;
                pool.insert(record.into_sample(line_no)?, line_no)?;
            }
        }
    }
    Ok(pool)
}

/// Write samples in the jsonl pool record format.
pub fn write_pool(path: &Path, samples: &[Sample]) -> std::io::Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(File::create(path)?);
    for s in samples {
        serde_json::to_writer(&mut out, s)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// The annotated set `A = A_H ∪ A_G`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedSet {
    annotations: BTreeMap<String, Annotation>,
    human_ids: BTreeSet<String>,
    llm_ids: BTreeSet<String>,
    next_sequence: u64,
}

impl AnnotatedSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.annotations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.annotations.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Annotation> {
        self.annotations.get(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.annotations.contains_key(id)
    }

    pub fn human_ids(&self) -> &BTreeSet<String> {
        &self.human_ids
    }

    pub fn llm_ids(&self) -> &BTreeSet<String> {
        &self.llm_ids
    }

    pub fn next_sequence(&self) -> u64 {
        self.next_sequence
    }

    pub fn annotations(&self) -> impl Iterator<Item = &Annotation> {
        self.annotations.values()
    }

    /// Annotations in acquisition order.
    pub fn in_sequence_order(&self) -> Vec<&Annotation> {
        let mut v: Vec<&Annotation> = self.annotations.values().collect();
        v.sort_by_key(|a| a.sequence);
        v
    }

    /// Human-annotated samples with their labels, ordered by id.
    pub fn human_labeled(&self) -> impl Iterator<Item = (&str, &Label)> {
        self.human_ids
            .iter()
            .map(move |id| (id.as_str(), &self.annotations[id].label))
    }

    /// Structural invariants; used when loading checkpoints.
    pub fn check_invariants(&self) -> Result<(), String> {
        if !self.human_ids.is_disjoint(&self.llm_ids) {
            return Err("human_ids and llm_ids overlap".into());
        }
        if self.human_ids.len() + self.llm_ids.len() != self.annotations.len() {
            return Err("human_ids ∪ llm_ids does not cover the annotations".into());
        }
        let mut seqs = BTreeSet::new();
        for (id, a) in &self.annotations {
            if &a.sample_id != id {
                return Err(format!("annotation keyed {id:?} names {:?}", a.sample_id));
            }
            let listed = match a.fidelity {
                Fidelity::High => self.human_ids.contains(id),
                Fidelity::Low => self.llm_ids.contains(id),
            };
            if !listed {
                return Err(format!("annotation {id:?} not listed under its fidelity"));
            }
            if a.sequence >= self.next_sequence || !seqs.insert(a.sequence) {
                return Err(format!("annotation {id:?} has invalid sequence {}", a.sequence));
            }
        }
        Ok(())
    }
}

/// Atomically merge `batch` into `set`, removing the ids from the pool.
///
/// Either every annotation is committed or none is. Sequence numbers follow
/// submission order.
pub fn commit_annotations(
    pool: &mut DataPool,
    set: &mut AnnotatedSet,
    labels: &LabelSet,
    batch: Vec<NewAnnotation>,
) -> Result<Vec<Annotation>, CommitError> {
    let mut ids = BTreeSet::new();
    for a in &batch {
        if !pool.is_unannotated(&a.sample_id) || set.contains(&a.sample_id) {
            return Err(CommitError::NotUnannotated(a.sample_id.clone()));
        }
        if !ids.insert(a.sample_id.as_str()) {
            return Err(CommitError::DuplicateInBatch(a.sample_id.clone()));
        }
        if !labels.contains(&a.label) {
            return Err(CommitError::InvalidLabel {
                id: a.sample_id.clone(),
                label: a.label.0.clone(),
                labels: labels.to_string(),
            });
        }
    }
    pool.remove_unannotated(&ids);
    let mut committed = Vec::with_capacity(batch.len());
    for a in batch {
        let ann = Annotation {
            sample_id: a.sample_id,
            label: a.label,
            fidelity: a.fidelity,
            source: a.source,
            round: a.round,
            sequence: set.next_sequence,
        };
        set.next_sequence += 1;
        match ann.fidelity {
            Fidelity::High => set.human_ids.insert(ann.sample_id.clone()),
            Fidelity::Low => set.llm_ids.insert(ann.sample_id.clone()),
        };
        set.annotations.insert(ann.sample_id.clone(), ann.clone());
        committed.push(ann);
    }
    Ok(committed)
}

/// Per-round record kept in the run state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundState {
    pub round: u32,
    pub candidate_ids: Vec<String>,
    pub plan: QueryPlan,
    pub learner_snapshot_id: String,
    pub human_committed: usize,
    pub llm_committed: usize,
    pub failed_ids: Vec<String>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn labels() -> LabelSet {
        LabelSet::new(["neg", "pos"]).unwrap()
    }

    fn write_tmp(contents: &str, ext: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(ext).tempfile().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn new_ann(id: &str, label: &str, fidelity: Fidelity) -> NewAnnotation {
        NewAnnotation {
            sample_id: id.into(),
            label: label.into(),
            fidelity,
            source: "test".into(),
            round: 1,
        }
    }

    #[test]
    fn loads_three_records() {
        let f = write_tmp(
            "{\"id\":\"a\",\"text\":\"x\"}\n{\"id\":\"b\",\"text\":\"y\",\"label\":\"pos\"}\n{\"id\":\"c\",\"text\":\"z\",\"meta\":{\"k\":\"v\"}}\n",
            ".jsonl",
        );
        let pool = load_pool(f.path(), PoolFormat::Jsonl).unwrap();
        assert_eq!(pool.len(), 3);
        assert_eq!(pool.unannotated_ids(), &["a", "b", "c"]);
        assert_eq!(pool.get("b").unwrap().gold_label(), Some(&Label::from("pos")));
        assert_eq!(pool.get("c").unwrap().metadata["k"], "v");
    }

    #[test]
    fn empty_file_is_empty_pool() {
        let f = write_tmp("", ".jsonl");
        let pool = load_pool(f.path(), PoolFormat::Jsonl).unwrap();
        assert!(pool.is_empty());
        assert!(pool.unannotated_ids().is_empty());
    }

    #[test]
    fn duplicate_id_names_id_and_line() {
        let f = write_tmp(
            "{\"id\":\"a\",\"text\":\"x\"}\n{\"id\":\"b\",\"text\":\"y\"}\n{\"id\":\"a\",\"text\":\"z\"}\n",
            ".jsonl",
        );
        match load_pool(f.path(), PoolFormat::Jsonl) {
            Err(PoolError::DuplicateId { id, line }) => {
                assert_eq!(id, "a");
                assert_eq!(line, 3);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_record_reports_line() {
        let f = write_tmp("{\"id\":\"a\",\"text\":\"x\"}\n{\"id\":\"b\"}\n", ".jsonl");
        match load_pool(f.path(), PoolFormat::Jsonl) {
            Err(PoolError::Malformed { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let f = write_tmp("not json\n", ".jsonl");
        assert!(matches!(
            load_pool(f.path(), PoolFormat::Jsonl),
            Err(PoolError::Malformed { line: 1, .. })
        ));
    }

    #[test]
    fn csv_variant() {
        let f = write_tmp("id,text,label\na,hello,pos\nb,world,\n", ".csv");
        let pool = load_pool(f.path(), PoolFormat::Csv).unwrap();
        assert_eq!(pool.len(), 2);
        assert!(pool.get("b").unwrap().gold_label().is_none());
        let f = write_tmp("id,text,label\na,hello,pos\na,again,neg\n", ".csv");
        assert!(matches!(
            load_pool(f.path(), PoolFormat::Csv),
            Err(PoolError::DuplicateId { line: 3, .. })
        ));
    }

    #[test]
    fn commit_splits_by_fidelity() {
        let mut pool =
            DataPool::from_samples(vec![Sample::new("a", ""), Sample::new("b", ""), Sample::new("c", "")])
                .unwrap();
        let mut set = AnnotatedSet::new();
        let done = commit_annotations(
            &mut pool,
            &mut set,
            &labels(),
            vec![new_ann("a", "pos", Fidelity::High), new_ann("b", "neg", Fidelity::Low)],
        )
        .unwrap();
        assert_eq!(done[0].sequence, 0);
        assert_eq!(done[1].sequence, 1);
        assert!(set.human_ids().contains("a"));
        assert!(set.llm_ids().contains("b"));
        assert_eq!(pool.unannotated_ids(), &["c"]);
        set.check_invariants().unwrap();
    }

    #[test]
    fn empty_commit_is_identity() {
        let mut pool = DataPool::from_samples(vec![Sample::new("a", "")]).unwrap();
        let mut set = AnnotatedSet::new();
        let before = (pool.clone(), set.clone());
        commit_annotations(&mut pool, &mut set, &labels(), vec![]).unwrap();
        assert_eq!((pool, set), before);
    }

    #[test]
    fn double_commit_rejected_atomically() {
        let mut pool = DataPool::from_samples(vec![Sample::new("a", ""), Sample::new("b", "")]).unwrap();
        let mut set = AnnotatedSet::new();
        commit_annotations(&mut pool, &mut set, &labels(), vec![new_ann("a", "pos", Fidelity::High)])
            .unwrap();
        let before = (pool.clone(), set.clone());
        let err = commit_annotations(
            &mut pool,
            &mut set,
            &labels(),
            vec![new_ann("b", "pos", Fidelity::Low), new_ann("a", "neg", Fidelity::Low)],
        )
        .unwrap_err();
        assert_eq!(err, CommitError::NotUnannotated("a".into()));
        assert_eq!((pool, set), before);
    }

    #[test]
    fn commit_rejects_unknown_label() {
        let mut pool = DataPool::from_samples(vec![Sample::new("a", "")]).unwrap();
        let mut set = AnnotatedSet::new();
        let err = commit_annotations(
            &mut pool,
            &mut set,
            &labels(),
            vec![new_ann("a", "maybe", Fidelity::High)],
        )
        .unwrap_err();
        assert!(matches!(err, CommitError::InvalidLabel { .. }));
    }

    #[test]
    fn label_set_rejects_duplicates_and_empty() {
        assert!(LabelSet::new(Vec::<Label>::new()).is_err());
        assert!(LabelSet::new(["a", "a"]).is_err());
    }

    #[test]
    fn gold_validation() {
        let pool = DataPool::from_samples(vec![Sample::new("a", "").with_gold("maybe")]).unwrap();
        assert!(pool.validate_labels(&labels()).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            // Random commit sequences preserve conservation, disjointness and
            // strictly increasing sequence numbers.
            #[test]
            fn commit_invariants(ops in proptest::collection::vec(
                proptest::collection::vec((0usize..20, any::<bool>()), 0..5), 0..12)) {
                let samples: Vec<Sample> = (0..20).map(|i| Sample::new(format!("s{i:02}"), "")).collect();
                let mut pool = DataPool::from_samples(samples).unwrap();
                let mut set = AnnotatedSet::new();
                let labels = labels();
                let mut last_seq: Option<u64> = None;
                for batch in ops {
                    let batch: Vec<NewAnnotation> = batch.into_iter().map(|(i, high)| new_ann(
                        &format!("s{i:02}"), "pos", if high { Fidelity::High } else { Fidelity::Low })).collect();
                    if let Ok(done) = commit_annotations(&mut pool, &mut set, &labels, batch) {
                        for a in done {
                            prop_assert!(last_seq.map_or(true, |s| a.sequence > s));
                            last_seq = Some(a.sequence);
                        }
                    }
                    prop_assert_eq!(pool.unannotated_ids().len() + set.len(), 20);
                    prop_assert!(set.human_ids().is_disjoint(set.llm_ids()));
                    prop_assert!(set.check_invariants().is_ok());
                }
            }
        }
    }
}
