//! Episode logs and the append-only experience store.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::hash::Fnv64;

/// Current on-disk schema version of a memory file.
pub const SCHEMA_VERSION: u32 = 1;

/// Schema versions this build can read.
pub fn schema_supported(version: u32) -> bool {
    version == SCHEMA_VERSION
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MemoryError {
    #[error("log {0} rejected: only successful episodes are stored")]
    RejectedLog(String),
    #[error("observation dimension {found} does not match store dimension {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("log {log_id} is invalid: {reason}")]
    InvalidLog { log_id: String, reason: &'static str },
    #[error("log id {0} already stored with a different trajectory")]
    DuplicateLogId(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: String,
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_type: Option<String>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl TaskSpec {
    pub fn new(id: impl Into<String>, description: impl Into<String>) -> Self {
        TaskSpec { id: id.into(), description: description.into(), task_type: None, metadata: BTreeMap::new() }
    }

    pub fn with_type(mut self, task_type: impl Into<String>) -> Self {
        self.task_type = Some(task_type.into());
        self
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.metadata.insert(key.into(), value.into());
        self
    }
}

/// What the agent perceived after an action: a textual description or a
/// precomputed embedding of a visual frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Observation {
    Text { text: String },
    Vector { vector: Vec<f64> },
}

impl Observation {
    pub fn text(text: impl Into<String>) -> Self {
        Observation::Text { text: text.into() }
    }

    pub fn vector(values: Vec<f64>) -> Self {
        Observation::Vector { vector: values }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Observation::Text { text } => Some(text),
            Observation::Vector { .. } => None,
        }
    }

    pub fn as_vector(&self) -> Option<&[f64]> {
        match self {
            Observation::Vector { vector } => Some(vector),
            Observation::Text { .. } => None,
        }
    }
}

/// One trajectory element. Think steps carry `action_plan` and a synthetic
/// "OK." observation; environment steps leave it empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action_plan: Option<String>,
    pub action: String,
    pub observation: Observation,
}

impl Step {
    pub fn act(action: impl Into<String>, observation: Observation) -> Self {
        Step { action_plan: None, action: action.into(), observation }
    }

    pub fn think(plan: impl Into<String>) -> Self {
        let plan = plan.into();
        let action = alloc::format!("think: {plan}");
        Step { action_plan: Some(plan), action, observation: Observation::text("OK.") }
    }

    pub fn is_think(&self) -> bool {
        self.action_plan.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub backend_id: String,
    pub trial_index: u32,
    /// Unix time in milliseconds.
    pub created_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub log_id: String,
    pub task: TaskSpec,
    pub overall_plan: String,
    pub steps: Vec<Step>,
    pub reward: f64,
    pub success: bool,
    pub provenance: Provenance,
}

impl EpisodeLog {
    /// Identity used for deduplication: the task text plus a hash of the action sequence.
    pub fn identity(&self) -> (String, u64) {
        let mut h = Fnv64::new();
        for step in &self.steps {
            h.write(step.action.as_bytes());
            h.write(&[0xff]);
        }
        (self.task.description.clone(), h.finish())
    }

    fn validate(&self, embedding_dim: usize) -> Result<(), MemoryError> {
        let invalid = |reason| MemoryError::InvalidLog { log_id: self.log_id.clone(), reason };
        if !self.success {
            return Err(MemoryError::RejectedLog(self.log_id.clone()));
        }
        if self.log_id.is_empty() {
            return Err(invalid("empty log id"));
        }
        if self.task.description.trim().is_empty() {
            return Err(invalid("empty task description"));
        }
        if self.steps.is_empty() {
            return Err(invalid("empty trajectory"));
        }
        if !(0.0..=1.0).contains(&self.reward) {
            return Err(invalid("reward outside [0, 1]"));
        }
        if self.provenance.backend_id.is_empty() {
            return Err(invalid("empty provenance backend id"));
        }
        for step in &self.steps {
            if step.action.trim().is_empty() {
                return Err(invalid("empty action"));
            }
            if let Observation::Vector { vector } = &step.observation {
                if vector.len() != embedding_dim {
                    return Err(MemoryError::DimensionMismatch { expected: embedding_dim, found: vector.len() });
                }
                if vector.iter().any(|v| !v.is_finite()) {
                    return Err(invalid("non-finite observation vector"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InsertOutcome {
    Inserted,
    Duplicate,
}

/// Metadata predicate. An empty filter matches everything.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Filter {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_type: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata_equals: BTreeMap<String, String>,
}

impl Filter {
    pub fn task_type(task_type: impl Into<String>) -> Self {
        Filter { task_type: Some(task_type.into()), metadata_equals: BTreeMap::new() }
    }

    pub fn is_empty(&self) -> bool {
        self.task_type.is_none() && self.metadata_equals.is_empty()
    }

    pub fn matches(&self, task: &TaskSpec) -> bool {
        if let Some(tt) = &self.task_type {
            if task.task_type.as_deref() != Some(tt.as_str()) {
                return false;
            }
        }
        self.metadata_equals.iter().all(|(k, v)| task.metadata.get(k) == Some(v))
    }
}

/// Append-only store of successful episodes.
///
/// Cloning is cheap and yields an immutable snapshot: logs are shared and an
/// insert on one handle never shows up in another.
#[derive(Debug, Clone)]
pub struct MemoryStore {
    logs: Arc<Vec<Arc<EpisodeLog>>>,
    identities: Arc<BTreeSet<(String, u64)>>,
    embedding_dim: usize,
    schema_version: u32,
}

impl MemoryStore {
    pub fn new(embedding_dim: usize) -> Self {
        MemoryStore {
            logs: Arc::new(Vec::new()),
            identities: Arc::new(BTreeSet::new()),
            embedding_dim,
            schema_version: SCHEMA_VERSION,
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }

    pub fn schema_version(&self) -> u32 {
        self.schema_version
    }

    pub fn len(&self) -> usize {
        self.logs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logs.is_empty()
    }

    /// Logs in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = &EpisodeLog> {
        self.logs.iter().map(|l| &**l)
    }

    pub fn get(&self, log_id: &str) -> Option<&EpisodeLog> {
        self.iter().find(|l| l.log_id == log_id)
    }

    pub fn insert(&mut self, log: EpisodeLog) -> Result<InsertOutcome, MemoryError> {
        log.validate(self.embedding_dim)?;
        let identity = log.identity();
        if self.identities.contains(&identity) {
            return Ok(InsertOutcome::Duplicate);
        }
        if self.iter().any(|l| l.log_id == log.log_id) {
            return Err(MemoryError::DuplicateLogId(log.log_id));
        }
        Arc::make_mut(&mut self.identities).insert(identity);
        Arc::make_mut(&mut self.logs).push(Arc::new(log));
        Ok(InsertOutcome::Inserted)
    }

    /// Logs matching `filter`, with their insertion index, in insertion order.
    pub fn filter<'a>(&'a self, filter: &'a Filter) -> impl Iterator<Item = (usize, &'a EpisodeLog)> + 'a {
        self.iter().enumerate().filter(move |(_, l)| filter.matches(&l.task))
    }

    /// Distinct backend ids that produced the stored logs, sorted.
    pub fn backend_ids(&self) -> Vec<String> {
        let ids: BTreeSet<&str> = self.iter().map(|l| l.provenance.backend_id.as_str()).collect();
        ids.into_iter().map(String::from).collect()
    }
}

impl PartialEq for MemoryStore {
    fn eq(&self, other: &Self) -> bool {
        self.embedding_dim == other.embedding_dim
            && self.schema_version == other.schema_version
            && self.logs.len() == other.logs.len()
            && self.iter().zip(other.iter()).all(|(a, b)| a == b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::vec;

    pub(crate) fn log(id: &str, desc: &str, task_type: &str, actions: &[&str]) -> EpisodeLog {
        EpisodeLog {
            log_id: id.into(),
            task: TaskSpec::new(id, desc).with_type(task_type),
            overall_plan: format!("To solve the task, {desc}."),
            steps: actions.iter().map(|a| Step::act(*a, Observation::text(format!("after {a}")))).collect(),
            reward: 1.0,
            success: true,
            provenance: Provenance { backend_id: "scripted-A".into(), trial_index: 1, created_at: 0 },
        }
    }

    #[test]
    fn insert_into_empty_store() {
        let mut store = MemoryStore::new(4);
        let l = log("a", "put a mug in desk", "pick", &["go to shelf 1", "take mug 1 from shelf 1", "go to desk 1", "put mug 1 in/on desk 1", "look", "inventory"]);
        assert_eq!(store.insert(l).unwrap(), InsertOutcome::Inserted);
        assert_eq!(store.len(), 1);
    }

    #[test]
    fn duplicate_insert_is_noop() {
        let mut store = MemoryStore::new(4);
        let l = log("a", "put a mug in desk", "pick", &["go to desk 1"]);
        store.insert(l.clone()).unwrap();
        assert_eq!(store.insert(l.clone()).unwrap(), InsertOutcome::Duplicate);
        // same identity under a new id is still a duplicate
        let mut renamed = l;
        renamed.log_id = "b".into();
        assert_eq!(store.insert(renamed).unwrap(), InsertOutcome::Duplicate);
        assert_eq!(store.len(), 1);
    }

    #[test]
    fn id_collision_with_different_trajectory() {
        let mut store = MemoryStore::new(4);
        store.insert(log("a", "put a mug in desk", "pick", &["go to desk 1"])).unwrap();
        let err = store.insert(log("a", "put a mug in desk", "pick", &["go to shelf 1"])).unwrap_err();
        assert_eq!(err, MemoryError::DuplicateLogId("a".into()));
    }

    #[test]
    fn failed_log_rejected() {
        let mut store = MemoryStore::new(4);
        let mut l = log("a", "put a mug in desk", "pick", &["go to desk 1"]);
        l.success = false;
        l.reward = 0.0;
        assert_eq!(store.insert(l), Err(MemoryError::RejectedLog("a".into())));
        assert!(store.is_empty());
    }

    #[test]
    fn vector_dimension_checked() {
        let mut store = MemoryStore::new(3);
        let mut l = log("a", "t", "pick", &["go"]);
        l.steps[0].observation = Observation::vector(vec![1.0, 2.0]);
        assert_eq!(store.insert(l), Err(MemoryError::DimensionMismatch { expected: 3, found: 2 }));
    }

    #[test]
    fn invalid_logs() {
        let mut store = MemoryStore::new(3);
        let mut l = log("a", "t", "pick", &["go"]);
        l.steps.clear();
        assert!(matches!(store.insert(l), Err(MemoryError::InvalidLog { .. })));
        let mut l = log("a", "t", "pick", &["go"]);
        l.provenance.backend_id.clear();
        assert!(matches!(store.insert(l), Err(MemoryError::InvalidLog { .. })));
        let mut l = log("a", "t", "pick", &["go"]);
        l.reward = 1.5;
        assert!(matches!(store.insert(l), Err(MemoryError::InvalidLog { .. })));
    }

    #[test]
    fn filter_by_type_and_metadata() {
        let mut store = MemoryStore::new(3);
        store.insert(log("1", "put a mug in desk", "pick", &["a"])).unwrap();
        store.insert(log("2", "clean some cloth", "clean", &["b"])).unwrap();
        store.insert(log("3", "put a pen in safe", "pick", &["c"])).unwrap();
        let f = Filter::task_type("pick");
        let ids: Vec<_> = store.filter(&f).map(|(i, l)| (i, l.log_id.as_str())).collect();
        assert_eq!(ids, vec![(0, "1"), (2, "3")]);
        assert_eq!(store.filter(&Filter::default()).count(), 3);

        let mut shop = MemoryStore::new(3);
        let mut a = log("a", "buy foundation", "shop", &["search[foundation]"]);
        a.task = a.task.with_meta("category", "beauty");
        let mut b = log("b", "buy juice", "shop", &["search[juice]"]);
        b.task = b.task.with_meta("category", "food");
        shop.insert(a).unwrap();
        shop.insert(b).unwrap();
        let mut f = Filter::default();
        f.metadata_equals.insert("category".into(), "beauty".into());
        let ids: Vec<_> = shop.filter(&f).map(|(_, l)| l.log_id.clone()).collect();
        assert_eq!(ids, vec![String::from("a")]);
    }

    #[test]
    fn snapshots_are_isolated() {
        let mut store = MemoryStore::new(3);
        store.insert(log("1", "x", "pick", &["a"])).unwrap();
        let snap = store.clone();
        store.insert(log("2", "y", "pick", &["b"])).unwrap();
        assert_eq!(snap.len(), 1);
        assert_eq!(store.len(), 2);
    }
}
