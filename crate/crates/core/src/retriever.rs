//! Weighted similarity scoring of memory logs and anchor-centred windows.
//!
//! A log's score against the current situation is the weighted average of
//! three cosine similarities: task text, overall plan, and the retrieval key
//! against the log's trajectory. The key component is the best match over
//! the trajectory's observations (search keys, visual keys) or its actions
//! (action keys); the step attaining it is the anchor around which a window
//! of steps is cut for the prompt.

use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::ops::Range;

use serde::{Deserialize, Serialize};

use crate::embedding::{cosine, cosine_slices, Embedding, EmbeddingError, EmbeddingProvider};
use crate::memory::{EpisodeLog, Filter, MemoryStore, Observation, Step};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RetrieverError {
    #[error("cannot compare {key} key against {element} trajectory element without a cross-modal provider")]
    ModalityMismatch { key: &'static str, element: &'static str },
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("anchor {anchor} out of range for a log of {len} steps")]
    IndexOutOfRange { anchor: usize, len: usize },
    #[error("invalid score weights: {0}")]
    InvalidWeights(&'static str),
    #[error("invalid window policy: {0}")]
    InvalidPolicy(&'static str),
    #[error("query task text is empty")]
    EmptyQuery,
}

/// Component weights for task, plan and key similarity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreWeights {
    pub task: f64,
    pub plan: f64,
    pub key: f64,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        ScoreWeights { task: 0.5, plan: 0.25, key: 0.25 }
    }
}

impl ScoreWeights {
    pub fn new(task: f64, plan: f64, key: f64) -> Result<Self, RetrieverError> {
        let w = ScoreWeights { task, plan, key };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), RetrieverError> {
        let all = [self.task, self.plan, self.key];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(RetrieverError::InvalidWeights("weights must be finite and non-negative"));
        }
        if all.iter().all(|w| *w == 0.0) {
            return Err(RetrieverError::InvalidWeights("at least one weight must be positive"));
        }
        Ok(())
    }

    /// Weights renormalised over the components that are present. When every
    /// present component has zero weight all effective weights are zero.
    pub fn effective(&self, has_plan: bool, has_key: bool) -> ScoreWeights {
        let plan = if has_plan { self.plan } else { 0.0 };
        let key = if has_key { self.key } else { 0.0 };
        let total = self.task + plan + key;
        if total == 0.0 {
            return ScoreWeights { task: 0.0, plan: 0.0, key: 0.0 };
        }
        ScoreWeights { task: self.task / total, plan: plan / total, key: key / total }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyKind {
    ObservationSearch,
    ActionMatch,
    Visual,
}

impl KeyKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            KeyKind::ObservationSearch => "observation_search",
            KeyKind::ActionMatch => "action_match",
            KeyKind::Visual => "visual",
        }
    }
}

/// What the current step is looking for in past trajectories.
#[derive(Debug, Clone, PartialEq)]
pub enum RetrievalKey {
    /// Matched against logged observations ("search: watch").
    ObservationSearch(String),
    /// Matched against logged actions ("action: heat").
    ActionMatch(String),
    /// The current visual observation, matched against logged observations.
    Visual(Embedding),
}

impl RetrievalKey {
    pub fn kind(&self) -> KeyKind {
        match self {
            RetrievalKey::ObservationSearch(_) => KeyKind::ObservationSearch,
            RetrievalKey::ActionMatch(_) => KeyKind::ActionMatch,
            RetrievalKey::Visual(_) => KeyKind::Visual,
        }
    }

    pub fn text(&self) -> Option<&str> {
        match self {
            RetrievalKey::ObservationSearch(t) | RetrievalKey::ActionMatch(t) => Some(t),
            RetrievalKey::Visual(_) => None,
        }
    }

    /// Canonical one-line form, the inverse of [`crate::planner::parse_key_line`]
    /// for text keys.
    pub fn format(&self) -> String {
        match self {
            RetrievalKey::ObservationSearch(t) => alloc::format!("search: {t}"),
            RetrievalKey::ActionMatch(t) => alloc::format!("action: {t}"),
            RetrievalKey::Visual(e) => alloc::format!("visual: <{}-d observation>", e.dim()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryState {
    pub task_text: String,
    pub overall_plan: Option<String>,
    pub key: Option<RetrievalKey>,
    pub filter: Filter,
}

impl QueryState {
    pub fn new(task_text: impl Into<String>) -> Self {
        QueryState { task_text: task_text.into(), overall_plan: None, key: None, filter: Filter::default() }
    }

    pub fn with_plan(mut self, plan: impl Into<String>) -> Self {
        self.overall_plan = Some(plan.into());
        self
    }

    pub fn with_key(mut self, key: RetrievalKey) -> Self {
        self.key = Some(key);
        self
    }

    pub fn with_filter(mut self, filter: Filter) -> Self {
        self.filter = filter;
        self
    }

    fn plan_text(&self) -> Option<&str> {
        self.overall_plan.as_deref().filter(|p| !p.trim().is_empty())
    }
}

/// How many logs to return and how many steps to keep around each anchor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowPolicy {
    pub num_experiences: usize,
    pub steps_before: usize,
    pub steps_after: usize,
}

impl WindowPolicy {
    /// Action-keyed retrieval: four experiences, ten steps either side.
    pub const ACTION: WindowPolicy = WindowPolicy { num_experiences: 4, steps_before: 10, steps_after: 10 };
    /// Observation-keyed retrieval: eight experiences, five steps either side.
    pub const OBSERVATION: WindowPolicy = WindowPolicy { num_experiences: 8, steps_before: 5, steps_after: 5 };
    /// Shopping profile: three experiences, five steps either side.
    pub const SHOP: WindowPolicy = WindowPolicy { num_experiences: 3, steps_before: 5, steps_after: 5 };

    pub fn new(num_experiences: usize, steps_before: usize, steps_after: usize) -> Result<Self, RetrieverError> {
        let p = WindowPolicy { num_experiences, steps_before, steps_after };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), RetrieverError> {
        if self.num_experiences == 0 {
            return Err(RetrieverError::InvalidPolicy("num_experiences must be at least 1"));
        }
        Ok(())
    }

    pub fn max_len(&self) -> usize {
        self.steps_before.saturating_add(self.steps_after).saturating_add(1)
    }
}

/// Per-component similarities behind a log's score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    pub task: f64,
    pub plan: Option<f64>,
    pub key: Option<f64>,
    pub anchor_index: Option<usize>,
    pub effective_weights: ScoreWeights,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievedExperience {
    pub log_id: String,
    pub score: f64,
    /// Step attaining the best key similarity; `None` for keyless queries.
    pub anchor_index: Option<usize>,
    pub window: Vec<Step>,
    /// Index of the anchor inside `window`.
    pub anchor_in_window: Option<usize>,
    pub source_task_text: String,
    pub source_plan: String,
    pub breakdown: ScoreBreakdown,
}

/// Embedded form of a query, computed once per retrieval.
struct PreparedQuery {
    task: Embedding,
    plan: Option<Embedding>,
    key: Option<PreparedKey>,
}

enum PreparedKey {
    Observations(KeyKind, Embedding),
    Actions(Embedding),
}

fn embed_text<P: EmbeddingProvider + ?Sized>(provider: &P, text: &str) -> Result<Option<Embedding>, RetrieverError> {
    if text.trim().is_empty() {
        return Ok(None);
    }
    Ok(Some(provider.embed(text)?))
}

fn cos_opt(a: &Embedding, b: Option<&Embedding>) -> Result<f64, RetrieverError> {
    match b {
        Some(b) => Ok(cosine(a, b)?),
        None => Ok(0.0),
    }
}

fn prepare_key<P: EmbeddingProvider + ?Sized>(key: &RetrievalKey, provider: &P) -> Result<PreparedKey, RetrieverError> {
    Ok(match key {
        RetrievalKey::ObservationSearch(t) => PreparedKey::Observations(KeyKind::ObservationSearch, provider.embed(t)?),
        RetrievalKey::ActionMatch(t) => PreparedKey::Actions(provider.embed(t)?),
        RetrievalKey::Visual(v) => PreparedKey::Observations(KeyKind::Visual, v.clone()),
    })
}

fn prepare<P: EmbeddingProvider + ?Sized>(query: &QueryState, provider: &P) -> Result<PreparedQuery, RetrieverError> {
    if query.task_text.trim().is_empty() {
        return Err(RetrieverError::EmptyQuery);
    }
    Ok(PreparedQuery {
        task: provider.embed(&query.task_text)?,
        plan: match query.plan_text() {
            Some(p) => Some(provider.embed(p)?),
            None => None,
        },
        key: match &query.key {
            Some(k) => Some(prepare_key(k, provider)?),
            None => None,
        },
    })
}

/// Indices of the steps a key is compared against: environment steps, or
/// every step when the log holds only think steps.
fn candidate_steps(log: &EpisodeLog) -> impl Iterator<Item = (usize, &Step)> {
    let any_env = log.steps.iter().any(|s| !s.is_think());
    log.steps.iter().enumerate().filter(move |(_, s)| !any_env || !s.is_think())
}

fn observation_similarity<P: EmbeddingProvider + ?Sized>(
    kind: KeyKind,
    key: &Embedding,
    obs: &Observation,
    provider: &P,
) -> Result<f64, RetrieverError> {
    match (kind, obs) {
        (KeyKind::Visual, Observation::Vector { vector }) => Ok(cosine_slices(key.values(), vector)?),
        (KeyKind::ObservationSearch, Observation::Text { text }) => cos_opt(key, embed_text(provider, text)?.as_ref()),
        (KeyKind::Visual, Observation::Text { text }) => {
            if !provider.cross_modal() {
                return Err(RetrieverError::ModalityMismatch { key: "visual", element: "text" });
            }
            cos_opt(key, embed_text(provider, text)?.as_ref())
        }
        (_, Observation::Vector { vector }) => {
            if !provider.cross_modal() {
                return Err(RetrieverError::ModalityMismatch { key: "text", element: "vector" });
            }
            Ok(cosine_slices(key.values(), vector)?)
        }
        (KeyKind::ActionMatch, Observation::Text { .. }) => unreachable!("action keys never compare observations"),
    }
}

fn prepared_key_similarity<P: EmbeddingProvider + ?Sized>(
    key: &PreparedKey,
    log: &EpisodeLog,
    provider: &P,
) -> Result<(f64, usize), RetrieverError> {
    let mut best: Option<(f64, usize)> = None;
    for (idx, step) in candidate_steps(log) {
        let sim = match key {
            PreparedKey::Actions(k) => cos_opt(k, embed_text(provider, &step.action)?.as_ref())?,
            PreparedKey::Observations(kind, k) => observation_similarity(*kind, k, &step.observation, provider)?,
        };
        // strict comparison keeps the earliest index on ties
        if best.is_none_or(|(s, _)| sim > s) {
            best = Some((sim, idx));
        }
    }
    Ok(best.unwrap_or((0.0, 0)))
}

/// Best similarity between `key` and the relevant trajectory sequence of
/// `log`, with the earliest step index attaining it.
pub fn key_similarity<P: EmbeddingProvider + ?Sized>(
    key: &RetrievalKey,
    log: &EpisodeLog,
    provider: &P,
) -> Result<(f64, usize), RetrieverError> {
    let prepared = prepare_key(key, provider)?;
    prepared_key_similarity(&prepared, log, provider)
}

fn breakdown_prepared<P: EmbeddingProvider + ?Sized>(
    query: &PreparedQuery,
    log: &EpisodeLog,
    weights: &ScoreWeights,
    provider: &P,
) -> Result<ScoreBreakdown, RetrieverError> {
    let task = cos_opt(&query.task, embed_text(provider, &log.task.description)?.as_ref())?;
    let plan = match &query.plan {
        Some(p) => Some(cos_opt(p, embed_text(provider, &log.overall_plan)?.as_ref())?),
        None => None,
    };
    let (key, anchor_index) = match &query.key {
        Some(k) => {
            let (s, a) = prepared_key_similarity(k, log, provider)?;
            (Some(s), Some(a))
        }
        None => (None, None),
    };
    let eff = weights.effective(plan.is_some(), key.is_some());
    let total = eff.task * task + eff.plan * plan.unwrap_or(0.0) + eff.key * key.unwrap_or(0.0);
    Ok(ScoreBreakdown { task, plan, key, anchor_index, effective_weights: eff, total })
}

/// Component-wise similarity of `log` to the query, with the weighted total.
pub fn score_breakdown<P: EmbeddingProvider + ?Sized>(
    query: &QueryState,
    log: &EpisodeLog,
    weights: &ScoreWeights,
    provider: &P,
) -> Result<ScoreBreakdown, RetrieverError> {
    weights.validate()?;
    let prepared = prepare(query, provider)?;
    breakdown_prepared(&prepared, log, weights, provider)
}

pub fn score_log<P: EmbeddingProvider + ?Sized>(
    query: &QueryState,
    log: &EpisodeLog,
    weights: &ScoreWeights,
    provider: &P,
) -> Result<f64, RetrieverError> {
    Ok(score_breakdown(query, log, weights, provider)?.total)
}

/// Inclusive-exclusive step range kept for a given anchor.
pub fn window_range(len: usize, anchor: Option<usize>, policy: &WindowPolicy) -> Result<Range<usize>, RetrieverError> {
    match anchor {
        Some(a) if a >= len => Err(RetrieverError::IndexOutOfRange { anchor: a, len }),
        Some(a) => {
            let start = a.saturating_sub(policy.steps_before);
            let end = a.saturating_add(policy.steps_after).min(len - 1);
            Ok(start..end + 1)
        }
        None => Ok(0..policy.max_len().min(len)),
    }
}

/// The steps of `log` around `anchor`; keyless queries get the opening steps.
pub fn extract_window(log: &EpisodeLog, anchor: Option<usize>, policy: &WindowPolicy) -> Result<Vec<Step>, RetrieverError> {
    let range = window_range(log.steps.len(), anchor, policy)?;
    Ok(log.steps[range].to_vec())
}

/// Ranking order: higher score first, then later insertion, then log id.
fn rank_order(a: (f64, usize, &str), b: (f64, usize, &str)) -> Ordering {
    b.0.total_cmp(&a.0).then(b.1.cmp(&a.1)).then(a.2.cmp(b.2))
}

/// Score every log passing the query filter and return the best
/// `policy.num_experiences`, each with its window.
pub fn retrieve<P: EmbeddingProvider + ?Sized>(
    query: &QueryState,
    store: &MemoryStore,
    weights: &ScoreWeights,
    policy: &WindowPolicy,
    provider: &P,
) -> Result<Vec<RetrievedExperience>, RetrieverError> {
    weights.validate()?;
    policy.validate()?;
    let prepared = prepare(query, provider)?;
    let mut scored = Vec::new();
    for (idx, log) in store.filter(&query.filter) {
        let breakdown = breakdown_prepared(&prepared, log, weights, provider)?;
        scored.push((idx, log, breakdown));
    }
    scored.sort_by(|a, b| rank_order((a.2.total, a.0, &a.1.log_id), (b.2.total, b.0, &b.1.log_id)));
    scored.truncate(policy.num_experiences);
    scored
        .into_iter()
        .map(|(_, log, breakdown)| {
            let range = window_range(log.steps.len(), breakdown.anchor_index, policy)?;
            Ok(RetrievedExperience {
                log_id: log.log_id.clone(),
                score: breakdown.total,
                anchor_index: breakdown.anchor_index,
                anchor_in_window: breakdown.anchor_index.map(|a| a - range.start),
                window: log.steps[range].to_vec(),
                source_task_text: log.task.description.clone(),
                source_plan: log.overall_plan.clone(),
                breakdown,
            })
        })
        .collect()
}
