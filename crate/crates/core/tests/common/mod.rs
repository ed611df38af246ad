//! Random retrieval instances and a brute-force reference ranking.
//!
//! The reference never calls into the retriever: it embeds text straight
//! from the word table and scores every log by hand.

#![allow(dead_code)]

use std::collections::HashMap;

use proptest::prelude::RngExt;
use proptest::test_runner::TestRng;
use rap_core::{
    Embedding, EmbeddingError, EmbeddingProvider, EpisodeLog, Filter, MemoryStore, Observation, Provenance,
    QueryState, RetrievalKey, ScoreWeights, Step, TaskSpec, WindowPolicy,
};

pub const VOCAB: [&str; 12] =
    ["watch", "mug", "heat", "take", "shelf", "desk", "egg", "go", "put", "fridge", "open", "cool"];

/// Text embedder summing fixed per-word vectors. Unknown words add nothing.
#[derive(Debug, Clone)]
pub struct TableEmbedder {
    pub dim: usize,
    pub table: HashMap<String, Vec<f64>>,
    pub cross_modal: bool,
}

impl TableEmbedder {
    pub fn random(rng: &mut TestRng, dim: usize) -> Self {
        let table = VOCAB
            .iter()
            .map(|w| {
                // every so often a word maps to the zero vector
                let v = if rng.random_bool(0.08) {
                    vec![0.0; dim]
                } else {
                    (0..dim).map(|_| rng.random_range(-3i32..=3) as f64).collect()
                };
                (w.to_string(), v)
            })
            .collect();
        TableEmbedder { dim, table, cross_modal: rng.random_bool(0.5) }
    }

    pub fn vector(&self, text: &str) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for w in text.split_whitespace() {
            if let Some(v) = self.table.get(w) {
                for (o, x) in out.iter_mut().zip(v) {
                    *o += x;
                }
            }
        }
        out
    }
}

impl EmbeddingProvider for TableEmbedder {
    fn provider_id(&self) -> &str {
        "table"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn cross_modal(&self) -> bool {
        self.cross_modal
    }

    fn embed(&self, text: &str) -> Result<Embedding, EmbeddingError> {
        if text.trim().is_empty() {
            return Err(EmbeddingError::EmptyInput);
        }
        Embedding::new(self.vector(text))
    }
}

pub struct Instance {
    pub store: MemoryStore,
    pub query: QueryState,
    pub weights: ScoreWeights,
    pub policy: WindowPolicy,
    pub provider: TableEmbedder,
}

fn words(rng: &mut TestRng, min: usize, max: usize) -> String {
    let n = rng.random_range(min..=max);
    (0..n).map(|_| VOCAB[rng.random_range(0..VOCAB.len())]).collect::<Vec<_>>().join(" ")
}

fn vector(rng: &mut TestRng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(-4i32..=4) as f64 / 2.0).collect()
}

const TYPES: [&str; 3] = ["pick", "heat", "cool"];

pub fn random_instance(rng: &mut TestRng) -> Instance {
    let dim = rng.random_range(2..=32usize);
    let provider = TableEmbedder::random(rng, dim);
    // share of vector observations: none, some, or all
    let vector_share = [0.0, 0.3, 1.0][rng.random_range(0..3usize)];
    let mut store = MemoryStore::new(dim);
    let n_logs = rng.random_range(0..=200usize);
    for i in 0..n_logs {
        let n_steps = rng.random_range(1..=50usize);
        let steps = (0..n_steps)
            .map(|_| {
                if rng.random_bool(0.15) {
                    Step::think(words(rng, 1, 3))
                } else {
                    let obs = if rng.random_bool(vector_share) {
                        Observation::vector(vector(rng, dim))
                    } else {
                        Observation::text(words(rng, 0, 3))
                    };
                    Step::act(words(rng, 1, 3), obs)
                }
            })
            .collect();
        let task = TaskSpec::new(format!("task{i}"), words(rng, 1, 4)).with_type(TYPES[rng.random_range(0..3usize)]);
        let plan = if rng.random_bool(0.1) { String::new() } else { words(rng, 1, 5) };
        let log = EpisodeLog {
            log_id: format!("log{i:03}"),
            task,
            overall_plan: plan,
            steps,
            reward: 1.0,
            success: true,
            provenance: Provenance { backend_id: "gen".into(), trial_index: 1, created_at: i as u64 },
        };
        store.insert(log).expect("generated log is valid");
    }

    let mut query = QueryState::new(words(rng, 1, 4));
    query.overall_plan = match rng.random_range(0..4u8) {
        0 => None,
        1 => Some("  ".into()),
        _ => Some(words(rng, 1, 5)),
    };
    query.key = match rng.random_range(0..4u8) {
        0 => None,
        1 => Some(RetrievalKey::ObservationSearch(words(rng, 1, 2))),
        2 => Some(RetrievalKey::ActionMatch(words(rng, 1, 2))),
        _ => Some(RetrievalKey::Visual(Embedding::new(vector(rng, dim)).unwrap())),
    };
    if rng.random_bool(0.3) {
        query.filter = Filter::task_type(TYPES[rng.random_range(0..3usize)]);
    }
    let mut w = || if rng.random_bool(0.15) { 0.0 } else { rng.random_range(0.0..2.0) };
    let mut weights = ScoreWeights { task: w(), plan: w(), key: w() };
    if weights.task + weights.plan + weights.key == 0.0 {
        weights.task = 1.0;
    }
    let policy = WindowPolicy {
        num_experiences: rng.random_range(1..=10usize),
        steps_before: rng.random_range(0..=12usize),
        steps_after: rng.random_range(0..=12usize),
    };
    Instance { store, query, weights, policy, provider }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    pub log_id: String,
    pub score: f64,
    pub anchor: Option<usize>,
    pub window: Vec<Step>,
}

/// Cosine with the zero-vector convention; dimensions always agree here.
pub fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

fn text_sim(e: &TableEmbedder, query: &[f64], text: &str) -> f64 {
    if text.trim().is_empty() {
        0.0
    } else {
        cos(query, &e.vector(text))
    }
}

/// Reference ranking, or `None` when the retriever must refuse the query
/// (a text key against vector frames, or the reverse, without a cross-modal
/// embedder).
pub fn reference(inst: &Instance) -> Option<Vec<Hit>> {
    let e = &inst.provider;
    let q = &inst.query;
    let task_v = e.vector(&q.task_text);
    let plan_v = q.overall_plan.as_deref().filter(|p| !p.trim().is_empty()).map(|p| e.vector(p));
    let w = inst.weights;

    let mut scored: Vec<(f64, usize, &EpisodeLog, Option<usize>)> = Vec::new();
    for (idx, log) in inst.store.iter().enumerate() {
        if let Some(t) = &q.filter.task_type {
            if log.task.task_type.as_deref() != Some(t) {
                continue;
            }
        }
        let task_sim = text_sim(e, &task_v, &log.task.description);
        let plan_sim = plan_v.as_ref().map(|p| text_sim(e, p, &log.overall_plan));

        let key = match &q.key {
            None => None,
            Some(key) => {
                let has_env = log.steps.iter().any(|s| s.action_plan.is_none());
                let mut best: Option<(f64, usize)> = None;
                for (i, s) in log.steps.iter().enumerate() {
                    if has_env && s.action_plan.is_some() {
                        continue;
                    }
                    let sim = match (key, &s.observation) {
                        (RetrievalKey::ActionMatch(k), _) => text_sim(e, &e.vector(k), &s.action),
                        (RetrievalKey::ObservationSearch(k), Observation::Text { text }) => text_sim(e, &e.vector(k), text),
                        (RetrievalKey::ObservationSearch(k), Observation::Vector { vector }) => {
                            if !e.cross_modal {
                                return None;
                            }
                            cos(&e.vector(k), vector)
                        }
                        (RetrievalKey::Visual(k), Observation::Vector { vector }) => cos(k.values(), vector),
                        (RetrievalKey::Visual(k), Observation::Text { text }) => {
                            if !e.cross_modal {
                                return None;
                            }
                            text_sim(e, k.values(), text)
                        }
                    };
                    match best {
                        Some((b, _)) if sim <= b => {}
                        _ => best = Some((sim, i)),
                    }
                }
                best
            }
        };

        let plan_w = if plan_sim.is_some() { w.plan } else { 0.0 };
        let key_w = if key.is_some() { w.key } else { 0.0 };
        let sum = w.task + plan_w + key_w;
        let total = if sum == 0.0 {
            0.0
        } else {
            (w.task / sum) * task_sim + (plan_w / sum) * plan_sim.unwrap_or(0.0) + (key_w / sum) * key.map_or(0.0, |k| k.0)
        };
        scored.push((total, idx, log, key.map(|k| k.1)));
    }

    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.cmp(&a.1)).then(a.2.log_id.cmp(&b.2.log_id)));
    scored.truncate(inst.policy.num_experiences);
    let p = inst.policy;
    Some(
        scored
            .into_iter()
            .map(|(score, _, log, anchor)| {
                let len = log.steps.len();
                let (lo, hi) = match anchor {
                    Some(a) => (a.saturating_sub(p.steps_before), (a + p.steps_after).min(len - 1)),
                    None => (0, (p.steps_before + p.steps_after + 1).min(len) - 1),
                };
                Hit { log_id: log.log_id.clone(), score, anchor, window: log.steps[lo..=hi].to_vec() }
            })
            .collect(),
    )
}

pub fn rng() -> TestRng {
    TestRng::deterministic_rng(proptest::test_runner::RngAlgorithm::ChaCha)
}

/// Compare the retriever against the reference on one instance.
pub fn check(inst: &Instance) -> Result<(), String> {
    let got = rap_core::retrieve(&inst.query, &inst.store, &inst.weights, &inst.policy, &inst.provider);
    match (reference(inst), got) {
        (None, Err(_)) => Ok(()),
        (None, Ok(_)) => Err("retriever accepted a modality mismatch".into()),
        (Some(_), Err(e)) => Err(format!("retriever failed: {e}")),
        (Some(want), Ok(got)) => {
            if want.len() != got.len() {
                return Err(format!("{} hits, expected {}", got.len(), want.len()));
            }
            for (r, (w, g)) in want.iter().zip(&got).enumerate() {
                if w.log_id != g.log_id {
                    return Err(format!("rank {r}: {} vs expected {}", g.log_id, w.log_id));
                }
                if w.anchor != g.anchor_index {
                    return Err(format!("rank {r}: anchor {:?} vs expected {:?}", g.anchor_index, w.anchor));
                }
                if (w.score - g.score).abs() > 1e-9 {
                    return Err(format!("rank {r}: score {} vs expected {}", g.score, w.score));
                }
                if w.window != g.window {
                    return Err(format!("rank {r}: window differs"));
                }
            }
            Ok(())
        }
    }
}
