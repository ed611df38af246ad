//! The commands behind the CLI: evaluation, memory construction, transfer,
//! memory inspection and fixture listing.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rap_core::envs::{Environment, FixtureSuite, MiniHouse, VectorObservations};
use rap_core::orchestrator::{
    build_memory_from_training, run_episode_with, run_trials_with, Agent, BuildSummary, EpisodeResult, FailureKind,
    OrchestratorError, RunConfig, TrialsOutcome,
};
use rap_core::retriever::{retrieve, QueryState, ScoreBreakdown, WindowPolicy};
use rap_core::{CompletionBackend, EmbeddingProvider, Filter, HashingEmbedder, MemoryStore, TaskSpec};
use serde::{Deserialize, Serialize};

use crate::cache::CachedProvider;
use crate::config::{BackendKind, Config, ConfigError, EmbeddingKind, EnvKind};
use crate::fixtures::{load_agent, load_suite, FixtureError};
use crate::http::{AuditLog, HttpChatBackend, HttpEmbedder, HttpSettings};
use crate::report::{per_task_type, MemoryBlock, Report, TransferBlock};
use crate::scripted::{load_script, ScriptError, ScriptedBackend};
use crate::store::{self, StoreError};

pub type SharedBackend = Arc<dyn CompletionBackend + Send + Sync>;
pub type SharedProvider = Arc<dyn EmbeddingProvider + Send + Sync>;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Fixture(#[from] FixtureError),
    #[error(transparent)]
    Script(#[from] ScriptError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Orchestrator(#[from] OrchestratorError),
    #[error("cannot write {path}: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl HarnessError {
    /// 4 for output failures, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Output { .. } => 4,
            _ => 2,
        }
    }
}

/// Resolved pieces of a run.
pub struct Runtime {
    pub config: Config,
    pub run: RunConfig,
    pub agent: Agent,
    pub backend: SharedBackend,
    pub provider: SharedProvider,
    /// Attempt log of the HTTP chat backend, when one is in use.
    pub audit: Option<Arc<AuditLog>>,
}

fn token(var: &Option<String>, lookup: &dyn Fn(&str) -> Option<String>) -> Result<Option<String>, ConfigError> {
    match var {
        None => Ok(None),
        Some(name) => {
            lookup(name).map(Some).ok_or_else(|| ConfigError::Invalid(format!("environment variable {name} is not set")))
        }
    }
}

fn secs(s: f64) -> Duration {
    Duration::from_secs_f64(s)
}

/// Embedder named by the `[memory]` section, behind a cache.
pub fn provider_for(config: &Config, lookup: &dyn Fn(&str) -> Option<String>) -> Result<SharedProvider, HarnessError> {
    let m = &config.memory;
    Ok(match m.embedding {
        EmbeddingKind::Hashing => Arc::new(CachedProvider::new(
            HashingEmbedder::new(m.embedding_dim, config.run.seed).map_err(|e| ConfigError::Invalid(e.to_string()))?,
        )),
        EmbeddingKind::Http => {
            let mut s = HttpSettings::new(&m.embedding_url, &m.embedding_model);
            s.timeout = secs(m.timeout_secs);
            s.max_retries = m.max_retries;
            s.max_in_flight = config.backend.max_in_flight;
            Arc::new(CachedProvider::new(HttpEmbedder::new(s, m.embedding_dim, token(&m.api_key_env, lookup)?)))
        }
    })
}

impl Runtime {
    /// Build backend, embedder and agent. `lookup` reads environment
    /// variables (bearer tokens).
    pub fn new(config: Config, lookup: &dyn Fn(&str) -> Option<String>) -> Result<Runtime, HarnessError> {
        let run = config.run_config()?;
        let agent = match &config.env.templates_dir {
            Some(dir) => load_agent(dir)?,
            None => Agent::default(),
        };
        let mut audit = None;
        let backend: SharedBackend = match config.backend.kind {
            BackendKind::Scripted => {
                let path = config.backend.script.as_ref().ok_or_else(|| ConfigError::Invalid("backend.script missing".into()))?;
                let script = load_script(path)?;
                // an explicit backend.id wins over the script's own
                Arc::new(match &config.backend.id {
                    Some(id) => ScriptedBackend::new(id.clone(), script),
                    None => ScriptedBackend::from_script(script, "scripted"),
                })
            }
            BackendKind::Http => {
                let b = &config.backend;
                let mut s = HttpSettings::new(format!("{}/chat/completions", b.base_url.trim_end_matches('/')), &b.model);
                s.timeout = secs(b.timeout_secs);
                s.max_retries = b.max_retries;
                s.max_in_flight = b.max_in_flight;
                s.max_retry_wait = secs(b.max_retry_wait_secs);
                let id = b.id.clone().unwrap_or_else(|| format!("http-{}", b.model));
                let client = HttpChatBackend::new(id, s, token(&b.api_key_env, lookup)?);
                audit = Some(client.audit());
                Arc::new(client)
            }
        };
        let provider = provider_for(&config, lookup)?;
        Ok(Runtime { config, run, agent, backend, provider, audit })
    }

    pub fn with_backend(mut self, backend: SharedBackend) -> Self {
        self.backend = backend;
        self.audit = None;
        self
    }

    fn make_env(&self, suite: &Arc<FixtureSuite>) -> Box<dyn Environment + Send> {
        let house = MiniHouse::from_shared(suite.clone());
        match self.config.env.kind {
            EnvKind::Minihouse => Box::new(house),
            EnvKind::Vector => Box::new(VectorObservations::new(house, self.provider.clone())),
        }
    }

    /// Run `tasks` against one memory snapshot on `run.workers` threads.
    /// Results come back in task order whatever the scheduling.
    pub fn run_batch(&self, suite: &Arc<FixtureSuite>, tasks: &[TaskSpec], snapshot: &MemoryStore, trial: u32) -> Vec<EpisodeResult> {
        let one = |task: &TaskSpec| {
            let mut env = self.make_env(suite);
            run_episode_with(&mut env, task, snapshot, &self.run, &self.agent, &*self.backend, &*self.provider, trial)
        };
        let workers = self.config.run.workers.clamp(1, tasks.len().max(1));
        if workers == 1 {
            return tasks.iter().map(one).collect();
        }
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<EpisodeResult>>> = Mutex::new(vec![None; tasks.len()]);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= tasks.len() {
                        break;
                    }
                    let result = one(&tasks[i]);
                    slots.lock().unwrap_or_else(|e| e.into_inner())[i] = Some(result);
                });
            }
        });
        slots.into_inner().unwrap_or_else(|e| e.into_inner()).into_iter().map(|r| r.expect("every task ran")).collect()
    }

    fn trials(&self, suite: &Arc<FixtureSuite>, store: MemoryStore) -> Result<TrialsOutcome, HarnessError> {
        let tasks = suite.task_specs();
        let mut tick = 0u64;
        Ok(run_trials_with(
            &tasks,
            store,
            &self.run,
            self.backend.backend_id(),
            |batch, snapshot, trial| self.run_batch(suite, batch, snapshot, trial),
            logical_clock(&mut tick),
        )?)
    }

    fn eval_suite(&self) -> Result<Arc<FixtureSuite>, HarnessError> {
        let path = self.config.env.fixtures.as_ref().ok_or_else(|| ConfigError::Invalid("env.fixtures is not set".into()))?;
        Ok(Arc::new(load_suite(path)?))
    }

    fn initial_memory(&self, path: Option<&Path>) -> Result<MemoryStore, HarnessError> {
        let store = match path {
            Some(p) => store::load(p)?,
            None => MemoryStore::new(self.config.memory.embedding_dim),
        };
        if self.config.env.kind == EnvKind::Vector && store.embedding_dim() != self.provider.dim() {
            return Err(ConfigError::Invalid(format!(
                "memory embedding_dim {} does not match the embedder ({})",
                store.embedding_dim(),
                self.provider.dim()
            ))
            .into());
        }
        Ok(store)
    }

    fn report(&self, command: &str, outcome: &TrialsOutcome, memory: MemoryBlock) -> Report {
        Report {
            name: self.config.run.name.clone(),
            command: command.into(),
            backend_id: self.backend.backend_id().into(),
            embedding_provider: self.provider.provider_id().into(),
            per_trial: outcome.trials.clone(),
            per_task_type: per_task_type(&outcome.episodes),
            memory,
            transfer: None,
            episodes: outcome.episodes.clone(),
            config_echo: self.config.clone(),
        }
    }

    fn save_memory(&self, store: &MemoryStore) -> Result<(), HarnessError> {
        if let Some(path) = &self.config.memory.save {
            save_store(store, path)?;
        }
        Ok(())
    }

    /// Multi-trial evaluation. `memory` overrides `memory.path`.
    pub fn eval(&self, memory: Option<&Path>) -> Result<Report, HarnessError> {
        let suite = self.eval_suite()?;
        let path = memory.or(self.config.memory.path.as_deref());
        let initial = self.initial_memory(path)?;
        let outcome = self.trials(&suite, initial.clone())?;
        self.save_memory(&outcome.store)?;
        Ok(self.report("eval", &outcome, MemoryBlock::describe(path, &initial, outcome.store.len())))
    }

    /// Evaluate with a memory built elsewhere, and again without it.
    pub fn transfer(&self, memory: &Path) -> Result<Report, HarnessError> {
        let suite = self.eval_suite()?;
        let initial = self.initial_memory(Some(memory))?;
        let with = self.trials(&suite, initial.clone())?;
        let without = self.trials(&suite, MemoryStore::new(initial.embedding_dim()))?;
        self.save_memory(&with.store)?;
        let rate = |o: &TrialsOutcome| o.trials.last().map_or(0.0, |t| t.success_rate);
        let mut report = self.report("transfer", &with, MemoryBlock::describe(Some(memory), &initial, with.store.len()));
        report.transfer = Some(TransferBlock {
            with_memory_rate: rate(&with),
            without_memory_rate: rate(&without),
            without_memory: without.trials,
        });
        Ok(report)
    }

    /// One empty-memory pass over the training fixtures, written to `output`.
    pub fn build_memory(&self, output: &Path) -> Result<(MemoryStore, BuildSummary), HarnessError> {
        let path = self
            .config
            .env
            .training_fixtures
            .as_ref()
            .ok_or_else(|| ConfigError::Invalid("env.training_fixtures is not set".into()))?;
        let training = Arc::new(load_suite(path)?);
        let eval_ids: Vec<String> = match &self.config.env.fixtures {
            Some(p) => load_suite(p)?.tasks.into_iter().map(|t| t.task.id).collect(),
            None => Vec::new(),
        };
        let ids: Vec<&str> = eval_ids.iter().map(String::as_str).collect();
        let mut tick = 0u64;
        let (store, summary) = build_memory_from_training(
            &training.task_specs(),
            &ids,
            || self.make_env(&training),
            self.config.memory.embedding_dim,
            &self.run,
            &self.agent,
            &*self.backend,
            &*self.provider,
            logical_clock(&mut tick),
        )?;
        save_store(&store, output)?;
        Ok((store, summary))
    }
}

/// Timestamps are insertion counters so that runs are reproducible.
fn logical_clock(tick: &mut u64) -> impl FnMut() -> u64 + '_ {
    move || {
        *tick += 1;
        *tick
    }
}

pub fn save_store(store: &MemoryStore, path: &Path) -> Result<(), HarnessError> {
    store::save(store, path).map_err(|e| match e {
        StoreError::Io { path, source } => HarnessError::Output { path, source },
        other => other.into(),
    })
}

pub fn write_report(report: &Report, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    report.write(dir).map_err(|(path, source)| HarnessError::Output { path, source })
}

/// True when some episode could not reach its backend at all.
pub fn had_connectivity_failure(report: &Report) -> bool {
    report
        .episodes
        .iter()
        .any(|e| e.failure.as_ref().is_some_and(|f| f.kind == FailureKind::BackendConnectivity))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InspectRow {
    pub rank: usize,
    pub log_id: String,
    pub task: String,
    pub backend_id: String,
    pub breakdown: ScoreBreakdown,
}

/// Top-`k` logs for a query with their score components.
pub fn inspect(
    store: &MemoryStore,
    query: &QueryState,
    weights: &rap_core::ScoreWeights,
    k: usize,
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<InspectRow>, HarnessError> {
    let policy = WindowPolicy::new(k.max(1), 0, 0).map_err(|e| ConfigError::Invalid(e.to_string()))?;
    let found = retrieve(query, store, weights, &policy, provider)
        .map_err(|e| ConfigError::Invalid(format!("retrieval failed: {e}")))?;
    Ok(found
        .into_iter()
        .enumerate()
        .map(|(i, e)| {
            let log = store.get(&e.log_id).expect("retrieved log is stored");
            InspectRow {
                rank: i + 1,
                log_id: e.log_id,
                task: log.task.description.clone(),
                backend_id: log.provenance.backend_id.clone(),
                breakdown: e.breakdown,
            }
        })
        .collect())
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.6}"))
}

pub fn inspect_table(rows: &[InspectRow]) -> String {
    if rows.is_empty() {
        return "no logs\n".into();
    }
    let header = ["rank", "log_id", "task_sim", "plan_sim", "key_sim", "w_task", "w_plan", "w_key", "anchor", "total"];
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let b = &r.breakdown;
            vec![
                r.rank.to_string(),
                r.log_id.clone(),
                format!("{:.6}", b.task),
                opt(b.plan),
                opt(b.key),
                format!("{:.6}", b.effective_weights.task),
                format!("{:.6}", b.effective_weights.plan),
                format!("{:.6}", b.effective_weights.key),
                b.anchor_index.map_or_else(|| "-".into(), |a| a.to_string()),
                format!("{:.6}", b.total),
            ]
        })
        .collect();
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in &body {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let fmt = |cells: &[&str]| -> String {
        let parts: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        parts.join("  ").trim_end().to_string() + "\n"
    };
    let mut out = fmt(&header);
    for row in &body {
        out.push_str(&fmt(&row.iter().map(String::as_str).collect::<Vec<_>>()));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureListing {
    pub id: String,
    pub task_type: Option<String>,
    pub description: String,
    /// Length of a shortest solution, if one exists within the search depth.
    pub optimal_steps: Option<usize>,
}

pub const BFS_DEPTH: usize = 12;

/// Every task of a suite with its certified optimal solution length.
pub fn list_fixtures(suite: &FixtureSuite) -> Vec<FixtureListing> {
    suite
        .tasks
        .iter()
        .map(|t| FixtureListing {
            id: t.task.id.clone(),
            task_type: t.task.task_type.clone(),
            description: t.task.description.clone(),
            optimal_steps: rap_core::envs::World::from_spec(&t.world).shortest_solution(BFS_DEPTH).map(|p| p.len()),
        })
        .collect()
}

pub fn task_filter(task_type: Option<&str>) -> Filter {
    task_type.map(Filter::task_type).unwrap_or_default()
}
