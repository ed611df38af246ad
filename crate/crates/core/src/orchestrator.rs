//! The planning loop, multi-trial runs and memory construction.
//!
//! An episode asks the reasoner for an overall plan, retrieves experiences
//! without a key, and then alternates executor outputs: action plans trigger
//! a new retrieval key and a fresh retrieval, environment actions are sent to
//! the environment. Trials rerun failed tasks against a memory that grows at
//! every trial barrier.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::backend::CompletionBackend;
use crate::embedding::{Embedding, EmbeddingProvider};
use crate::envs::Environment;
use crate::executor::{Executor, ExecutorError, OutputKind, PromptBudget, PromptContext};
use crate::memory::{EpisodeLog, Filter, MemoryError, MemoryStore, Observation, Provenance, Step, TaskSpec};
use crate::planner::{PlannerError, Reasoner};
use crate::retriever::{retrieve, KeyKind, QueryState, RetrievalKey, RetrievedExperience, ScoreWeights, WindowPolicy};
use crate::template;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OrchestratorError {
    #[error("invalid run configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("training task {0} also appears in the evaluation set")]
    Overlap(String),
    #[error(transparent)]
    Memory(#[from] MemoryError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Environment steps per episode (the horizon).
    pub max_steps: usize,
    pub d_max: u32,
    pub weights: ScoreWeights,
    pub window_action: WindowPolicy,
    pub window_observation: WindowPolicy,
    pub budget: PromptBudget,
    pub intra_task: bool,
    pub seed: u64,
    /// Only retrieve logs of the current task's type.
    pub filter_task_type: bool,
    /// Metadata keys whose values must match the current task's.
    pub filter_metadata: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            max_steps: 50,
            d_max: 3,
            weights: ScoreWeights::default(),
            window_action: WindowPolicy::ACTION,
            window_observation: WindowPolicy::OBSERVATION,
            budget: PromptBudget::default(),
            intra_task: true,
            seed: 0,
            filter_task_type: true,
            filter_metadata: Vec::new(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), OrchestratorError> {
        if self.max_steps == 0 {
            return Err(OrchestratorError::InvalidConfig("max_steps must be at least 1"));
        }
        if self.d_max == 0 {
            return Err(OrchestratorError::InvalidConfig("d_max must be at least 1"));
        }
        if self.budget.max_current_steps == 0 || self.budget.max_chars == 0 {
            return Err(OrchestratorError::InvalidConfig("prompt budget must be positive"));
        }
        self.weights.validate().map_err(|_| OrchestratorError::InvalidConfig("invalid score weights"))?;
        self.window_action.validate().map_err(|_| OrchestratorError::InvalidConfig("invalid action window"))?;
        self.window_observation.validate().map_err(|_| OrchestratorError::InvalidConfig("invalid observation window"))?;
        Ok(())
    }

    /// Iterations (think steps included) before an episode is abandoned.
    pub fn iteration_cap(&self) -> usize {
        self.max_steps.saturating_mul(4)
    }

    pub fn filter_for(&self, task: &TaskSpec) -> Filter {
        let mut filter = Filter::default();
        if self.filter_task_type {
            filter.task_type = task.task_type.clone();
        }
        for key in &self.filter_metadata {
            if let Some(v) = task.metadata.get(key) {
                filter.metadata_equals.insert(key.clone(), v.clone());
            }
        }
        filter
    }

    fn policy_for(&self, key: Option<KeyKind>) -> &WindowPolicy {
        match key {
            Some(KeyKind::ObservationSearch) | Some(KeyKind::Visual) => &self.window_observation,
            Some(KeyKind::ActionMatch) | None => &self.window_action,
        }
    }
}

/// Prompting components shared by every episode of a run.
#[derive(Debug, Clone)]
pub struct Agent {
    pub reasoner: Reasoner,
    pub executor: Executor,
    pub plan_exemplars: Vec<String>,
}

impl Default for Agent {
    fn default() -> Self {
        Agent {
            reasoner: Reasoner::default(),
            executor: Executor::default(),
            plan_exemplars: template::PLAN_EXEMPLARS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    Start,
    Think,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub trigger: Trigger,
    /// Trajectory length when the retrieval ran.
    pub after_step: usize,
    pub key: Option<String>,
    pub key_kind: Option<KeyKind>,
    /// Why the key is missing on a think-triggered retrieval.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback: Option<String>,
    pub log_ids: Vec<String>,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Horizon,
    IterationCap,
    Environment,
    Backend,
    BackendConnectivity,
    Retrieval,
    Prompt,
    EnvDoneWithoutSuccess,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureCause {
    pub kind: FailureKind,
    pub message: String,
}

impl FailureCause {
    fn new(kind: FailureKind, message: impl Into<String>) -> Self {
        FailureCause { kind, message: message.into() }
    }

    fn backend(err: &crate::backend::BackendError) -> Self {
        let kind = if err.is_connectivity() { FailureKind::BackendConnectivity } else { FailureKind::Backend };
        FailureCause::new(kind, err.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub task_id: String,
    pub task_type: Option<String>,
    pub success: bool,
    pub reward: f64,
    /// Environment steps; think steps are not counted.
    pub steps_taken: usize,
    pub iterations: usize,
    pub overall_plan: Option<String>,
    pub trajectory: Vec<Step>,
    pub trial_index: u32,
    pub retrieval_trace: Vec<TraceEntry>,
    /// Experience blocks present in each action prompt.
    pub prompt_blocks: Vec<usize>,
    pub empty_completions: usize,
    pub failure: Option<FailureCause>,
}

impl EpisodeResult {
    /// Memory log for a successful episode.
    pub fn to_log(&self, task: &TaskSpec, backend_id: &str, created_at: u64) -> Option<EpisodeLog> {
        if !self.success || self.trajectory.is_empty() {
            return None;
        }
        Some(EpisodeLog {
            log_id: format!("{}/{}/t{}", backend_id, self.task_id, self.trial_index),
            task: task.clone(),
            overall_plan: self.overall_plan.clone().unwrap_or_default(),
            steps: self.trajectory.clone(),
            reward: self.reward,
            success: true,
            provenance: Provenance { backend_id: backend_id.to_string(), trial_index: self.trial_index, created_at },
        })
    }
}

struct Episode<'a, B: ?Sized, P: ?Sized> {
    store: &'a MemoryStore,
    config: &'a RunConfig,
    agent: &'a Agent,
    backend: &'a B,
    provider: &'a P,
}

impl<B: CompletionBackend + ?Sized, P: EmbeddingProvider + ?Sized> Episode<'_, B, P> {
    fn retrieve(
        &self,
        query: &QueryState,
        trigger: Trigger,
        after_step: usize,
        fallback: Option<String>,
        trace: &mut Vec<TraceEntry>,
    ) -> Result<Vec<RetrievedExperience>, FailureCause> {
        let kind = query.key.as_ref().map(RetrievalKey::kind);
        let policy = self.config.policy_for(kind);
        let found = retrieve(query, self.store, &self.config.weights, policy, self.provider)
            .map_err(|e| FailureCause::new(FailureKind::Retrieval, e.to_string()))?;
        trace.push(TraceEntry {
            trigger,
            after_step,
            key: query.key.as_ref().map(RetrievalKey::format),
            key_kind: kind,
            fallback,
            log_ids: found.iter().map(|e| e.log_id.clone()).collect(),
            scores: found.iter().map(|e| e.score).collect(),
        });
        Ok(found)
    }

    fn run<E: Environment + ?Sized>(&self, env: &mut E, task: &TaskSpec, trial_index: u32) -> EpisodeResult {
        let mut result = EpisodeResult {
            task_id: task.id.clone(),
            task_type: task.task_type.clone(),
            success: false,
            reward: 0.0,
            steps_taken: 0,
            iterations: 0,
            overall_plan: None,
            trajectory: Vec::new(),
            trial_index,
            retrieval_trace: Vec::new(),
            prompt_blocks: Vec::new(),
            empty_completions: 0,
            failure: None,
        };
        if let Err(cause) = self.drive(env, task, &mut result) {
            result.failure = Some(cause);
        }
        result
    }

    fn drive<E: Environment + ?Sized>(&self, env: &mut E, task: &TaskSpec, r: &mut EpisodeResult) -> Result<(), FailureCause> {
        let env_err = |e: crate::envs::EnvError| FailureCause::new(FailureKind::Environment, e.to_string());
        let initial = env.reset(task).map_err(env_err)?;
        let intro = crate::executor::render_observation(&initial);
        let mut current_obs = initial;

        r.overall_plan = match self.agent.reasoner.generate_overall_plan(task, &self.agent.plan_exemplars, self.backend) {
            Ok(out) => out.plan().map(str::to_string),
            Err(PlannerError::EmptyCompletion) => None,
            Err(PlannerError::Backend(e)) => return Err(FailureCause::backend(&e)),
            Err(e) => return Err(FailureCause::new(FailureKind::Prompt, e.to_string())),
        };
        let plan_text = r.overall_plan.clone().unwrap_or_default();
        let mut query = QueryState::new(task.description.clone()).with_filter(self.config.filter_for(task));
        query.overall_plan = r.overall_plan.clone();

        let mut experiences = self.retrieve(&query, Trigger::Start, 0, None, &mut r.retrieval_trace)?;
        let ctx = PromptContext { task, intro: &intro, overall_plan: &plan_text };

        while r.steps_taken < self.config.max_steps {
            if r.iterations >= self.config.iteration_cap() {
                return Err(FailureCause::new(FailureKind::IterationCap, "too many think steps without acting"));
            }
            r.iterations += 1;
            let (prompt, blocks) = self
                .agent
                .executor
                .compose(&ctx, &experiences, &r.trajectory, &self.config.budget, self.config.intra_task)
                .map_err(|e| FailureCause::new(FailureKind::Prompt, e.to_string()))?;
            r.prompt_blocks.push(blocks);
            let output = match self.agent.executor.next_output(&prompt, self.backend) {
                Ok(o) => o,
                Err(ExecutorError::EmptyCompletion) => {
                    r.empty_completions += 1;
                    continue;
                }
                Err(ExecutorError::Backend(e)) => return Err(FailureCause::backend(&e)),
                Err(e) => return Err(FailureCause::new(FailureKind::Prompt, e.to_string())),
            };
            match output.kind {
                OutputKind::ActionPlan => {
                    r.trajectory.push(Step::think(output.text.clone()));
                    let (key, fallback) = self.key_for(&output.text, &current_obs)?;
                    query.key = key;
                    experiences = self.retrieve(&query, Trigger::Think, r.trajectory.len(), fallback, &mut r.retrieval_trace)?;
                }
                OutputKind::EnvAction => {
                    let step = env.step(&output.text).map_err(env_err)?;
                    r.steps_taken += 1;
                    r.reward = step.reward;
                    current_obs = step.observation.clone();
                    r.trajectory.push(Step::act(output.text, step.observation));
                    if step.reward >= 1.0 {
                        r.success = true;
                        return Ok(());
                    }
                    if step.done {
                        return Err(FailureCause::new(FailureKind::EnvDoneWithoutSuccess, "environment ended the episode"));
                    }
                }
            }
        }
        Err(FailureCause::new(FailureKind::Horizon, format!("no success within {} steps", self.config.max_steps)))
    }

    /// Retrieval key for a think step: the current frame for vector
    /// observations, otherwise the reasoner's key line.
    fn key_for(&self, plan: &str, current: &Observation) -> Result<(Option<RetrievalKey>, Option<String>), FailureCause> {
        if let Observation::Vector { vector } = current {
            let e = Embedding::new(vector.clone()).map_err(|e| FailureCause::new(FailureKind::Retrieval, e.to_string()))?;
            return Ok((Some(RetrievalKey::Visual(e)), None));
        }
        match self.agent.reasoner.generate_retrieval_key(plan, self.backend) {
            Ok(out) => Ok((out.key().cloned(), None)),
            Err(PlannerError::Backend(e)) => Err(FailureCause::backend(&e)),
            Err(e) => Ok((None, Some(e.to_string()))),
        }
    }
}

/// Run one episode of `task` against a memory snapshot.
#[allow(clippy::too_many_arguments)]
pub fn run_episode_with<E, B, P>(
    env: &mut E,
    task: &TaskSpec,
    store: &MemoryStore,
    config: &RunConfig,
    agent: &Agent,
    backend: &B,
    provider: &P,
    trial_index: u32,
) -> EpisodeResult
where
    E: Environment + ?Sized,
    B: CompletionBackend + ?Sized,
    P: EmbeddingProvider + ?Sized,
{
    Episode { store, config, agent, backend, provider }.run(env, task, trial_index)
}

/// [`run_episode_with`] using the default agent, as trial 1.
pub fn run_episode<E, B, P>(env: &mut E, task: &TaskSpec, store: &MemoryStore, config: &RunConfig, backend: &B, provider: &P) -> EpisodeResult
where
    E: Environment + ?Sized,
    B: CompletionBackend + ?Sized,
    P: EmbeddingProvider + ?Sized,
{
    run_episode_with(env, task, store, config, &Agent::default(), backend, provider, 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub trial: u32,
    /// Episodes run in this trial.
    pub attempted: usize,
    pub solved: usize,
    /// Share of all tasks solved in any trial so far.
    pub success_rate: f64,
    /// Mean over all tasks of the best reward reached so far.
    pub mean_reward: f64,
    pub inserted: usize,
    pub duplicates: usize,
    pub memory_size: usize,
}

#[derive(Debug, Clone)]
pub struct TrialsOutcome {
    pub trials: Vec<TrialReport>,
    pub episodes: Vec<EpisodeResult>,
    pub store: MemoryStore,
}

/// Multi-trial loop with a caller-supplied episode runner.
///
/// `run_batch(tasks, snapshot, trial)` must return one result per task, in
/// order; it may run them in parallel. Successes are inserted in task order
/// once the whole batch is back.
pub fn run_trials_with<F, C>(
    tasks: &[TaskSpec],
    store: MemoryStore,
    config: &RunConfig,
    backend_id: &str,
    mut run_batch: F,
    mut clock: C,
) -> Result<TrialsOutcome, OrchestratorError>
where
    F: FnMut(&[TaskSpec], &MemoryStore, u32) -> Vec<EpisodeResult>,
    C: FnMut() -> u64,
{
    config.validate()?;
    let mut store = store;
    let mut best = alloc::vec![0.0f64; tasks.len()];
    let mut solved = alloc::vec![false; tasks.len()];
    let mut trials = Vec::new();
    let mut episodes = Vec::new();
    for trial in 1..=config.d_max {
        let pending: Vec<usize> = (0..tasks.len()).filter(|&i| !solved[i]).collect();
        let batch: Vec<TaskSpec> = pending.iter().map(|&i| tasks[i].clone()).collect();
        let results = if batch.is_empty() { Vec::new() } else { run_batch(&batch, &store, trial) };
        assert_eq!(results.len(), batch.len(), "episode runner returned the wrong number of results");
        let mut report = TrialReport {
            trial,
            attempted: batch.len(),
            solved: 0,
            success_rate: 0.0,
            mean_reward: 0.0,
            inserted: 0,
            duplicates: 0,
            memory_size: 0,
        };
        for (&i, result) in pending.iter().zip(&results) {
            best[i] = best[i].max(result.reward);
            if result.success {
                solved[i] = true;
                report.solved += 1;
                if let Some(log) = result.to_log(&tasks[i], backend_id, clock()) {
                    match store.insert(log)? {
                        crate::memory::InsertOutcome::Inserted => report.inserted += 1,
                        crate::memory::InsertOutcome::Duplicate => report.duplicates += 1,
                    }
                }
            }
        }
        let n = tasks.len().max(1) as f64;
        report.success_rate = solved.iter().filter(|s| **s).count() as f64 / n;
        report.mean_reward = best.iter().sum::<f64>() / n;
        report.memory_size = store.len();
        trials.push(report);
        episodes.extend(results);
    }
    Ok(TrialsOutcome { trials, episodes, store })
}

/// Sequential multi-trial loop; `make_env` builds one environment per episode.
#[allow(clippy::too_many_arguments)]
pub fn run_trials<E, M, B, P, C>(
    tasks: &[TaskSpec],
    mut make_env: M,
    store: MemoryStore,
    config: &RunConfig,
    agent: &Agent,
    backend: &B,
    provider: &P,
    clock: C,
) -> Result<TrialsOutcome, OrchestratorError>
where
    E: Environment,
    M: FnMut() -> E,
    B: CompletionBackend + ?Sized,
    P: EmbeddingProvider + ?Sized,
    C: FnMut() -> u64,
{
    let backend_id = backend.backend_id().to_string();
    run_trials_with(
        tasks,
        store,
        config,
        &backend_id,
        |batch, snapshot, trial| {
            batch
                .iter()
                .map(|task| {
                    let mut env = make_env();
                    run_episode_with(&mut env, task, snapshot, config, agent, backend, provider, trial)
                })
                .collect()
        },
        clock,
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildSummary {
    pub attempted: usize,
    pub solved: usize,
    pub stored: usize,
}

/// Reject training tasks whose ids also occur in the evaluation set.
pub fn check_disjoint<'a, I: IntoIterator<Item = &'a str>>(training: &[TaskSpec], eval_ids: I) -> Result<(), OrchestratorError> {
    let eval: BTreeSet<&str> = eval_ids.into_iter().collect();
    match training.iter().find(|t| eval.contains(t.id.as_str())) {
        Some(t) => Err(OrchestratorError::Overlap(t.id.clone())),
        None => Ok(()),
    }
}

/// Memory from one empty-memory pass over the training tasks.
#[allow(clippy::too_many_arguments)]
pub fn build_memory_from_training<E, M, B, P, C>(
    training: &[TaskSpec],
    eval_ids: &[&str],
    make_env: M,
    embedding_dim: usize,
    config: &RunConfig,
    agent: &Agent,
    backend: &B,
    provider: &P,
    clock: C,
) -> Result<(MemoryStore, BuildSummary), OrchestratorError>
where
    E: Environment,
    M: FnMut() -> E,
    B: CompletionBackend + ?Sized,
    P: EmbeddingProvider + ?Sized,
    C: FnMut() -> u64,
{
    check_disjoint(training, eval_ids.iter().copied())?;
    let single = RunConfig { d_max: 1, ..config.clone() };
    let out = run_trials(training, make_env, MemoryStore::new(embedding_dim), &single, agent, backend, provider, clock)?;
    let summary = BuildSummary {
        attempted: training.len(),
        solved: out.episodes.iter().filter(|e| e.success).count(),
        stored: out.store.len(),
    };
    Ok((out.store, summary))
}
