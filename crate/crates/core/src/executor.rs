//! In-context prompt assembly and parsing of the agent's next output.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::backend::{BackendError, CompletionBackend, CompletionRequest};
use crate::memory::{Observation, Step, TaskSpec};
use crate::planner::sentence;
use crate::retriever::RetrievedExperience;
use crate::template::{self, PromptTemplate, Slots, TemplateError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExecutorError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("backend returned an empty completion")]
    EmptyCompletion,
    #[error("prompt needs at least {needed} characters but the budget is {max}")]
    BudgetTooSmall { needed: usize, max: usize },
    #[error(transparent)]
    Template(#[from] TemplateError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBudget {
    /// Most recent steps of the current trajectory shown to the model.
    pub max_current_steps: usize,
    pub max_chars: usize,
}

impl Default for PromptBudget {
    fn default() -> Self {
        PromptBudget { max_current_steps: 10, max_chars: 16_000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    EnvAction,
    ActionPlan,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentOutput {
    pub kind: OutputKind,
    pub text: String,
}

/// Everything about the current episode the prompt header needs.
#[derive(Debug, Clone, Copy)]
pub struct PromptContext<'a> {
    pub task: &'a TaskSpec,
    /// Initial observation of the environment.
    pub intro: &'a str,
    pub overall_plan: &'a str,
}

pub fn render_observation(obs: &Observation) -> String {
    match obs {
        Observation::Text { text } => text.clone(),
        Observation::Vector { vector } => format!("[vector observation, {} dims]", vector.len()),
    }
}

fn render_steps(steps: &[Step], out: &mut String) {
    for step in steps {
        out.push_str("> ");
        out.push_str(&step.action);
        out.push('\n');
        out.push_str(&render_observation(&step.observation));
        out.push('\n');
    }
}

fn render_block(exp: &RetrievedExperience, intra_task: bool) -> String {
    let mut out = String::new();
    if intra_task {
        out.push_str("Task: ");
        out.push_str(&sentence(&exp.source_task_text));
        out.push('\n');
    }
    out.push_str("Plan: ");
    out.push_str(&exp.source_plan);
    out.push('\n');
    render_steps(&exp.window, &mut out);
    out
}

fn join_blocks(blocks: &[String]) -> String {
    if blocks.is_empty() {
        return String::new();
    }
    let mut out = String::from("Here are examples.\n\n");
    for b in blocks {
        out.push_str(b);
        out.push('\n');
    }
    out
}

/// Parse a completion into an environment action or an action plan.
/// Only the first non-empty line is used.
pub fn parse_output(completion: &str) -> Result<AgentOutput, ExecutorError> {
    let line = completion
        .lines()
        .map(|l| l.trim().trim_start_matches('>').trim())
        .find(|l| !l.is_empty())
        .ok_or(ExecutorError::EmptyCompletion)?;
    match line.get(..6) {
        Some(p) if p.eq_ignore_ascii_case("think:") => {
            let plan = line[6..].trim();
            if plan.is_empty() {
                return Err(ExecutorError::EmptyCompletion);
            }
            Ok(AgentOutput { kind: OutputKind::ActionPlan, text: plan.to_string() })
        }
        _ => Ok(AgentOutput { kind: OutputKind::EnvAction, text: line.to_string() }),
    }
}

#[derive(Debug, Clone)]
pub struct Executor {
    template: PromptTemplate,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for Executor {
    fn default() -> Self {
        Executor {
            template: PromptTemplate::parse("action", template::ACTION).expect("default template"),
            temperature: 0.0,
            max_tokens: 256,
        }
    }
}

impl Executor {
    pub fn with_template(mut self, template: PromptTemplate) -> Self {
        self.template = template;
        self
    }

    /// Render the action prompt. Experiences are shown weakest first so the
    /// best one sits closest to the cue; when over budget the weakest blocks
    /// go first, then the oldest current steps.
    pub fn build_prompt(
        &self,
        ctx: &PromptContext<'_>,
        experiences: &[RetrievedExperience],
        trajectory: &[Step],
        budget: &PromptBudget,
        intra_task: bool,
    ) -> Result<String, ExecutorError> {
        Ok(self.compose(ctx, experiences, trajectory, budget, intra_task)?.0)
    }

    /// Like [`Executor::build_prompt`], also returning how many experience
    /// blocks survived trimming.
    pub fn compose(
        &self,
        ctx: &PromptContext<'_>,
        experiences: &[RetrievedExperience],
        trajectory: &[Step],
        budget: &PromptBudget,
        intra_task: bool,
    ) -> Result<(String, usize), ExecutorError> {
        let mut blocks: Vec<String> = experiences.iter().rev().map(|e| render_block(e, intra_task)).collect();
        let keep = trajectory.len().min(budget.max_current_steps);
        let mut recent = &trajectory[trajectory.len() - keep..];
        let task_line = sentence(&ctx.task.description);
        loop {
            let experiences_text = join_blocks(&blocks);
            let mut trajectory_text = String::new();
            render_steps(recent, &mut trajectory_text);
            let prompt = self.template.render(&Slots {
                task: Some(&task_line),
                intro: Some(ctx.intro),
                plan: Some(ctx.overall_plan),
                experiences: Some(&experiences_text),
                trajectory: Some(&trajectory_text),
                examples: Some(""),
            })?;
            let len = prompt.chars().count();
            if len <= budget.max_chars {
                return Ok((prompt, blocks.len()));
            }
            if !blocks.is_empty() {
                blocks.remove(0);
            } else if !recent.is_empty() {
                recent = &recent[1..];
            } else {
                return Err(ExecutorError::BudgetTooSmall { needed: len, max: budget.max_chars });
            }
        }
    }

    pub fn next_output<B: CompletionBackend + ?Sized>(&self, prompt: &str, backend: &B) -> Result<AgentOutput, ExecutorError> {
        let request = CompletionRequest {
            prompt: prompt.to_string(),
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            stop: alloc::vec!["\n".to_string()],
        };
        parse_output(&backend.complete(&request)?)
    }
}

/// [`Executor::build_prompt`] with the default action template.
pub fn build_prompt(
    ctx: &PromptContext<'_>,
    experiences: &[RetrievedExperience],
    trajectory: &[Step],
    budget: &PromptBudget,
    intra_task: bool,
) -> Result<String, ExecutorError> {
    Executor::default().build_prompt(ctx, experiences, trajectory, budget, intra_task)
}

pub fn next_output<B: CompletionBackend + ?Sized>(prompt: &str, backend: &B) -> Result<AgentOutput, ExecutorError> {
    Executor::default().next_output(prompt, backend)
}
