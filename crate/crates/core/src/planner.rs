//! The reasoner: overall plans and retrieval keys from the language model.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::backend::{BackendError, CompletionBackend, CompletionRequest};
use crate::memory::TaskSpec;
use crate::retriever::RetrievalKey;
use crate::template::{self, PromptTemplate, Slots, TemplateError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlannerError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("backend returned an empty completion")]
    EmptyCompletion,
    #[error("no retrieval key in completion {0:?}")]
    UnparseableKey(String),
    #[error("action plan is empty")]
    EmptyActionPlan,
    #[error(transparent)]
    Template(#[from] TemplateError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Reasoned {
    OverallPlan(String),
    RetrievalKey(RetrievalKey),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReasonerOutput {
    pub raw: String,
    pub parsed: Reasoned,
}

/// Parse a key line such as `> search: creditcard` or `ACTION: Put`.
pub fn parse_key_line(line: &str) -> Result<RetrievalKey, PlannerError> {
    let unparseable = || PlannerError::UnparseableKey(line.to_string());
    let body = line.trim().trim_start_matches('>').trim();
    let (prefix, payload) = body.split_once(':').ok_or_else(unparseable)?;
    let payload = payload.trim().to_lowercase();
    if payload.is_empty() {
        return Err(unparseable());
    }
    match prefix.trim().to_ascii_lowercase().as_str() {
        "search" => Ok(RetrievalKey::ObservationSearch(payload)),
        "action" => Ok(RetrievalKey::ActionMatch(payload)),
        _ => Err(unparseable()),
    }
}

/// `text` with a single terminating period.
pub fn sentence(text: &str) -> String {
    let mut s = text.trim().trim_end_matches('.').to_string();
    s.push('.');
    s
}

fn strip_markers(line: &str) -> &str {
    let line = line.trim().trim_start_matches('>').trim();
    match line.get(..6) {
        Some(p) if p.eq_ignore_ascii_case("think:") => line[6..].trim(),
        _ => line,
    }
}

#[derive(Debug, Clone)]
pub struct Reasoner {
    plan_template: PromptTemplate,
    key_template: PromptTemplate,
    key_exemplars: Vec<(String, String)>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for Reasoner {
    fn default() -> Self {
        Reasoner {
            plan_template: PromptTemplate::parse("overall_plan", template::OVERALL_PLAN).expect("default template"),
            key_template: PromptTemplate::parse("retrieval_key", template::RETRIEVAL_KEY).expect("default template"),
            key_exemplars: template::KEY_EXEMPLARS.iter().map(|(p, k)| (p.to_string(), k.to_string())).collect(),
            temperature: 0.0,
            max_tokens: 256,
        }
    }
}

impl Reasoner {
    pub fn with_templates(mut self, plan: PromptTemplate, key: PromptTemplate) -> Self {
        self.plan_template = plan;
        self.key_template = key;
        self
    }

    pub fn with_key_exemplars(mut self, exemplars: Vec<(String, String)>) -> Self {
        self.key_exemplars = exemplars;
        self
    }

    fn request(&self, prompt: String) -> CompletionRequest {
        CompletionRequest { prompt, temperature: self.temperature, max_tokens: self.max_tokens, stop: Vec::new() }
    }

    pub fn overall_plan_prompt<S: AsRef<str>>(&self, task: &TaskSpec, exemplars: &[S]) -> Result<String, PlannerError> {
        let mut block = String::new();
        if !exemplars.is_empty() {
            block.push_str("Here are examples.\n\n");
            for ex in exemplars {
                block.push_str(ex.as_ref().trim_end());
                block.push_str("\n\n");
            }
        }
        let task_line = sentence(&task.description);
        Ok(self.plan_template.render(&Slots { examples: Some(&block), task: Some(&task_line), ..Slots::default() })?)
    }

    pub fn retrieval_key_prompt(&self, action_plan: &str) -> Result<String, PlannerError> {
        let mut block = String::new();
        if !self.key_exemplars.is_empty() {
            block.push_str("Here are examples.\n\n");
            for (plan, key) in &self.key_exemplars {
                block.push_str("think: ");
                block.push_str(plan);
                block.push_str("\n> ");
                block.push_str(key);
                block.push_str("\n\n");
            }
        }
        Ok(self.key_template.render(&Slots { examples: Some(&block), plan: Some(action_plan.trim()), ..Slots::default() })?)
    }

    /// One-paragraph overall plan for `task`; leading `>`/`think:` markers are stripped.
    pub fn generate_overall_plan<S: AsRef<str>, B: CompletionBackend + ?Sized>(
        &self,
        task: &TaskSpec,
        exemplars: &[S],
        backend: &B,
    ) -> Result<ReasonerOutput, PlannerError> {
        let prompt = self.overall_plan_prompt(task, exemplars)?;
        let raw = backend.complete(&self.request(prompt))?;
        let parts: Vec<&str> = raw.lines().map(strip_markers).filter(|l| !l.is_empty()).collect();
        if parts.is_empty() {
            return Err(PlannerError::EmptyCompletion);
        }
        let body = parts.join(" ");
        let plan = if body.starts_with("To solve the task") {
            body
        } else {
            alloc::format!("To solve the task, {}", body.trim_start_matches(',').trim())
        };
        Ok(ReasonerOutput { raw, parsed: Reasoned::OverallPlan(plan) })
    }

    /// Retrieval key for an action plan, parsed from the last non-empty completion line.
    pub fn generate_retrieval_key<B: CompletionBackend + ?Sized>(
        &self,
        action_plan: &str,
        backend: &B,
    ) -> Result<ReasonerOutput, PlannerError> {
        if action_plan.trim().is_empty() {
            return Err(PlannerError::EmptyActionPlan);
        }
        let prompt = self.retrieval_key_prompt(action_plan)?;
        let raw = backend.complete(&self.request(prompt))?;
        let line = raw.lines().rev().find(|l| !l.trim().is_empty()).ok_or(PlannerError::EmptyCompletion)?;
        let key = parse_key_line(line)?;
        Ok(ReasonerOutput { raw, parsed: Reasoned::RetrievalKey(key) })
    }
}

impl ReasonerOutput {
    pub fn plan(&self) -> Option<&str> {
        match &self.parsed {
            Reasoned::OverallPlan(p) => Some(p),
            Reasoned::RetrievalKey(_) => None,
        }
    }

    pub fn key(&self) -> Option<&RetrievalKey> {
        match &self.parsed {
            Reasoned::RetrievalKey(k) => Some(k),
            Reasoned::OverallPlan(_) => None,
        }
    }
}
