//! Prompt templates with named `{slot}` placeholders.
//!
//! `{{` and `}}` render literal braces. Only the slots in [`SLOTS`] exist;
//! a template naming anything else is rejected when it is parsed.

use alloc::string::String;
use alloc::vec::Vec;

pub const SLOTS: [&str; 6] = ["task", "intro", "examples", "plan", "experiences", "trajectory"];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TemplateError {
    #[error("template {template}: unknown slot {{{slot}}}")]
    UnknownSlot { template: String, slot: String },
    #[error("template {template}: unterminated slot")]
    Unterminated { template: String },
    #[error("template {template}: slot {{{slot}}} has no value")]
    MissingSlot { template: String, slot: &'static str },
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Text(String),
    Slot(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    name: String,
    body: String,
    pieces: Vec<Piece>,
}

/// Slot values for one render. Unset slots fail only if the template uses them.
#[derive(Debug, Clone, Default)]
pub struct Slots<'a> {
    pub task: Option<&'a str>,
    pub intro: Option<&'a str>,
    pub examples: Option<&'a str>,
    pub plan: Option<&'a str>,
    pub experiences: Option<&'a str>,
    pub trajectory: Option<&'a str>,
}

impl<'a> Slots<'a> {
    fn get(&self, slot: &str) -> Option<&'a str> {
        match slot {
            "task" => self.task,
            "intro" => self.intro,
            "examples" => self.examples,
            "plan" => self.plan,
            "experiences" => self.experiences,
            "trajectory" => self.trajectory,
            _ => None,
        }
    }
}

impl PromptTemplate {
    pub fn parse(name: impl Into<String>, body: impl Into<String>) -> Result<Self, TemplateError> {
        let name = name.into();
        let body = body.into();
        let mut pieces = Vec::new();
        let mut text = String::new();
        let mut chars = body.chars().peekable();
        while let Some(c) = chars.next() {
            match c {
                '{' if chars.peek() == Some(&'{') => {
                    chars.next();
                    text.push('{');
                }
                '}' if chars.peek() == Some(&'}') => {
                    chars.next();
                    text.push('}');
                }
                '{' => {
                    let mut slot = String::new();
                    loop {
                        match chars.next() {
                            Some('}') => break,
                            Some(ch) => slot.push(ch),
                            None => return Err(TemplateError::Unterminated { template: name }),
                        }
                    }
                    let known = SLOTS
                        .iter()
                        .find(|s| **s == slot)
                        .ok_or_else(|| TemplateError::UnknownSlot { template: name.clone(), slot: slot.clone() })?;
                    if !text.is_empty() {
                        pieces.push(Piece::Text(core::mem::take(&mut text)));
                    }
                    pieces.push(Piece::Slot(known));
                }
                other => text.push(other),
            }
        }
        if !text.is_empty() {
            pieces.push(Piece::Text(text));
        }
        Ok(PromptTemplate { name, body, pieces })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    pub fn slots(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.pieces.iter().filter_map(|p| match p {
            Piece::Slot(s) => Some(*s),
            Piece::Text(_) => None,
        })
    }

    pub fn render(&self, slots: &Slots<'_>) -> Result<String, TemplateError> {
        let mut out = String::new();
        for piece in &self.pieces {
            match piece {
                Piece::Text(t) => out.push_str(t),
                Piece::Slot(s) => {
                    let value = slots
                        .get(s)
                        .ok_or(TemplateError::MissingSlot { template: self.name.clone(), slot: s })?;
                    out.push_str(value);
                }
            }
        }
        Ok(out)
    }

    /// Length of the rendered template with every used slot empty.
    pub fn fixed_len(&self) -> usize {
        self.pieces
            .iter()
            .map(|p| match p {
                Piece::Text(t) => t.chars().count(),
                Piece::Slot(_) => 0,
            })
            .sum()
    }
}

/// Overall-plan prompt. `{examples}` expands to a whole block (or nothing).
pub const OVERALL_PLAN: &str = "{examples}Here is the task. Please make a plan from the examples.\n\nYour task is to: {task}\n> think: To solve the task,";

/// Retrieval-key prompt.
pub const RETRIEVAL_KEY: &str = "{examples}Here is the task. Please make a plan from the examples.\n\nthink: {plan}\n> ";

/// Action prompt used by the executor.
pub const ACTION: &str = "Here is the task information.\n{intro}\n\n{experiences}Here is the task. Please make an action from the examples.\n\nTask: {task}\nPlan: {plan}\n{trajectory}> ";

/// Default exemplars for the overall-plan prompt.
pub const PLAN_EXEMPLARS: [&str; 3] = [
    "Your task is to: put some vase on safe.\n> To solve the task, I need to find and take a vase, then put it on safe.",
    "Your task is to: clean some cloth and put it in cabinet.\n> To solve the task, I need to find and take a cloth, then clean it with sinkbasin, then put it in cabinet.",
    "Your task is to: heat some egg and put it in diningtable.\n> To solve the task, I need to find and take an egg, then heat it with microwave, then put it in diningtable.",
];

/// Default exemplars for the retrieval-key prompt, as (action plan, key line).
pub const KEY_EXEMPLARS: [(&str, &str); 14] = [
    ("First I need to find a spraybottle. A spraybottle is more likely to appear in cabinet (1-4), countertop (1), toilet (1), sinkbasin (1-2), garbagecan (1). I can check one by one, starting with cabinet 1.", "search: spraybottle"),
    ("Now I put the first creditcard in dresser. Next, I need to find the second creditcard. I can directly go to countertop 1.", "search: creditcard"),
    ("Now I take a pen (2). Next, I need to find a desklamp. A desklamp is more likely to appear in dresser (1), shelf (1-9), bed (1), garbagecan (1), drawer (1-10). I can check one by one, starting with dresser 1.", "search: desklamp"),
    ("Now I find a lettuce (1). Next, I need to take it.", "action: take"),
    ("Now I find a pan (1). Next, I need to take it.", "action: take"),
    ("Now I find the second saltshaker (2). Next, I need to take it.", "action: take"),
    ("Now I heat an egg (2). Next, I need to put it in/on diningtable 1.", "action: put"),
    ("Now I take a spraybottle (2). Next, I need to put it in/on toilet 1.", "action: put"),
    ("Now I take an apple (1). Next, I need to go to a microwave (1) and heat it.", "action: heat"),
    ("Now I take a bread (1). Next, I need to go to a microwave (1) and heat it.", "action: heat"),
    ("Now I take a mug (3). Next, I need to go to a fridge (1) and cool it.", "action: cool"),
    ("Now I take a potato (2). Next, I need to go to a fridge (1) and cool it.", "action: cool"),
    ("Now I find a desklamp (1). Next, I need to use it.", "action: use"),
    ("Now I find a desklamp (3). Next, I need to use it.", "action: use"),
];
