//! Deterministic rule-based completion backend.
//!
//! A rules file holds one rule per line:
//!
//! ```text
//! # comment
//! id scripted-a
//! mode strict
//! default => look
//! 10 contains find a mug => go to shelf 1
//! 20 regex Task: put some (\w+) on => think: First I need to find a $1.
//! ```
//!
//! The winning rule is the matching rule with the highest priority, the
//! first declared among equals. Regex responses may refer to capture groups
//! (`$1`, `${name}`). In responses and `contains` text, `\n` stands for a
//! newline and `\\` for a backslash.

use std::fs;
use std::path::Path;

use rap_core::{BackendError, CompletionBackend, CompletionRequest};
use regex::Regex;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScriptError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("cannot read rules file {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone)]
pub enum Matcher {
    Contains(String),
    Pattern(Regex),
}

#[derive(Debug, Clone)]
pub struct ScriptedRule {
    pub priority: i64,
    pub matcher: Matcher,
    pub response: String,
    /// 1-based line in the rules file, 0 for rules built in code.
    pub line: usize,
}

impl ScriptedRule {
    pub fn contains(priority: i64, needle: impl Into<String>, response: impl Into<String>) -> Self {
        ScriptedRule { priority, matcher: Matcher::Contains(needle.into()), response: response.into(), line: 0 }
    }

    pub fn pattern(priority: i64, pattern: &str, response: impl Into<String>) -> Result<Self, regex::Error> {
        Ok(ScriptedRule { priority, matcher: Matcher::Pattern(Regex::new(pattern)?), response: response.into(), line: 0 })
    }

    fn respond(&self, prompt: &str) -> Option<String> {
        match &self.matcher {
            Matcher::Contains(needle) => prompt.contains(needle.as_str()).then(|| self.response.clone()),
            Matcher::Pattern(re) => re.captures(prompt).map(|caps| {
                let mut out = String::new();
                caps.expand(&self.response, &mut out);
                out
            }),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Script {
    pub id: Option<String>,
    pub strict: bool,
    pub default_response: Option<String>,
    pub rules: Vec<ScriptedRule>,
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('t') => out.push('\t'),
            Some('\\') => out.push('\\'),
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    out
}

pub fn parse_script(text: &str) -> Result<Script, ScriptError> {
    let mut script = Script::default();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let err = |message: String| ScriptError::Parse { line, message };
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if let Some(id) = trimmed.strip_prefix("id ") {
            script.id = Some(id.trim().to_string());
            continue;
        }
        if let Some(mode) = trimmed.strip_prefix("mode ") {
            script.strict = match mode.trim() {
                "strict" => true,
                "lenient" => false,
                other => return Err(err(format!("unknown mode {other:?}"))),
            };
            continue;
        }
        let (head, response) = trimmed.split_once(" => ").ok_or_else(|| err("expected `=>`".into()))?;
        let response = unescape(response);
        if head.trim() == "default" {
            script.default_response = Some(response);
            continue;
        }
        let (priority, rest) = head.split_once(' ').ok_or_else(|| err("expected `<priority> <kind> <matcher>`".into()))?;
        let priority: i64 = priority.parse().map_err(|_| err(format!("bad priority {priority:?}")))?;
        let (kind, matcher) = rest.split_once(' ').ok_or_else(|| err("missing matcher".into()))?;
        let matcher = match kind {
            "contains" => Matcher::Contains(unescape(matcher)),
            "regex" => Matcher::Pattern(Regex::new(matcher).map_err(|e| err(e.to_string()))?),
            other => return Err(err(format!("unknown matcher kind {other:?}"))),
        };
        script.rules.push(ScriptedRule { priority, matcher, response, line });
    }
    Ok(script)
}

pub fn load_script(path: &Path) -> Result<Script, ScriptError> {
    let text = fs::read_to_string(path)
        .map_err(|e| ScriptError::Io { path: path.display().to_string(), message: e.to_string() })?;
    parse_script(&text)
}

/// Rule-driven backend. A pure function of its rules and the prompt.
#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    id: String,
    script: Script,
}

impl ScriptedBackend {
    pub fn new(id: impl Into<String>, script: Script) -> Self {
        ScriptedBackend { id: id.into(), script }
    }

    pub fn from_rules(id: impl Into<String>, rules: Vec<ScriptedRule>) -> Self {
        ScriptedBackend::new(id, Script { rules, ..Script::default() })
    }

    /// Backend named by the script's `id` line, else `fallback_id`.
    pub fn from_script(script: Script, fallback_id: &str) -> Self {
        let id = script.id.clone().unwrap_or_else(|| fallback_id.to_string());
        ScriptedBackend::new(id, script)
    }

    pub fn with_default(mut self, response: impl Into<String>) -> Self {
        self.script.default_response = Some(response.into());
        self
    }

    pub fn strict(mut self, strict: bool) -> Self {
        self.script.strict = strict;
        self
    }

    pub fn rules(&self) -> &[ScriptedRule] {
        &self.script.rules
    }

    /// The rule that would answer `prompt`.
    pub fn winner(&self, prompt: &str) -> Option<(&ScriptedRule, String)> {
        let mut best: Option<(&ScriptedRule, String)> = None;
        for rule in &self.script.rules {
            if best.as_ref().is_some_and(|(b, _)| b.priority >= rule.priority) {
                continue;
            }
            if let Some(resp) = rule.respond(prompt) {
                best = Some((rule, resp));
            }
        }
        best
    }
}

impl CompletionBackend for ScriptedBackend {
    fn backend_id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        request.validate()?;
        if let Some((_, resp)) = self.winner(&request.prompt) {
            return Ok(resp);
        }
        match (&self.script.default_response, self.script.strict) {
            (_, true) | (None, _) => Err(BackendError::NoRouteMatched),
            (Some(d), false) => Ok(d.clone()),
        }
    }
}
