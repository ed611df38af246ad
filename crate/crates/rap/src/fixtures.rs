//! Fixture suites and prompt template files.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rap_core::envs::FixtureSuite;
use rap_core::orchestrator::Agent;
use rap_core::template::PromptTemplate;

#[derive(Debug, thiserror::Error)]
pub enum FixtureError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

pub fn load_suite(path: &Path) -> Result<FixtureSuite, FixtureError> {
    let text = fs::read_to_string(path).map_err(|source| FixtureError::Io { path: path.to_path_buf(), source })?;
    let invalid = |message: String| FixtureError::Invalid { path: path.to_path_buf(), message };
    let suite: FixtureSuite = serde_json::from_str(&text).map_err(|e| invalid(e.to_string()))?;
    suite.validate().map_err(|e| invalid(e.to_string()))?;
    Ok(suite)
}

/// Template files looked up in a templates directory. Missing files keep the
/// built-in default.
pub const OVERALL_PLAN_FILE: &str = "overall_plan.txt";
pub const RETRIEVAL_KEY_FILE: &str = "retrieval_key.txt";
pub const ACTION_FILE: &str = "action.txt";
/// Overall-plan exemplars, separated by lines holding only `---`.
pub const PLAN_EXEMPLARS_FILE: &str = "plan_exemplars.txt";
/// Key exemplars, one `action plan => key line` per line.
pub const KEY_EXEMPLARS_FILE: &str = "key_exemplars.txt";

fn read_optional(dir: &Path, name: &str) -> Result<Option<String>, FixtureError> {
    let path = dir.join(name);
    match fs::read_to_string(&path) {
        Ok(text) => Ok(Some(text.strip_suffix('\n').unwrap_or(&text).to_string())),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(source) => Err(FixtureError::Io { path, source }),
    }
}

fn template(dir: &Path, file: &str, name: &str, fallback: &str) -> Result<PromptTemplate, FixtureError> {
    let body = read_optional(dir, file)?.unwrap_or_else(|| fallback.to_string());
    PromptTemplate::parse(name, body).map_err(|e| FixtureError::Invalid { path: dir.join(file), message: e.to_string() })
}

/// Build the prompting agent from a templates directory.
pub fn load_agent(dir: &Path) -> Result<Agent, FixtureError> {
    use rap_core::template as t;
    if !dir.is_dir() {
        return Err(FixtureError::Io { path: dir.to_path_buf(), source: io::Error::from(io::ErrorKind::NotFound) });
    }
    let mut agent = Agent::default();
    let plan = template(dir, OVERALL_PLAN_FILE, "overall_plan", t::OVERALL_PLAN)?;
    let key = template(dir, RETRIEVAL_KEY_FILE, "retrieval_key", t::RETRIEVAL_KEY)?;
    agent.reasoner = agent.reasoner.with_templates(plan, key);
    agent.executor = agent.executor.with_template(template(dir, ACTION_FILE, "action", t::ACTION)?);
    if let Some(text) = read_optional(dir, PLAN_EXEMPLARS_FILE)? {
        agent.plan_exemplars = text
            .split("\n---\n")
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
    }
    if let Some(text) = read_optional(dir, KEY_EXEMPLARS_FILE)? {
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let (plan, key) = line.split_once(" => ").ok_or_else(|| FixtureError::Invalid {
                path: dir.join(KEY_EXEMPLARS_FILE),
                message: format!("line {}: expected `plan => key`", i + 1),
            })?;
            pairs.push((plan.trim().to_string(), key.trim().to_string()));
        }
        agent.reasoner = agent.reasoner.with_key_exemplars(pairs);
    }
    Ok(agent)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_suite_and_bad_json() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_suite(&dir.path().join("nope.json")), Err(FixtureError::Io { .. })));
        let p = dir.path().join("bad.json");
        fs::write(&p, "{\"name\":\"x\",\"tasks\":[{\"id\":\"a\"}]}").unwrap();
        assert!(matches!(load_suite(&p), Err(FixtureError::Invalid { .. })));
    }

    #[test]
    fn templates_override_defaults() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(ACTION_FILE), "Task: {task}\n{trajectory}> \n").unwrap();
        fs::write(dir.path().join(PLAN_EXEMPLARS_FILE), "one\n---\ntwo\n").unwrap();
        fs::write(dir.path().join(KEY_EXEMPLARS_FILE), "find a mug => search: mug\n").unwrap();
        let agent = load_agent(dir.path()).unwrap();
        assert_eq!(agent.plan_exemplars, ["one", "two"]);

        fs::write(dir.path().join(RETRIEVAL_KEY_FILE), "{nosuchslot}").unwrap();
        assert!(matches!(load_agent(dir.path()), Err(FixtureError::Invalid { .. })));
        assert!(load_agent(&dir.path().join("absent")).is_err());
    }
}
