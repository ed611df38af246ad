//! Run configuration: a TOML file, then `RAP_SECTION__KEY` environment
//! variables, then `section.key=value` command-line overrides.

use std::fs;
use std::path::{Path, PathBuf};

use rap_core::executor::PromptBudget;
use rap_core::orchestrator::RunConfig;
use rap_core::{ScoreWeights, WindowPolicy};
use serde::{Deserialize, Serialize};

pub const ENV_PREFIX: &str = "RAP_";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Io { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("bad override {0:?}: expected section.key=value")]
    BadOverride(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub name: String,
    pub max_steps: usize,
    pub d_max: u32,
    pub seed: u64,
    pub intra_task: bool,
    pub workers: usize,
    pub output_dir: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            name: "run".into(),
            max_steps: 50,
            d_max: 3,
            seed: 0,
            intra_task: true,
            workers: 1,
            output_dir: PathBuf::from("reports"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightsSection {
    pub task: f64,
    pub plan: f64,
    pub key: f64,
}

impl Default for WeightsSection {
    fn default() -> Self {
        let w = ScoreWeights::default();
        WeightsSection { task: w.task, plan: w.plan, key: w.key }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowsSection {
    pub action: WindowPolicy,
    pub observation: WindowPolicy,
    pub max_current_steps: usize,
    pub max_chars: usize,
}

impl Default for WindowsSection {
    fn default() -> Self {
        let b = PromptBudget::default();
        WindowsSection {
            action: WindowPolicy::ACTION,
            observation: WindowPolicy::OBSERVATION,
            max_current_steps: b.max_current_steps,
            max_chars: b.max_chars,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Scripted,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSection {
    pub kind: BackendKind,
    pub id: Option<String>,
    pub script: Option<PathBuf>,
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: Option<String>,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub max_in_flight: usize,
    pub max_retry_wait_secs: f64,
    pub temperature: f64,
    pub max_tokens: u32,
    pub audit_log: Option<PathBuf>,
}

impl Default for BackendSection {
    fn default() -> Self {
        BackendSection {
            kind: BackendKind::Scripted,
            id: None,
            script: None,
            base_url: "http://127.0.0.1:8000/v1".into(),
            model: "gpt-3.5-turbo".into(),
            api_key_env: None,
            timeout_secs: 60.0,
            max_retries: 3,
            max_in_flight: 4,
            max_retry_wait_secs: 30.0,
            temperature: 0.0,
            max_tokens: 256,
            audit_log: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Minihouse,
    Vector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSection {
    pub kind: EnvKind,
    pub fixtures: Option<PathBuf>,
    pub training_fixtures: Option<PathBuf>,
    pub templates_dir: Option<PathBuf>,
    pub filter_task_type: bool,
    pub filter_metadata: Vec<String>,
}

impl Default for EnvSection {
    fn default() -> Self {
        EnvSection {
            kind: EnvKind::Minihouse,
            fixtures: None,
            training_fixtures: None,
            templates_dir: None,
            filter_task_type: true,
            filter_metadata: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingKind {
    Hashing,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemorySection {
    /// Memory loaded before the first trial.
    pub path: Option<PathBuf>,
    /// Where the final memory is written, if anywhere.
    pub save: Option<PathBuf>,
    pub embedding: EmbeddingKind,
    pub embedding_dim: usize,
    pub embedding_url: String,
    pub embedding_model: String,
    pub api_key_env: Option<String>,
    pub timeout_secs: f64,
    pub max_retries: u32,
}

impl Default for MemorySection {
    fn default() -> Self {
        MemorySection {
            path: None,
            save: None,
            embedding: EmbeddingKind::Hashing,
            embedding_dim: 256,
            embedding_url: "http://127.0.0.1:8000/v1/embeddings".into(),
            embedding_model: "text-embedding".into(),
            api_key_env: None,
            timeout_secs: 30.0,
            max_retries: 3,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub run: RunSection,
    pub weights: WeightsSection,
    pub windows: WindowsSection,
    pub backend: BackendSection,
    pub env: EnvSection,
    pub memory: MemorySection,
}

/// `"42"` becomes an integer, `"true"` a boolean, `"[1, 2]"` an array;
/// anything that is not a TOML value stays a string.
fn parse_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_path(table: &mut toml::Table, path: &[&str], value: toml::Value) -> Result<(), ConfigError> {
    let (last, parents) = path.split_last().ok_or_else(|| ConfigError::BadOverride(String::new()))?;
    let mut at = table;
    for p in parents {
        let entry = at.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        at = entry.as_table_mut().ok_or_else(|| ConfigError::Invalid(format!("{p} is not a section")))?;
    }
    at.insert(last.to_string(), value);
    Ok(())
}

/// Apply one `section.key=value` override.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), ConfigError> {
    let (key, value) = spec.split_once('=').ok_or_else(|| ConfigError::BadOverride(spec.into()))?;
    let path: Vec<&str> = key.trim().split('.').filter(|s| !s.is_empty()).collect();
    if path.len() < 2 {
        return Err(ConfigError::BadOverride(spec.into()));
    }
    set_path(table, &path, parse_value(value.trim()))
}

/// Apply `RAP_SECTION__KEY=value` variables; other variables are ignored.
pub fn apply_env<I: IntoIterator<Item = (String, String)>>(table: &mut toml::Table, vars: I) -> Result<(), ConfigError> {
    let mut vars: Vec<(String, String)> = vars.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX) && k.contains("__")).collect();
    vars.sort();
    for (k, v) in vars {
        let path: Vec<String> = k[ENV_PREFIX.len()..].split("__").map(|s| s.to_ascii_lowercase()).collect();
        let path: Vec<&str> = path.iter().map(String::as_str).collect();
        set_path(table, &path, parse_value(&v))?;
    }
    Ok(())
}

impl Config {
    /// Load with full layering. Relative paths in the file are resolved
    /// against the file's directory; those given as overrides against the
    /// working directory.
    pub fn load<I>(path: Option<&Path>, env: I, overrides: &[String]) -> Result<Config, ConfigError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let cfg = Config::layered(path, env, overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// [`Config::load`] without the final validation, for commands that
    /// only need some sections.
    pub fn layered<I>(path: Option<&Path>, env: I, overrides: &[String]) -> Result<Config, ConfigError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut table = match path {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| ConfigError::Io { path: p.display().to_string(), message: e.to_string() })?;
                text.parse::<toml::Table>().map_err(|e| ConfigError::Invalid(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        let base = path.and_then(Path::parent).map(Path::to_path_buf).unwrap_or_default();
        let file_cfg: Config = table.clone().try_into().map_err(|e: toml::de::Error| ConfigError::Invalid(e.to_string()))?;
        apply_env(&mut table, env)?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut cfg: Config = table.try_into().map_err(|e: toml::de::Error| ConfigError::Invalid(e.to_string()))?;
        cfg.resolve_paths(&file_cfg, &base);
        cfg.absolutize();
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str, base: &Path) -> Result<Config, ConfigError> {
        let mut cfg: Config = toml::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let file_cfg = cfg.clone();
        cfg.resolve_paths(&file_cfg, base);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Paths that still carry their value from the file are made relative to it.
    fn resolve_paths(&mut self, file: &Config, base: &Path) {
        fn fix(p: &mut PathBuf, from_file: &PathBuf, base: &Path) {
            if p == from_file && p.is_relative() {
                *p = base.join(&*p);
            }
        }
        fn fix_opt(p: &mut Option<PathBuf>, from_file: &Option<PathBuf>, base: &Path) {
            if let (Some(p), Some(f)) = (p.as_mut(), from_file.as_ref()) {
                fix(p, f, base);
            }
        }
        fix(&mut self.run.output_dir, &file.run.output_dir, base);
        fix_opt(&mut self.backend.script, &file.backend.script, base);
        fix_opt(&mut self.backend.audit_log, &file.backend.audit_log, base);
        fix_opt(&mut self.env.fixtures, &file.env.fixtures, base);
        fix_opt(&mut self.env.training_fixtures, &file.env.training_fixtures, base);
        fix_opt(&mut self.env.templates_dir, &file.env.templates_dir, base);
        fix_opt(&mut self.memory.path, &file.memory.path, base);
        fix_opt(&mut self.memory.save, &file.memory.save, base);
    }

    /// Anchor every remaining relative path at the working directory, so an
    /// echoed config means the same thing wherever it is written.
    fn absolutize(&mut self) {
        fn abs(p: &mut PathBuf) {
            if p.is_relative() {
                if let Ok(a) = std::path::absolute(&*p) {
                    *p = a;
                }
            }
        }
        abs(&mut self.run.output_dir);
        for p in [
            &mut self.backend.script,
            &mut self.backend.audit_log,
            &mut self.env.fixtures,
            &mut self.env.training_fixtures,
            &mut self.env.templates_dir,
            &mut self.memory.path,
            &mut self.memory.save,
        ]
        .into_iter()
        .flatten()
        {
            abs(p);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.run_config().map(|_| ())?;
        if self.run.workers == 0 {
            return Err(ConfigError::Invalid("run.workers must be at least 1".into()));
        }
        if self.memory.embedding_dim < rap_core::embedding::MIN_HASHING_DIM {
            return Err(ConfigError::Invalid("memory.embedding_dim must be at least 8".into()));
        }
        if self.backend.kind == BackendKind::Scripted && self.backend.script.is_none() {
            return Err(ConfigError::Invalid("backend.script is required for the scripted backend".into()));
        }
        if !(self.backend.timeout_secs > 0.0 && self.memory.timeout_secs > 0.0) {
            return Err(ConfigError::Invalid("timeouts must be positive".into()));
        }
        Ok(())
    }

    pub fn run_config(&self) -> Result<RunConfig, ConfigError> {
        let weights = ScoreWeights::new(self.weights.task, self.weights.plan, self.weights.key)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let rc = RunConfig {
            max_steps: self.run.max_steps,
            d_max: self.run.d_max,
            weights,
            window_action: self.windows.action,
            window_observation: self.windows.observation,
            budget: PromptBudget { max_current_steps: self.windows.max_current_steps, max_chars: self.windows.max_chars },
            intra_task: self.run.intra_task,
            seed: self.run.seed,
            filter_task_type: self.env.filter_task_type,
            filter_metadata: self.env.filter_metadata.clone(),
        };
        rc.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(rc)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
