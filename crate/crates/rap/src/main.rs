use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rap::config::{Config, ConfigError};
use rap::fixtures::load_suite;
use rap::harness::{self, HarnessError, Runtime};
use rap::store;
use rap_core::retriever::QueryState;
use rap_core::{parse_key_line, ScoreWeights};

#[derive(Parser)]
#[command(name = "rap", version, about = "Retrieval-augmented planning for language-model agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// TOML run configuration.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a setting, e.g. `--set run.d_max=1`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
    /// Use the scripted backend with this rules file.
    #[arg(long, value_name = "RULES")]
    script: Option<PathBuf>,
    /// Episodes run in parallel.
    #[arg(long)]
    workers: Option<usize>,
}

impl Common {
    fn overrides(&self) -> Vec<String> {
        let mut all = self.overrides.clone();
        if let Some(s) = &self.script {
            all.push("backend.kind=\"scripted\"".into());
            all.push(format!("backend.script={}", toml_string(s)));
        }
        if let Some(w) = self.workers {
            all.push(format!("run.workers={w}"));
        }
        all
    }

    fn load(&self) -> Result<Config, ConfigError> {
        Config::load(self.config.as_deref(), std::env::vars(), &self.overrides())
    }
}

fn toml_string(p: &Path) -> String {
    toml::Value::String(p.display().to_string()).to_string()
}

#[derive(Subcommand)]
enum Command {
    /// Run the multi-trial evaluation and write a report.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Memory loaded before the first trial.
        #[arg(long)]
        memory: Option<PathBuf>,
        /// Report directory (default: run.output_dir).
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Build a memory from the training fixtures.
    BuildMemory {
        #[command(flatten)]
        common: Common,
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Evaluate with a memory built by another backend, and without it.
    Transfer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        memory: PathBuf,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Rank the logs of a memory against a query.
    InspectMemory {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        memory: PathBuf,
        /// Task text of the query.
        #[arg(long)]
        query: String,
        #[arg(long)]
        plan: Option<String>,
        /// Retrieval key line, e.g. "search: mug".
        #[arg(long)]
        key: Option<String>,
        #[arg(long, short, default_value_t = 5)]
        k: usize,
        /// Only logs of this task type.
        #[arg(long = "type")]
        task_type: Option<String>,
        #[arg(long)]
        json: bool,
    },
    /// Validate fixture files and show each task's optimal solution length.
    ListFixtures {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        #[arg(long)]
        json: bool,
    },
}

fn fail(err: HarnessError) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(err.exit_code() as u8)
}

fn report_out(rt: &Runtime, report: &rap::report::Report, output: Option<PathBuf>) -> ExitCode {
    let dir = output.unwrap_or_else(|| rt.config.run.output_dir.clone());
    if let Err(e) = harness::write_report(report, &dir) {
        return fail(e);
    }
    if let (Some(audit), Some(path)) = (&rt.audit, &rt.config.backend.audit_log) {
        if let Err(source) = audit.write_jsonl(path) {
            return fail(HarnessError::Output { path: path.clone(), source });
        }
    }
    print!("{}", report.to_table());
    println!("report written to {}", dir.display());
    if harness::had_connectivity_failure(report) {
        eprintln!("error: the backend could not be reached for at least one episode");
        return ExitCode::from(3);
    }
    ExitCode::SUCCESS
}

fn runtime(common: &Common) -> Result<Runtime, HarnessError> {
    Runtime::new(common.load()?, &|name| std::env::var(name).ok())
}

fn run(cli: Cli) -> ExitCode {
    match cli.command {
        Command::Eval { common, memory, output } => {
            let rt = match runtime(&common) {
                Ok(rt) => rt,
                Err(e) => return fail(e),
            };
            match rt.eval(memory.as_deref()) {
                Ok(report) => report_out(&rt, &report, output),
                Err(e) => fail(e),
            }
        }
        Command::Transfer { common, memory, output } => {
            let rt = match runtime(&common) {
                Ok(rt) => rt,
                Err(e) => return fail(e),
            };
            match rt.transfer(&memory) {
                Ok(report) => report_out(&rt, &report, output),
                Err(e) => fail(e),
            }
        }
        Command::BuildMemory { common, output } => {
            let result = runtime(&common).and_then(|rt| rt.build_memory(&output));
            match result {
                Ok((_, summary)) => {
                    println!("stored {} / attempted {}", summary.stored, summary.attempted);
                    println!("memory written to {}", output.display());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
        Command::InspectMemory { common, memory, query, plan, key, k, task_type, json } => {
            let result = (|| -> Result<String, HarnessError> {
                let config = Config::layered(common.config.as_deref(), std::env::vars(), &common.overrides())?;
                let store = store::load(&memory)?;
                let weights = ScoreWeights::new(config.weights.task, config.weights.plan, config.weights.key)
                    .map_err(|e| ConfigError::Invalid(e.to_string()))?;
                let mut q = QueryState::new(query).with_filter(harness::task_filter(task_type.as_deref()));
                q.overall_plan = plan;
                if let Some(line) = key {
                    q.key = Some(parse_key_line(&line).map_err(|e| ConfigError::Invalid(format!("--key: {e}")))?);
                }
                let provider = harness::provider_for(&config, &|name| std::env::var(name).ok())?;
                let rows = harness::inspect(&store, &q, &weights, k, &*provider)?;
                Ok(if json {
                    serde_json::to_string_pretty(&rows).expect("rows serialize") + "\n"
                } else {
                    harness::inspect_table(&rows)
                })
            })();
            match result {
                Ok(text) => {
                    print!("{text}");
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
        Command::ListFixtures { files, json } => {
            let mut listings = Vec::new();
            for f in &files {
                match load_suite(f) {
                    Ok(suite) => listings.push((suite.name.clone(), harness::list_fixtures(&suite))),
                    Err(e) => return fail(e.into()),
                }
            }
            if json {
                let value: serde_json::Map<String, serde_json::Value> =
                    listings.iter().map(|(n, l)| (n.clone(), serde_json::to_value(l).expect("listing serializes"))).collect();
                println!("{}", serde_json::to_string_pretty(&value).expect("listing serializes"));
            } else {
                for (name, tasks) in &listings {
                    println!("{name}: {} tasks", tasks.len());
                    for t in tasks {
                        let steps = t.optimal_steps.map_or_else(|| "unsolvable".to_string(), |n| format!("{n} steps"));
                        println!("  {:<6} {:<6} {:<48} {steps}", t.id, t.task_type.as_deref().unwrap_or("-"), t.description);
                    }
                }
            }
            let unsolvable = listings.iter().flat_map(|(_, l)| l).filter(|t| t.optimal_steps.is_none()).count();
            if unsolvable > 0 {
                eprintln!("error: {unsolvable} task(s) have no solution within {} steps", harness::BFS_DEPTH);
                return ExitCode::from(2);
            }
            ExitCode::SUCCESS
        }
    }
}

fn main() -> ExitCode {
    run(Cli::parse())
}
