//! Run reports: JSON, an aligned text table and a per-trial CSV.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rap_core::orchestrator::{EpisodeResult, TrialReport};
use rap_core::MemoryStore;
use serde::{Deserialize, Serialize};

use crate::config::Config;

pub const JSON_FILE: &str = "report.json";
pub const TABLE_FILE: &str = "report.txt";
pub const CSV_FILE: &str = "trials.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeStats {
    pub tasks: usize,
    pub solved: usize,
    pub success_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceCount {
    pub backend_id: String,
    pub logs: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryBlock {
    pub path: Option<String>,
    pub initial_size: usize,
    pub final_size: usize,
    /// Backends that produced the initial memory.
    pub provenance: Vec<ProvenanceCount>,
}

impl MemoryBlock {
    pub fn describe(path: Option<&Path>, initial: &MemoryStore, final_size: usize) -> Self {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for log in initial.iter() {
            *counts.entry(log.provenance.backend_id.as_str()).or_default() += 1;
        }
        MemoryBlock {
            path: path.map(|p| p.display().to_string()),
            initial_size: initial.len(),
            final_size,
            provenance: counts.into_iter().map(|(b, n)| ProvenanceCount { backend_id: b.to_string(), logs: n }).collect(),
        }
    }
}

/// The same tasks run without the loaded memory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferBlock {
    pub without_memory: Vec<TrialReport>,
    pub with_memory_rate: f64,
    pub without_memory_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub name: String,
    pub command: String,
    pub backend_id: String,
    pub embedding_provider: String,
    pub per_trial: Vec<TrialReport>,
    pub per_task_type: BTreeMap<String, TypeStats>,
    pub memory: MemoryBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transfer: Option<TransferBlock>,
    pub episodes: Vec<EpisodeResult>,
    pub config_echo: Config,
}

/// Cumulative success per task type over all trials.
pub fn per_task_type(episodes: &[EpisodeResult]) -> BTreeMap<String, TypeStats> {
    let mut tasks: BTreeMap<String, BTreeMap<&str, bool>> = BTreeMap::new();
    for e in episodes {
        let ty = e.task_type.clone().unwrap_or_else(|| "untyped".into());
        let solved = tasks.entry(ty).or_default().entry(e.task_id.as_str()).or_insert(false);
        *solved |= e.success;
    }
    tasks
        .into_iter()
        .map(|(ty, by_task)| {
            let n = by_task.len();
            let solved = by_task.values().filter(|s| **s).count();
            (ty, TypeStats { tasks: n, solved, success_rate: solved as f64 / n.max(1) as f64 })
        })
        .collect()
}

fn table(out: &mut String, header: &[&str], rows: &[Vec<String>]) {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: Vec<&str>| {
        let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        padded.join("  ").trim_end().to_string()
    };
    out.push_str(&line(header.to_vec()));
    out.push('\n');
    for row in rows {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
        out.push('\n');
    }
}

fn trial_rows(trials: &[TrialReport]) -> Vec<Vec<String>> {
    trials
        .iter()
        .map(|t| {
            vec![
                t.trial.to_string(),
                t.attempted.to_string(),
                t.solved.to_string(),
                format!("{:.4}", t.success_rate),
                format!("{:.4}", t.mean_reward),
                t.memory_size.to_string(),
            ]
        })
        .collect()
}

const TRIAL_HEADER: [&str; 6] = ["trial", "attempted", "solved", "success_rate", "mean_reward", "memory"];

impl Report {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "run: {}  command: {}", self.name, self.command);
        let _ = writeln!(out, "backend: {}  embedding: {}", self.backend_id, self.embedding_provider);
        let provenance: Vec<String> = self.memory.provenance.iter().map(|p| format!("{}={}", p.backend_id, p.logs)).collect();
        let _ = writeln!(
            out,
            "memory: initial {}  final {}  provenance [{}]",
            self.memory.initial_size,
            self.memory.final_size,
            provenance.join(", ")
        );
        out.push('\n');
        table(&mut out, &TRIAL_HEADER, &trial_rows(&self.per_trial));
        out.push('\n');
        let rows: Vec<Vec<String>> = self
            .per_task_type
            .iter()
            .map(|(ty, s)| vec![ty.clone(), s.tasks.to_string(), s.solved.to_string(), format!("{:.4}", s.success_rate)])
            .collect();
        table(&mut out, &["task_type", "tasks", "solved", "success_rate"], &rows);
        if let Some(t) = &self.transfer {
            out.push_str("\nwithout memory:\n");
            table(&mut out, &TRIAL_HEADER, &trial_rows(&t.without_memory));
            let _ = writeln!(out, "\nwith memory {:.4}  without memory {:.4}", t.with_memory_rate, t.without_memory_rate);
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("trial,success_rate,mean_reward\n");
        for t in &self.per_trial {
            let _ = writeln!(out, "{},{},{}", t.trial, t.success_rate, t.mean_reward);
        }
        out
    }

    /// Write the three report files into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>, (PathBuf, io::Error)> {
        fs::create_dir_all(dir).map_err(|e| (dir.to_path_buf(), e))?;
        let files = [(JSON_FILE, self.to_json()), (TABLE_FILE, self.to_table()), (CSV_FILE, self.to_csv())];
        let mut written = Vec::new();
        for (name, body) in files {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| (path.clone(), e))?;
            written.push(path);
        }
        Ok(written)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn episode(id: &str, ty: &str, trial: u32, success: bool) -> EpisodeResult {
        EpisodeResult {
            task_id: id.into(),
            task_type: Some(ty.into()),
            success,
            reward: if success { 1.0 } else { 0.0 },
            steps_taken: 3,
            iterations: 4,
            overall_plan: None,
            trajectory: vec![],
            trial_index: trial,
            retrieval_trace: vec![],
            prompt_blocks: vec![],
            empty_completions: 0,
            failure: None,
        }
    }

    #[test]
    fn task_types_are_cumulative() {
        let eps = [
            episode("a", "pick", 1, false),
            episode("b", "pick", 1, true),
            episode("c", "heat", 1, false),
            episode("a", "pick", 2, true),
            episode("c", "heat", 2, false),
        ];
        let stats = per_task_type(&eps);
        assert_eq!(stats["pick"], TypeStats { tasks: 2, solved: 2, success_rate: 1.0 });
        assert_eq!(stats["heat"], TypeStats { tasks: 1, solved: 0, success_rate: 0.0 });
    }

    #[test]
    fn table_columns_align() {
        let mut out = String::new();
        table(&mut out, &["a", "bbbb"], &[vec!["long-cell".into(), "1".into()], vec!["x".into(), "22".into()]]);
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(lines[0], "a          bbbb");
        assert_eq!(lines[1], "long-cell  1");
        assert_eq!(lines[2], "x          22");
    }
}
