//! Retrieval-augmented planning for language-model agents.
//!
//! Successful task executions are kept as episode logs in a [`memory::MemoryStore`].
//! At planning time the [`retriever`] scores every log against the current
//! situation (task text, overall plan and a typed retrieval key), picks the
//! best ones and cuts a window of steps around the most relevant element.
//! The [`executor`] turns those windows into an in-context prompt and the
//! [`orchestrator`] drives the plan/act/observe loop over an [`envs::Environment`].
//!
//! The crate is `no_std` and only needs `alloc`. File formats, network
//! backends and the command line live in the companion `rap` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod backend;
pub mod embedding;
pub mod envs;
pub mod executor;
pub mod hash;
pub mod memory;
pub mod orchestrator;
pub mod planner;
pub mod retriever;
pub mod template;

pub use backend::{BackendError, CompletionBackend, CompletionRequest};
pub use embedding::{cosine, Embedding, EmbeddingError, EmbeddingProvider, HashingEmbedder, Modality};
pub use envs::{EnvError, EnvStep, Environment};
pub use executor::{build_prompt, next_output, AgentOutput, OutputKind, PromptBudget, PromptContext};
pub use memory::{
    EpisodeLog, Filter, InsertOutcome, MemoryError, MemoryStore, Observation, Provenance, Step, TaskSpec,
};
pub use orchestrator::{run_episode, run_trials, Agent, EpisodeResult, RunConfig, TrialReport};
pub use planner::{parse_key_line, Reasoner};
pub use retriever::{
    extract_window, retrieve, score_log, KeyKind, QueryState, RetrievalKey, RetrievedExperience, RetrieverError,
    ScoreWeights, WindowPolicy,
};
