//! Environment contract and the built-in fixtures.

use alloc::string::String;

use crate::memory::{Observation, TaskSpec};

pub mod minihouse;
pub mod vector;

pub use minihouse::{FixtureSuite, FixtureTask, Goal, MiniHouse, World, WorldSpec};
pub use vector::VectorObservations;

#[derive(Debug, Clone, PartialEq)]
pub struct EnvStep {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EnvError {
    #[error("unknown task {0}")]
    UnknownTask(String),
    #[error("environment stepped before reset")]
    NotReset,
    #[error("invalid fixture: {0}")]
    InvalidFixture(String),
    #[error("environment failure: {0}")]
    Other(String),
}

pub trait Environment {
    /// Start `task` and return the initial observation.
    fn reset(&mut self, task: &TaskSpec) -> Result<Observation, EnvError>;
    /// Execute one action. Unusable commands are reported in-band.
    fn step(&mut self, action: &str) -> Result<EnvStep, EnvError>;
}

impl<E: Environment + ?Sized> Environment for &mut E {
    fn reset(&mut self, task: &TaskSpec) -> Result<Observation, EnvError> {
        (**self).reset(task)
    }
    fn step(&mut self, action: &str) -> Result<EnvStep, EnvError> {
        (**self).step(action)
    }
}

impl<E: Environment + ?Sized> Environment for alloc::boxed::Box<E> {
    fn reset(&mut self, task: &TaskSpec) -> Result<Observation, EnvError> {
        (**self).reset(task)
    }
    fn step(&mut self, action: &str) -> Result<EnvStep, EnvError> {
        (**self).step(action)
    }
}
