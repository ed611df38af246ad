//! Vector-observation variant of any text environment.
//!
//! Each text observation is replaced by its embedding under `provider`, the
//! desk-scale stand-in for a frozen visual encoder. Retrieval over such logs
//! uses visual keys.

use alloc::format;

use super::{EnvError, EnvStep, Environment};
use crate::embedding::EmbeddingProvider;
use crate::memory::{Observation, TaskSpec};

#[derive(Debug, Clone)]
pub struct VectorObservations<E, P> {
    inner: E,
    provider: P,
}

impl<E, P> VectorObservations<E, P> {
    pub fn new(inner: E, provider: P) -> Self {
        VectorObservations { inner, provider }
    }

    pub fn into_inner(self) -> E {
        self.inner
    }
}

impl<E: Environment, P: EmbeddingProvider> VectorObservations<E, P> {
    fn encode(&self, obs: Observation) -> Result<Observation, EnvError> {
        match obs {
            Observation::Text { text } => {
                let e = self.provider.embed(&text).map_err(|e| EnvError::Other(format!("observation encoder: {e}")))?;
                Ok(Observation::Vector { vector: e.into_values() })
            }
            v => Ok(v),
        }
    }
}

impl<E: Environment, P: EmbeddingProvider> Environment for VectorObservations<E, P> {
    fn reset(&mut self, task: &TaskSpec) -> Result<Observation, EnvError> {
        let obs = self.inner.reset(task)?;
        self.encode(obs)
    }

    fn step(&mut self, action: &str) -> Result<EnvStep, EnvError> {
        let step = self.inner.step(action)?;
        Ok(EnvStep { observation: self.encode(step.observation)?, ..step })
    }
}
