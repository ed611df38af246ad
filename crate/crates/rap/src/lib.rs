//! File formats, network backends, configuration and the evaluation harness
//! around `rap-core`.

pub mod cache;
pub mod config;
pub mod http;
pub mod scripted;
pub mod store;
pub mod fixtures;
pub mod harness;
pub mod report;
