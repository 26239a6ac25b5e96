//! Shape-routed reasoning harness: deterministic engines, tools, baselines,
//! scorers and run analytics.

pub mod engines;
pub mod gateway;
pub mod problem;
pub mod trace;
pub mod scoring;
pub mod prompts;
pub mod router;
pub mod tools;
pub mod heavyweight;
pub mod analytics;
pub mod runner;
