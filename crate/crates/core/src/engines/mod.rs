//! LLM-free machinery the tools rely on.

pub mod diff;
pub mod fence;
pub mod horn;
pub mod sandbox;
pub mod tfidf;
pub mod vote;
pub mod world;
