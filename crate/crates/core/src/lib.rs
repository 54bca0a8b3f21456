//! Domain-partitioned hybrid retrieval, prompt-driven research agents,
//! conversation sessions, and benchmark evaluation.

pub mod corpus;
pub mod gateway;
pub mod index;
pub mod prompts;
pub mod text;
pub mod trace;
pub mod agents;
pub mod eval;
pub mod orchestrator;
pub mod session;

#[cfg(test)]
mod test_support;
