pub mod backend;
pub mod data;
pub mod dialogue;
pub mod engine;
pub mod eval;
pub mod ledger;
pub mod prompts;
pub mod rng;
pub mod self_agent;
pub mod tracker;
