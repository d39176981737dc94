//! Guarded mobile/web UI agent: a remote planner proposes step commands,
//! local guards gate and verify each step, and a placeholder memory keeps
//! user secrets on the device.

pub mod cli;
pub mod codec;
pub mod coordinator;
pub mod corpus;
pub mod eval;
pub mod executor;
pub mod guards;
pub mod llm;
pub mod privacy;
pub mod replay;
pub mod screen;
pub mod sim;
