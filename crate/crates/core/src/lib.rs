//! A runtime for recursive agent call trees.
//!
//! Agents are nodes of a tree that grows on demand: an agent's output is
//! scanned for directives such as `@CALL("coder", "c1") ...`, which create a
//! child on first use and reuse it as a persistent dialogue afterwards. Tools
//! live in separate processes behind a small framed RPC protocol. Every
//! interaction lands in an append-only event log from which the tree and all
//! transcripts can be rebuilt.
//!
//! Start with [`runtime::Runtime`] and the scripted backend in
//! [`backend::scripted`]; the `examples/` directory has one program per
//! capability.

pub mod backend;
pub mod clock;
pub mod config;
pub mod control_api;
pub mod extmod;
pub mod hippocampus;
pub mod interpreter;
pub mod observability;
pub mod protocol;
pub mod runtime;
pub mod types;
pub mod variables;

pub use runtime::{Runtime, RuntimeConfig, RuntimeFault};
