//! Out-of-process tool modules: wire format, client, registry and the
//! bundled scripter and document browser.

pub mod client;
pub mod docbrowser;
pub mod recommend;
pub mod registry;
pub mod scripter;
pub mod server;
pub mod synth;
pub mod transport;
pub mod wire;

pub use client::{InvokeResult, ModuleClient, ModuleDescriptor, ModuleError};
pub use registry::{LoadError, ModuleRegistry};
pub use server::{ModuleHandler, ModuleServer, Outcome};
pub use transport::Address;
pub use wire::{FunctionDoc, WireArg};
