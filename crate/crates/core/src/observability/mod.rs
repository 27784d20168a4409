//! Event log, tree reconstruction, transcripts and session files.

pub mod event;
pub mod log;
pub mod reconstruct;
pub mod session;
pub mod transcript;

pub use event::{dyck_check, EventBody, EventRecord, StepKind};
pub use log::{EventLog, LogError};
pub use reconstruct::{reconstruct_from_lines, reconstruct_tree, Cut, NodeShape, Reconstructed, TreeShape};
pub use session::{read_session, write_session, SessionError, SessionSnapshot};
