use serde::{Deserialize, Serialize};

use crate::clock::Millis;
use crate::types::{Message, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepKind {
    Continue,
    ToCaller,
    /// The iteration cap ended the turn.
    Capped,
}

/// One line of the event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub seq: u64,
    pub node: NodeId,
    pub parent: Option<NodeId>,
    pub at: Millis,
    #[serde(flatten)]
    pub body: EventBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EventBody {
    NodeCreated {
        name: String,
        agent_type: String,
    },
    /// `node` sends `message` to its child.
    Call {
        child: NodeId,
        child_name: String,
        message: Message,
    },
    /// The child's reply reaches `node`.
    Return {
        child: NodeId,
        child_name: String,
        message: Message,
        variable: String,
    },
    /// One backend invocation: the inputs appended to history, the output,
    /// and what the interpreter made of it.
    LlmTurn {
        turn: u64,
        inputs: Vec<Message>,
        output: Message,
        feedback: String,
        outcome: StepKind,
        usage: usize,
    },
    ToolCall {
        module: String,
        function: String,
        args: String,
    },
    ToolResult {
        module: String,
        function: String,
        ok: bool,
        text: String,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        written: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        state: Option<String>,
    },
    Compression {
        note: Message,
        pointer: usize,
        forced: bool,
    },
    Intervention {
        target: String,
        body: String,
        status: String,
    },
    Notification {
        text: String,
    },
    Ingest {
        record: u64,
        source: String,
        text: String,
    },
}

impl EventBody {
    pub fn kind(&self) -> &'static str {
        match self {
            EventBody::NodeCreated { .. } => "node-created",
            EventBody::Call { .. } => "call",
            EventBody::Return { .. } => "return",
            EventBody::LlmTurn { .. } => "llm-turn",
            EventBody::ToolCall { .. } => "tool-call",
            EventBody::ToolResult { .. } => "tool-result",
            EventBody::Compression { .. } => "compression",
            EventBody::Intervention { .. } => "intervention",
            EventBody::Notification { .. } => "notification",
            EventBody::Ingest { .. } => "ingest",
        }
    }
}

/// Checks that Call/Return events nest properly. Returns the calls still
/// open at the end of the log.
pub fn dyck_check(events: &[EventRecord]) -> Result<Vec<NodeId>, String> {
    let mut stack: Vec<NodeId> = Vec::new();
    for e in events {
        match &e.body {
            EventBody::Call { child, .. } => stack.push(*child),
            EventBody::Return { child, .. } => match stack.pop() {
                Some(top) if top == *child => {}
                Some(top) => {
                    return Err(format!(
                        "seq {}: return from {child} while {top} is the innermost call",
                        e.seq
                    ))
                }
                None => return Err(format!("seq {}: return from {child} without a call", e.seq)),
            },
            _ => {}
        }
    }
    Ok(stack)
}
