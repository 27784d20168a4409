//! Reasoning backends and the context rendering they share.

pub mod http;
pub mod scripted;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{ContextSnapshot, Message, NodeId, Role};

pub use http::HttpBackend;
pub use scripted::{Scenario, ScriptedBackend};

pub const DEFAULT_MAX_TOKENS: u32 = 4096;
pub const DEFAULT_TEMPERATURE: f32 = 0.2;

pub const FEEDBACK_BANNER: &str = "[interpreter feedback, private to you, not from your caller]";
pub const NOTE_BANNER: &str = "[system note, private to you, not from your caller]";
pub const INTERVENTION_BANNER: &str = "[intervention by the human operator]";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedMessage {
    pub role: String,
    pub text: String,
}

/// Who the request is for; used by the scripted backend to pick rules.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestMeta {
    pub agent_type: String,
    pub node_name: String,
    pub node_id: NodeId,
    /// Backend invocations this node made before this one.
    pub turn_index: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendRequest {
    pub messages: Vec<RenderedMessage>,
    /// Messages before this index are the cacheable prefix (system prompt and history).
    pub stable_len: usize,
    pub meta: RequestMeta,
    pub max_tokens: u32,
    pub temperature: f32,
}

impl BackendRequest {
    pub fn stable(&self) -> &[RenderedMessage] {
        &self.messages[..self.stable_len]
    }

    pub fn volatile(&self) -> &[RenderedMessage] {
        &self.messages[self.stable_len..]
    }

    /// The prefix as one string, for cache-stability checks.
    pub fn stable_text(&self) -> String {
        join(self.stable())
    }
}

pub fn join(msgs: &[RenderedMessage]) -> String {
    let mut s = String::new();
    for m in msgs {
        s.push_str("<|");
        s.push_str(&m.role);
        s.push_str("|>\n");
        s.push_str(&m.text);
        s.push('\n');
    }
    s
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("scenario exhausted: no rule matches agent '{agent}' ({name}) at turn {turn} and there is no default")]
    ScenarioExhausted { agent: String, name: String, turn: u64 },
    #[error("backend returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("backend transport error: {0}")]
    Transport(String),
    #[error("unexpected backend response: {0}")]
    BadResponse(String),
    #[error("empty request")]
    EmptyRequest,
}

pub trait Backend: Send {
    fn complete(&mut self, request: &BackendRequest) -> Result<String, BackendError>;
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn complete(&mut self, request: &BackendRequest) -> Result<String, BackendError> {
        (**self).complete(request)
    }
}

/// Renders one history record with its role label.
pub fn render_message(m: &Message) -> RenderedMessage {
    let (role, text) = match m.role {
        Role::System => ("system", m.body.clone()),
        Role::Caller if m.intervention => ("user", format!("{INTERVENTION_BANNER}\n{}", m.body)),
        Role::Caller => ("user", m.body.clone()),
        Role::Assistant => ("assistant", m.body.clone()),
        Role::ToolFeedback => ("user", format!("{FEEDBACK_BANNER}\n{}", m.body)),
        Role::SystemNote => ("user", format!("{NOTE_BANNER}\n{}", m.body)),
    };
    RenderedMessage {
        role: role.to_string(),
        text,
    }
}

/// Renders a snapshot: system prompt, history window, turn input, then the
/// dynamic notes as the final message.
pub fn render(snapshot: &ContextSnapshot, meta: RequestMeta) -> BackendRequest {
    let mut messages = vec![RenderedMessage {
        role: "system".into(),
        text: snapshot.system_prompt.clone(),
    }];
    messages.extend(snapshot.history_window.iter().map(render_message));
    let stable_len = messages.len();
    messages.extend(snapshot.turn_input.iter().map(render_message));
    let notes = snapshot.dynamic_notes.render();
    if !notes.is_empty() {
        messages.push(RenderedMessage {
            role: "user".into(),
            text: format!("{NOTE_BANNER}\n{notes}"),
        });
    }
    BackendRequest {
        messages,
        stable_len,
        meta,
        max_tokens: DEFAULT_MAX_TOKENS,
        temperature: DEFAULT_TEMPERATURE,
    }
}
