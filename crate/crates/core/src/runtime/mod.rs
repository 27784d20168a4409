//! The scheduler: owns the call tree, runs agent turns and dispatches actions.

pub mod control;
pub mod notes;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;

use crate::backend::{render, Backend, BackendError, RequestMeta};
use crate::clock::{format_ms, Clock, SystemClock};
use crate::extmod::recommend::Recommendation;
use crate::extmod::registry::SCRIPTER;
use crate::extmod::synth::{self, parse_manifest, SynthRequest};
use crate::extmod::{Address, ModuleDescriptor, ModuleRegistry, WireArg};
use crate::hippocampus::Hippocampus;
use crate::interpreter::builtin::{builtin_patterns, builtin_subset};
use crate::interpreter::execute::{execute, ActionEnv};
use crate::interpreter::{scan, ArgValue, ParsedAction, PatternSet};
use crate::observability::session::{self, SessionError, SessionSnapshot};
use crate::observability::{EventBody, EventLog, LogError, StepKind};
use crate::protocol::{parse_embeds, resolve_for_recipient, EmbedSources};
use crate::types::{
    validate_tree, AgentNode, AgentSpec, ContextSnapshot, Message, MessageId, NodeId, NodeStatus, Role, TreeViolation,
};
use crate::variables::{
    capture_markdown, export_by_value, import_by_value, is_identifier, materialize, resolve_references, Content,
    ContentStore, Origin, DEFAULT_EXPORT_CAP,
};
use control::{ControlHandle, Target};
use notes::{estimate_tokens, over_threshold, overflow_text, DynamicNotes, NoteTag};

pub const DEFAULT_MAX_DEPTH: usize = 8;
pub const DEFAULT_MAX_CHILDREN: usize = 16;
/// Child replies longer than this reach the parent as a preview plus the variable name.
pub const DEFAULT_REPLY_INLINE_LIMIT: usize = 2048;
pub const DEFAULT_TOOL_INLINE_LIMIT: usize = 8192;
const PREVIEW_CHARS: usize = 160;
/// Usage above this multiple of the budget triggers a forced compression.
pub const FORCE_COMPRESS_FACTOR: f64 = 1.5;
pub const FORCED_SUMMARY: &str = "history truncated by system";

#[derive(Debug, Clone)]
pub struct RuntimeConfig {
    pub max_depth: usize,
    pub max_children: usize,
    pub export_cap: usize,
    pub reply_inline_limit: usize,
    pub tool_inline_limit: usize,
    pub hippocampus: bool,
    /// Environment handed to module processes the runtime launches. Values
    /// never appear in any context.
    pub module_env: Vec<(String, String)>,
    pub handshake_timeout: Duration,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        RuntimeConfig {
            max_depth: DEFAULT_MAX_DEPTH,
            max_children: DEFAULT_MAX_CHILDREN,
            export_cap: DEFAULT_EXPORT_CAP,
            reply_inline_limit: DEFAULT_REPLY_INLINE_LIMIT,
            tool_inline_limit: DEFAULT_TOOL_INLINE_LIMIT,
            hippocampus: false,
            module_env: Vec::new(),
            handshake_timeout: synth::DEFAULT_HANDSHAKE_TIMEOUT,
        }
    }
}

#[derive(Debug, Error)]
pub enum RuntimeFault {
    #[error("backend failure in {node}: {source}")]
    Backend {
        node: String,
        #[source]
        source: BackendError,
    },
    #[error(transparent)]
    Storage(#[from] LogError),
    #[error("rejected: {0}")]
    Rejected(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Session(#[from] SessionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameState {
    Pending,
    Returned,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CallFrame {
    pub caller: NodeId,
    pub callee: NodeId,
    pub request: Message,
    pub state: FrameState,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepOutcome {
    Continue(String),
    ToCaller(String),
}

type SnapshotObserver = Box<dyn FnMut(NodeId, &ContextSnapshot) + Send>;

pub struct Runtime {
    specs: BTreeMap<String, AgentSpec>,
    root_type: String,
    nodes: Vec<AgentNode>,
    root: Option<NodeId>,
    frames: Vec<CallFrame>,
    carry: BTreeMap<NodeId, Vec<Message>>,
    backend: Box<dyn Backend>,
    modules: ModuleRegistry,
    hippocampus: Option<Hippocampus>,
    log: EventLog,
    control: ControlHandle,
    clock: Arc<dyn Clock>,
    store: ContentStore,
    next_message: u64,
    file_owners: BTreeMap<String, NodeId>,
    config: RuntimeConfig,
    estimator: fn(usize) -> usize,
    observer: Option<SnapshotObserver>,
}

impl std::fmt::Debug for Runtime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Runtime")
            .field("root_type", &self.root_type)
            .field("nodes", &self.nodes.len())
            .field("events", &self.log.len())
            .finish()
    }
}

fn arg_text(store: &crate::variables::VariableStore, v: &ArgValue) -> Result<String, String> {
    Ok(match v {
        ArgValue::Text(s) | ArgValue::Name(s) => s.clone(),
        ArgValue::Number(n) => crate::extmod::wire::format_number(*n),
        ArgValue::Ref(name) => {
            let var = store.get(name).ok_or_else(|| unknown_variable(store, name))?;
            match var.content.as_text() {
                Some(t) => t.to_string(),
                None => {
                    return Err(format!(
                        "variable '{name}' holds {} bytes of {} and cannot be used as text",
                        var.content.len(),
                        var.content.media_type()
                    ))
                }
            }
        }
        ArgValue::Parts(parts) => {
            let mut s = String::new();
            for p in parts {
                s.push_str(&arg_text(store, p)?);
            }
            s
        }
    })
}

fn unknown_variable(store: &crate::variables::VariableStore, name: &str) -> String {
    let names = store.names();
    if names.is_empty() {
        format!("unknown variable '{name}'; no variables are defined")
    } else {
        format!("unknown variable '{name}'; defined: {}", names.join(", "))
    }
}

/// Message text for CALL: literal parts verbatim, references by name only.
fn message_text(v: &ArgValue) -> String {
    match v {
        ArgValue::Text(s) | ArgValue::Name(s) | ArgValue::Ref(s) => s.clone(),
        ArgValue::Number(n) => crate::extmod::wire::format_number(*n),
        ArgValue::Parts(parts) => parts.iter().map(message_text).collect(),
    }
}

fn preview(text: &str) -> String {
    let mut p: String = text.chars().take(PREVIEW_CHARS).collect();
    if p.len() < text.len() {
        p.push_str("...");
    }
    p
}

impl Runtime {
    pub fn new(
        specs: Vec<AgentSpec>,
        root_type: impl Into<String>,
        backend: Box<dyn Backend>,
        config: RuntimeConfig,
    ) -> Result<Runtime, RuntimeFault> {
        let root_type = root_type.into();
        let mut map = BTreeMap::new();
        for s in specs {
            s.check().map_err(RuntimeFault::Config)?;
            if map.insert(s.type_name.clone(), s.clone()).is_some() {
                return Err(RuntimeFault::Config(format!(
                    "agent type '{}' defined twice",
                    s.type_name
                )));
            }
        }
        if !map.contains_key(&root_type) {
            return Err(RuntimeFault::Config(format!(
                "root agent type '{root_type}' is not defined; defined types: {}",
                map.keys().cloned().collect::<Vec<_>>().join(", ")
            )));
        }
        if config.max_depth == 0 || config.max_children == 0 {
            return Err(RuntimeFault::Config("depth and width limits must be positive".into()));
        }
        let hippocampus = config.hippocampus.then(Hippocampus::default);
        Ok(Runtime {
            specs: map,
            root_type,
            nodes: Vec::new(),
            root: None,
            frames: Vec::new(),
            carry: BTreeMap::new(),
            backend,
            modules: ModuleRegistry::new(),
            hippocampus,
            log: EventLog::new(),
            control: ControlHandle::new(),
            clock: Arc::new(SystemClock),
            store: ContentStore::new(),
            next_message: 0,
            file_owners: BTreeMap::new(),
            config,
            estimator: estimate_tokens,
            observer: None,
        })
    }

    /// A runtime whose agents and backend come from a scripted scenario.
    pub fn from_scenario(scenario: crate::backend::Scenario, config: RuntimeConfig) -> Result<Runtime, RuntimeFault> {
        let root = scenario
            .root
            .clone()
            .or_else(|| scenario.agents.first().map(|a| a.type_name.clone()))
            .ok_or_else(|| RuntimeFault::Config("scenario defines no agents".into()))?;
        let specs = scenario.agents.clone();
        Runtime::new(
            specs,
            root,
            Box::new(crate::backend::ScriptedBackend::new(scenario)),
            config,
        )
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_estimator(mut self, estimator: fn(usize) -> usize) -> Self {
        self.estimator = estimator;
        self
    }

    /// Called with every context snapshot right before it goes to the backend.
    pub fn on_snapshot(&mut self, f: impl FnMut(NodeId, &ContextSnapshot) + Send + 'static) {
        self.observer = Some(Box::new(f));
    }

    pub fn set_backend(&mut self, backend: Box<dyn Backend>) {
        self.backend = backend;
    }

    pub fn control(&self) -> ControlHandle {
        self.control.clone()
    }

    /// Shared handles for a control API server.
    pub fn control_context(&self) -> crate::control_api::ControlContext {
        crate::control_api::ControlContext {
            control: self.control.clone(),
            log: self.log.clone(),
            blobs: self.store.clone(),
            clock: self.clock.clone(),
        }
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn modules(&self) -> &ModuleRegistry {
        &self.modules
    }

    pub fn modules_mut(&mut self) -> &mut ModuleRegistry {
        &mut self.modules
    }

    pub fn hippocampus(&self) -> Option<&Hippocampus> {
        self.hippocampus.as_ref()
    }

    pub fn nodes(&self) -> &[AgentNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> Option<&AgentNode> {
        self.nodes.get(id.0 as usize)
    }

    pub fn root(&self) -> Option<NodeId> {
        self.root
    }

    pub fn root_type(&self) -> &str {
        &self.root_type
    }

    pub fn specs(&self) -> impl Iterator<Item = &AgentSpec> {
        self.specs.values()
    }

    pub fn frames(&self) -> &[CallFrame] {
        &self.frames
    }

    pub fn content_store(&self) -> &ContentStore {
        &self.store
    }

    pub fn config(&self) -> &RuntimeConfig {
        &self.config
    }

    pub fn now(&self) -> i64 {
        self.clock.now_ms()
    }

    /// Looks a node up by `name` along the path of child names from the root.
    pub fn find(&self, path: &[&str]) -> Option<NodeId> {
        let mut cur = self.root?;
        for name in path {
            cur = *self.node(cur)?.children.get(*name)?;
        }
        Some(cur)
    }

    pub fn validate(&self) -> Result<(), Vec<TreeViolation>> {
        match self.root {
            Some(r) => validate_tree(r, &self.nodes),
            None if self.nodes.is_empty() => Ok(()),
            None => Err(vec![TreeViolation::NoRoot]),
        }
    }

    fn n(&self, id: NodeId) -> &AgentNode {
        &self.nodes[id.0 as usize]
    }

    fn n_mut(&mut self, id: NodeId) -> &mut AgentNode {
        &mut self.nodes[id.0 as usize]
    }

    fn message(&mut self, role: Role, sender: impl Into<String>, body: impl Into<String>) -> Message {
        let id = MessageId(self.next_message);
        self.next_message += 1;
        Message::new(id, role, sender, body, self.clock.now_ms())
    }

    fn emit(&mut self, node: NodeId, body: EventBody) -> Result<u64, RuntimeFault> {
        let parent = self.nodes.get(node.0 as usize).and_then(|n| n.parent);
        let at = self.clock.now_ms();
        match self.log.append(node, parent, at, body) {
            Ok(seq) => Ok(seq),
            Err(e) => {
                // Never continue with an unrecorded event: stop at the next boundary.
                self.control.pause();
                Err(RuntimeFault::Storage(e))
            }
        }
    }

    fn publish(&self, running: bool) {
        let statuses = self.nodes.iter().map(|n| (n.id, n.status)).collect();
        let active = self
            .nodes
            .iter()
            .find(|n| n.status == NodeStatus::Running)
            .map(|n| n.id);
        self.control.publish(statuses, active, running);
    }

    fn set_status(&mut self, id: NodeId, status: NodeStatus) {
        self.n_mut(id).status = status;
        self.publish(true);
    }

    fn create_node(&mut self, name: &str, agent_type: &str, parent: Option<NodeId>) -> Result<NodeId, RuntimeFault> {
        let id = NodeId(self.nodes.len() as u64);
        let depth = parent.map_or(0, |p| self.n(p).depth + 1);
        let spec = self.specs[agent_type].clone();
        self.nodes.push(AgentNode::new(id, name, spec, parent, depth));
        if let Some(p) = parent {
            self.n_mut(p).children.insert(name.to_string(), id);
        }
        self.emit(
            id,
            EventBody::NodeCreated {
                name: name.to_string(),
                agent_type: agent_type.to_string(),
            },
        )?;
        Ok(id)
    }

    fn ingest(&mut self, node: NodeId, text: &str, source: &str) -> Result<(), RuntimeFault> {
        let at = self.clock.now_ms();
        let Some(h) = self.hippocampus.as_mut() else {
            return Ok(());
        };
        if text.trim().is_empty() {
            return Ok(());
        }
        let record = h.ingest(text, source, at).id;
        self.emit(
            node,
            EventBody::Ingest {
                record,
                source: source.to_string(),
                text: text.to_string(),
            },
        )?;
        Ok(())
    }

    /// One user turn: creates the root on first use, re-enters it afterwards.
    pub fn run_root(&mut self, text: &str) -> Result<Message, RuntimeFault> {
        if text.trim().is_empty() {
            return Err(RuntimeFault::Rejected("empty message".into()));
        }
        let root = match self.root {
            Some(r) => r,
            None => {
                let root_type = self.root_type.clone();
                let r = self.create_node("root", &root_type, None)?;
                self.root = Some(r);
                r
            }
        };
        self.ingest(root, text, "user")?;
        let incoming = self.message(Role::Caller, "user", text);
        let result = self.run_turn(root, incoming);
        for dropped in self.control.drop_unknown() {
            let _ = self.emit(
                root,
                EventBody::Intervention {
                    target: dropped.target.to_string(),
                    body: dropped.body,
                    status: "dropped: unknown node".into(),
                },
            );
        }
        self.publish(false);
        result
    }

    /// Receiving side of a message: variables, code capture and embeds.
    fn deliver(&mut self, node: NodeId, msg: Message) -> Vec<Message> {
        let at = self.clock.now_ms();
        let workspace = if parse_embeds(&msg.body).is_empty() {
            None
        } else {
            self.modules.scripter_workspace()
        };
        let n = &mut self.nodes[node.0 as usize];
        materialize(&msg.attachments, &mut n.variables, at);
        let captured = if msg.role == Role::Caller {
            capture_markdown(&msg, &mut n.variables, at)
        } else {
            Vec::new()
        };
        let mut notes = Vec::new();
        if !captured.is_empty() {
            let names: Vec<String> = captured
                .iter()
                .map(|v| format!("{} ({} chars)", v.name, v.content.to_text_lossy().chars().count()))
                .collect();
            notes.push(format!(
                "Code blocks in the message above were stored as variables: {}. Refer to them by name.",
                names.join(", ")
            ));
        }
        let sources = EmbedSources {
            variables: Some(&n.variables),
            workspace: workspace.as_deref(),
        };
        for tag in parse_embeds(&msg.body) {
            if let Some(note) = resolve_for_recipient(&tag, n.spec.capability, sources).note {
                notes.push(note);
            }
        }
        let label = n.label();
        let mut out = vec![msg];
        for body in notes {
            out.push(self.message(Role::SystemNote, label.clone(), body));
        }
        out
    }

    fn take_interventions(&mut self, node: NodeId) -> Result<Vec<Message>, RuntimeFault> {
        let mut out = Vec::new();
        for req in self.control.take_for(node) {
            self.emit(
                node,
                EventBody::Intervention {
                    target: req.target.to_string(),
                    body: req.body.clone(),
                    status: "delivered".into(),
                },
            )?;
            let mut m = self.message(Role::Caller, "operator", req.body);
            m.intervention = true;
            out.extend(self.deliver(node, m));
        }
        Ok(out)
    }

    /// Loops steps until the node addresses its caller or the cap is hit.
    pub fn run_turn(&mut self, node: NodeId, incoming: Message) -> Result<Message, RuntimeFault> {
        if self.n(node).status == NodeStatus::Running {
            return Err(RuntimeFault::Rejected(format!(
                "{} is already running",
                self.n(node).label()
            )));
        }
        self.set_status(node, NodeStatus::Running);
        let mut inputs = self.carry.remove(&node).unwrap_or_default();
        inputs.extend(self.deliver(node, incoming));
        let cap = self.n(node).spec.iteration_cap;
        for _ in 0..cap {
            self.control.checkpoint();
            inputs.extend(self.take_interventions(node)?);
            match self.step(node, std::mem::take(&mut inputs)) {
                Ok(StepOutcome::ToCaller(text)) => {
                    let label = self.n(node).label();
                    self.set_status(node, NodeStatus::WaitingForCaller);
                    return Ok(self.message(Role::Assistant, label, text));
                }
                Ok(StepOutcome::Continue(feedback)) => {
                    let label = self.n(node).label();
                    inputs.push(self.message(Role::ToolFeedback, label, feedback));
                }
                Err(e) => {
                    self.set_status(node, NodeStatus::WaitingForCaller);
                    return Err(e);
                }
            }
        }
        let label = self.n(node).label();
        let text = format!(
            "{label} reached its iteration cap of {cap} steps without replying. Its work so far is kept; \
             send it a follow-up message to continue or redirect it."
        );
        self.carry.insert(node, inputs);
        self.emit(node, EventBody::Notification { text: text.clone() })?;
        self.set_status(node, NodeStatus::WaitingForCaller);
        Ok(self.message(Role::SystemNote, label, text))
    }

    fn chars(m: &Message) -> usize {
        m.body.chars().count()
    }

    /// Estimated tokens of system prompt, history window and `inputs`.
    pub fn usage(&self, node: NodeId, inputs: &[Message]) -> usize {
        let n = self.n(node);
        let chars = n.spec.system_prompt.chars().count()
            + n.window().iter().map(Self::chars).sum::<usize>()
            + inputs.iter().map(Self::chars).sum::<usize>();
        (self.estimator)(chars)
    }

    fn active_patterns(&self, node: NodeId) -> PatternSet {
        builtin_subset(&self.n(node).spec.pattern_names()).merged(self.modules.patterns())
    }

    fn redact(&self, text: String) -> String {
        let mut out = text;
        for (_, v) in &self.config.module_env {
            if v.len() >= 4 {
                out = out.replace(v.as_str(), "[redacted]");
            }
        }
        out
    }

    /// The dynamic notes for `node` given the pending `inputs`.
    pub fn f_state(&mut self, node: NodeId, inputs: &[Message]) -> DynamicNotes {
        let mut notes = DynamicNotes::default();
        notes.push(NoteTag::VariableList, self.n(node).variables.summary());
        notes.push(NoteTag::Clock, format_ms(self.clock.now_ms()));
        if self.modules.is_loaded(SCRIPTER) {
            let body = match self.modules.state_report(SCRIPTER) {
                Some(Ok(r)) => r,
                Some(Err(e)) => format!("(unavailable: {e})"),
                None => "(unavailable)".into(),
            };
            notes.push(NoteTag::WorkingDirectory, body);
        }
        let spec = &self.n(node).spec;
        let (budget, threshold) = (spec.context_budget, spec.compression_threshold);
        let usage = self.usage(node, inputs);
        if over_threshold(usage, budget, threshold) {
            notes.push(NoteTag::OverflowWarning, overflow_text(usage, budget, threshold));
        }
        let context: String = inputs.iter().map(|m| m.body.as_str()).collect::<Vec<_>>().join("\n");
        let recs: Vec<Recommendation> = self.modules.recommend(&context);
        if !recs.is_empty() {
            let lines: Vec<String> = recs
                .iter()
                .map(|r| {
                    let params: Vec<&str> = r.function.params.iter().map(|p| p.name.as_str()).collect();
                    format!(
                        "- @{}({}) from {}: {}",
                        r.function.name,
                        params.join(", "),
                        r.module,
                        r.function.documentation
                    )
                })
                .collect();
            notes.push(NoteTag::ToolRecommendation, lines.join("\n"));
        }
        if let Some(h) = &self.hippocampus {
            let exclude: Vec<&str> = inputs.iter().map(|m| m.body.trim()).collect();
            if let Some(body) = h.fragments(&context, self.clock.now_ms(), &exclude) {
                notes.push(NoteTag::MemoryFragment, body);
            }
        }
        for b in &mut notes.blocks {
            b.body = self.redact(std::mem::take(&mut b.body));
        }
        notes
    }

    pub fn assemble_context(&mut self, node: NodeId, inputs: &[Message]) -> ContextSnapshot {
        let notes = self.f_state(node, inputs);
        let n = self.n(node);
        ContextSnapshot {
            system_prompt: n.spec.system_prompt.clone(),
            history_window: n.window().to_vec(),
            turn_input: inputs.to_vec(),
            dynamic_notes: notes,
        }
    }

    fn apply_compression(&mut self, node: NodeId, summary: String, forced: bool) -> Result<(), RuntimeFault> {
        let label = self.n(node).label();
        let note = self.message(Role::SystemNote, label, format!("Summary of earlier work:\n{summary}"));
        let n = self.n_mut(node);
        n.history.push(note.clone());
        n.compression_pointer = n.history.len() - 1;
        let pointer = n.compression_pointer;
        self.emit(node, EventBody::Compression { note, pointer, forced })?;
        Ok(())
    }

    /// One perceive-reason-act cycle.
    pub fn step(&mut self, node: NodeId, inputs: Vec<Message>) -> Result<StepOutcome, RuntimeFault> {
        let budget = self.n(node).spec.context_budget;
        if self.usage(node, &inputs) as f64 > FORCE_COMPRESS_FACTOR * budget as f64 && !self.n(node).window().is_empty()
        {
            self.apply_compression(node, FORCED_SUMMARY.to_string(), true)?;
        }
        let usage = self.usage(node, &inputs);
        let snapshot = self.assemble_context(node, &inputs);
        if let Some(obs) = self.observer.as_mut() {
            obs(node, &snapshot);
        }
        let n = self.n(node);
        let meta = RequestMeta {
            agent_type: n.spec.type_name.clone(),
            node_name: n.name.clone(),
            node_id: node,
            turn_index: n.steps,
        };
        let label = n.label();
        let request = render(&snapshot, meta);
        let output = match self.backend.complete(&request) {
            Ok(o) => o,
            Err(source) => {
                self.emit(
                    node,
                    EventBody::Notification {
                        text: format!("backend failure: {source}"),
                    },
                )?;
                return Err(RuntimeFault::Backend { node: label, source });
            }
        };
        let turn = self.n(node).steps;
        let out_msg = self.message(Role::Assistant, label, output.clone());
        {
            let n = self.n_mut(node);
            n.steps += 1;
            n.history.extend(inputs.iter().cloned());
            n.history.push(out_msg.clone());
        }

        let active = self.active_patterns(node);
        let scanned = scan(&output, &active);
        let mut env = StepEnv {
            rt: self,
            node,
            compress: None,
        };
        let feedback = execute(&scanned, &active, &mut env)?;
        let compress = env.compress.take();
        let outcome = if feedback.is_empty() {
            StepKind::ToCaller
        } else {
            StepKind::Continue
        };
        self.emit(
            node,
            EventBody::LlmTurn {
                turn,
                inputs,
                output: out_msg,
                feedback: feedback.clone(),
                outcome,
                usage,
            },
        )?;
        if let Some(summary) = compress {
            self.apply_compression(node, summary, false)?;
        }
        Ok(if feedback.is_empty() {
            StepOutcome::ToCaller(output)
        } else {
            StepOutcome::Continue(feedback)
        })
    }

    /// CALL: create the child on first use, deliver, wait for its reply.
    pub fn call(
        &mut self,
        parent: NodeId,
        agent_type: &str,
        child_name: &str,
        message: &ArgValue,
    ) -> Result<Result<String, String>, RuntimeFault> {
        if !self.specs.contains_key(agent_type) {
            return Ok(Err(format!(
                "unknown agent type '{agent_type}'; registered types: {}",
                self.specs.keys().cloned().collect::<Vec<_>>().join(", ")
            )));
        }
        if !is_identifier(child_name) {
            return Ok(Err(format!(
                "child name '{child_name}' must be an identifier ([A-Za-z_][A-Za-z0-9_]*)"
            )));
        }
        for r in message.references() {
            if !self.n(parent).variables.contains(r) {
                return Ok(Err(unknown_variable(&self.n(parent).variables, r)));
            }
        }
        let existing = self.n(parent).children.get(child_name).copied();
        let child = match existing {
            Some(c) => {
                let t = &self.n(c).spec.type_name;
                if t != agent_type {
                    return Ok(Err(format!(
                        "child '{child_name}' already exists with type '{t}'; call it with that type or pick a new name"
                    )));
                }
                c
            }
            None => {
                let p = self.n(parent);
                if p.depth + 1 > self.config.max_depth {
                    return Ok(Err(format!(
                        "depth limit of {} reached; do this part yourself or ask your caller to split the task differently",
                        self.config.max_depth
                    )));
                }
                if p.children.len() >= self.config.max_children {
                    return Ok(Err(format!(
                        "you already have {} children, the limit; reuse an existing child ({}) or hand over fewer, larger subtasks",
                        p.children.len(),
                        p.children.keys().cloned().collect::<Vec<_>>().join(", ")
                    )));
                }
                self.create_node(child_name, agent_type, Some(parent))?
            }
        };

        let body = message_text(message);
        let attachments = resolve_references(&body, &self.n(parent).variables);
        let mut msg = self.message(Role::Caller, self.n(parent).label(), body);
        msg.attachments = attachments;
        self.emit(
            parent,
            EventBody::Call {
                child,
                child_name: child_name.to_string(),
                message: msg.clone(),
            },
        )?;
        self.frames.push(CallFrame {
            caller: parent,
            callee: child,
            request: msg.clone(),
            state: FrameState::Pending,
        });
        self.set_status(parent, NodeStatus::WaitingForChild);
        let result = self.run_turn(child, msg);
        if let Some(f) = self.frames.last_mut() {
            f.state = FrameState::Returned;
        }
        self.frames.pop();
        self.set_status(parent, NodeStatus::Running);
        let variable = format!("reply_{child_name}");

        let mut reply = match result {
            Ok(r) => r,
            Err(fault) => {
                let label = self.n(child).label();
                let note = self.message(
                    Role::SystemNote,
                    label,
                    format!("call aborted by runtime fault: {fault}"),
                );
                let _ = self.emit(
                    parent,
                    EventBody::Return {
                        child,
                        child_name: child_name.to_string(),
                        message: note,
                        variable: String::new(),
                    },
                );
                return Err(fault);
            }
        };
        reply.attachments = resolve_references(&reply.body, &self.n(child).variables);
        let at = self.clock.now_ms();
        let content = self.store.intern(Content::text(reply.body.clone()));
        {
            let vars = &mut self.n_mut(parent).variables;
            materialize(&reply.attachments, vars, at);
            vars.define(&variable, content, Origin::AgentReturn, at)
                .expect("reply names are identifiers");
        }
        self.emit(
            parent,
            EventBody::Return {
                child,
                child_name: child_name.to_string(),
                message: reply.clone(),
                variable: variable.clone(),
            },
        )?;
        let label = self.n(child).label();
        self.ingest(child, &reply.body, &label)?;

        let kind = &self.n(child).spec.type_name;
        let chars = reply.body.chars().count();
        let mut text = if reply.role == Role::SystemNote {
            format!("{child_name} ({label}) stopped without a reply:\n{}", reply.body)
        } else if chars > self.config.reply_inline_limit {
            format!(
                "reply from {child_name} ({kind}#{}) is {chars} chars, stored as variable {variable}. Preview:\n{}\n\
                 Pass {variable} by name instead of copying its content.",
                child,
                preview(&reply.body)
            )
        } else {
            format!(
                "reply from {child_name} ({kind}#{child}):\n{}\n(stored as variable {variable})",
                reply.body
            )
        };
        if !reply.attachments.is_empty() {
            let names: Vec<&str> = reply.attachments.iter().map(|a| a.name.as_str()).collect();
            text.push_str(&format!("\nvariables received: {}", names.join(", ")));
        }
        Ok(Ok(text))
    }

    fn tool_call(&mut self, node: NodeId, action: &ParsedAction) -> Result<Result<String, String>, RuntimeFault> {
        let function = action.pattern.clone();
        let module = self.modules.provider_of(&function).unwrap_or_default();
        let mut args = BTreeMap::new();
        let mut blobs = Vec::new();
        for (name, value) in &action.arguments {
            for r in value.references() {
                if blobs.iter().any(|b: &crate::variables::WireBlob| b.name == r) {
                    continue;
                }
                let vars = &self.n(node).variables;
                let Some(var) = vars.get(r) else {
                    return Ok(Err(unknown_variable(vars, r)));
                };
                match export_by_value(r, &var.content, self.config.export_cap) {
                    Ok(b) => blobs.push(b),
                    Err(e) => return Ok(Err(e.to_string())),
                }
            }
            args.insert(name.clone(), WireArg::from(value));
        }
        self.emit(
            node,
            EventBody::ToolCall {
                module: module.clone(),
                function: function.clone(),
                args: self.redact(serde_json::to_string(&args).unwrap_or_default()),
            },
        )?;
        let result = self.modules.invoke(&function, args, blobs);
        let state = self.modules.descriptor(&module).and_then(|d| d.current_state.clone());
        match result {
            Err(e) => {
                let text = self.redact(e.to_string());
                self.emit(
                    node,
                    EventBody::ToolResult {
                        module,
                        function,
                        ok: false,
                        text: text.clone(),
                        written: Vec::new(),
                        state,
                    },
                )?;
                Ok(Err(text))
            }
            Ok((module, r)) => {
                let text = self.redact(r.text);
                let written: Vec<String> = r.written.iter().map(|w| self.redact(w.clone())).collect();
                self.emit(
                    node,
                    EventBody::ToolResult {
                        module: module.clone(),
                        function: function.clone(),
                        ok: true,
                        text: text.clone(),
                        written: written.clone(),
                        state,
                    },
                )?;
                let at = self.clock.now_ms();
                let var_name = format!("{}_result", function.to_lowercase());
                let content = self.store.intern(Content::text(text.clone()));
                let mut received = Vec::new();
                {
                    let vars = &mut self.nodes[node.0 as usize].variables;
                    vars.define(&var_name, content, Origin::ToolReturn, at)
                        .expect("function names are identifiers");
                    for b in &r.blobs {
                        match import_by_value(b) {
                            Ok(c) => {
                                if vars
                                    .define(&b.name, self.store.intern(c), Origin::ToolReturn, at)
                                    .is_ok()
                                {
                                    received.push(b.name.clone());
                                }
                            }
                            Err(e) => received.push(format!("{} (rejected: {e})", b.name)),
                        }
                    }
                }
                let mut out = if text.chars().count() > self.config.tool_inline_limit {
                    format!(
                        "output is {} chars, stored as variable {var_name}. Beginning:\n{}",
                        text.chars().count(),
                        preview(&text)
                    )
                } else {
                    text
                };
                if !received.is_empty() {
                    out.push_str(&format!("\nvariables received: {}", received.join(", ")));
                }
                for path in &written {
                    let owner = *self.file_owners.entry(path.clone()).or_insert(node);
                    if owner != node {
                        out.push_str(&format!(
                            "\nownership warning: {path} was first written by {}; coordinate through your caller \
                             before changing files another agent owns",
                            self.n(owner).label()
                        ));
                    }
                }
                Ok(Ok(out))
            }
        }
    }

    fn load_module(&mut self, address: &str) -> Result<String, String> {
        let desc = self
            .modules
            .load(&Address::parse(address), &builtin_patterns())
            .map_err(|e| e.to_string())?;
        Ok(describe_module(&desc))
    }

    /// Loads a module by address outside any agent turn (preloading).
    pub fn preload_module(&mut self, address: &Address) -> Result<ModuleDescriptor, crate::extmod::LoadError> {
        self.modules.load(address, &builtin_patterns())
    }

    /// Starts a module program (which must print `LISTEN <address>` first),
    /// passing it the configured module environment, and loads it. The
    /// process is killed when the module is unloaded or the runtime drops.
    pub fn launch_module(
        &mut self,
        mut command: std::process::Command,
    ) -> Result<ModuleDescriptor, crate::extmod::LoadError> {
        command.envs(self.config.module_env.iter().map(|(k, v)| (k.as_str(), v.as_str())));
        let (mut child, address) = synth::spawn_listening(command, self.config.handshake_timeout)?;
        let mut client = match crate::extmod::ModuleClient::load(&address) {
            Ok(c) => c,
            Err(e) => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(e.into());
            }
        };
        client.adopt_process(child);
        self.modules.install(client, &builtin_patterns())
    }

    /// Checks a node's files-of-record; exposed for tests and the UI.
    pub fn file_owners(&self) -> &BTreeMap<String, NodeId> {
        &self.file_owners
    }

    pub fn inject(&self, target: Target, body: &str) -> control::Ack {
        self.control.inject(target, body, self.clock.now_ms())
    }

    fn snapshot(&self) -> SessionSnapshot {
        SessionSnapshot {
            root_type: self.root_type.clone(),
            root: self.root,
            specs: self.specs.clone(),
            nodes: self.nodes.clone(),
            carry: self.carry.clone(),
            memory: self.hippocampus.as_ref().map(|h| h.records().to_vec()),
            next_message: self.next_message,
            file_owners: self.file_owners.clone(),
            event_count: self.log.len() as u64,
        }
    }

    /// Writes the session file. Call between turns only.
    pub fn persist(&self, path: &Path) -> Result<(), RuntimeFault> {
        if self.nodes.iter().any(|n| n.status == NodeStatus::Running) {
            return Err(RuntimeFault::Rejected("persist is only allowed between turns".into()));
        }
        session::write_session(path, &self.snapshot(), &self.log.snapshot())?;
        Ok(())
    }

    /// Restores a persisted session with a fresh backend. Modules are not
    /// part of the session; load them again after restoring.
    pub fn restore(path: &Path, backend: Box<dyn Backend>, config: RuntimeConfig) -> Result<Runtime, RuntimeFault> {
        let (snap, events) = session::read_session(path)?;
        let mut rt = Runtime::new(
            snap.specs.values().cloned().collect(),
            snap.root_type.clone(),
            backend,
            config,
        )?;
        for n in &snap.nodes {
            for v in n.variables.all_versions() {
                rt.store.intern(v.content.clone());
            }
        }
        rt.nodes = snap.nodes;
        rt.root = snap.root;
        rt.carry = snap.carry;
        rt.next_message = snap.next_message;
        rt.file_owners = snap.file_owners;
        if let Some(records) = snap.memory {
            rt.hippocampus = Some(Hippocampus::default().with_records(records));
        }
        for n in &mut rt.nodes {
            if n.status == NodeStatus::Running || n.status == NodeStatus::WaitingForChild {
                n.status = NodeStatus::WaitingForCaller;
            }
        }
        rt.log = EventLog::from_events(events);
        rt.publish(false);
        Ok(rt)
    }

    /// Restores into the same configuration as an existing scenario run.
    pub fn restore_scenario(
        path: &Path,
        scenario: crate::backend::Scenario,
        config: RuntimeConfig,
    ) -> Result<Runtime, RuntimeFault> {
        Runtime::restore(path, Box::new(crate::backend::ScriptedBackend::new(scenario)), config)
    }

    /// Writes every future event to `path` as it happens.
    pub fn write_ahead_to(&self, path: &Path) -> Result<(), RuntimeFault> {
        self.log.write_ahead_to(path)?;
        Ok(())
    }
}

pub fn describe_module(desc: &ModuleDescriptor) -> String {
    let mut s = format!("module {} loaded from {}", desc.module_name, desc.address);
    if let Some(st) = &desc.current_state {
        s.push_str(&format!(", state {st}"));
    }
    s.push_str(". Functions:");
    for f in &desc.functions {
        let params: Vec<String> = f.params.iter().map(|p| p.name.clone()).collect();
        let vis = match &f.visible_in_states {
            Some(states) => format!(" [in {}]", states.join(", ")),
            None => String::new(),
        };
        s.push_str(&format!(
            "\n- @{}({}){vis}: {}",
            f.name,
            params.join(", "),
            f.documentation
        ));
    }
    s
}

struct StepEnv<'a> {
    rt: &'a mut Runtime,
    node: NodeId,
    compress: Option<String>,
}

impl StepEnv<'_> {
    fn text(&self, v: &ArgValue) -> Result<String, String> {
        arg_text(&self.rt.n(self.node).variables, v)
    }
}

impl ActionEnv for StepEnv<'_> {
    type Fault = RuntimeFault;

    fn define(&mut self, name: &str, content: &ArgValue) -> Result<Result<String, String>, RuntimeFault> {
        let at = self.rt.clock.now_ms();
        let value = match content {
            ArgValue::Ref(r) => match self.rt.n(self.node).variables.get(r) {
                Some(v) => v.content.clone(),
                None => return Ok(Err(unknown_variable(&self.rt.n(self.node).variables, r))),
            },
            other => match self.text(other) {
                Ok(t) => Content::text(t),
                Err(e) => return Ok(Err(e)),
            },
        };
        let value = self.rt.store.intern(value);
        let vars = &mut self.rt.n_mut(self.node).variables;
        Ok(match vars.define(name, value, Origin::Direct, at) {
            Ok(v) => {
                let size = match v.content.as_text() {
                    Some(t) => format!("{} chars", t.chars().count()),
                    None => format!("{} bytes", v.content.len()),
                };
                if v.version > 1 {
                    Ok(format!("variable '{name}' stored ({size}), version {}", v.version))
                } else {
                    Ok(format!("variable '{name}' stored ({size})"))
                }
            }
            Err(e) => Err(e.to_string()),
        })
    }

    fn compress(&mut self, summary: &ArgValue) -> Result<Result<String, String>, RuntimeFault> {
        let text = match self.text(summary) {
            Ok(t) => t,
            Err(e) => return Ok(Err(e)),
        };
        if text.trim().is_empty() {
            return Ok(Err("summary required".into()));
        }
        self.compress = Some(text);
        Ok(Ok(format!(
            "history compressed to your summary; {} variables kept",
            self.rt.n(self.node).variables.len()
        )))
    }

    fn load_module(&mut self, address: &ArgValue) -> Result<Result<String, String>, RuntimeFault> {
        let addr = match self.text(address) {
            Ok(a) => a,
            Err(e) => return Ok(Err(e)),
        };
        Ok(self.rt.load_module(addr.trim()))
    }

    fn register_module(
        &mut self,
        manifest: &ArgValue,
        program: &ArgValue,
    ) -> Result<Result<String, String>, RuntimeFault> {
        let (manifest, program) = match (self.text(manifest), self.text(program)) {
            (Ok(m), Ok(p)) => (m, p),
            (Err(e), _) | (_, Err(e)) => return Ok(Err(e)),
        };
        let docs = match parse_manifest(&manifest) {
            Ok(d) => d,
            Err(e) => return Ok(Err(e)),
        };
        let env = self.rt.config.module_env.clone();
        let req = SynthRequest {
            program: &program,
            manifest: &docs,
            env: &env,
            handshake_timeout: self.rt.config.handshake_timeout,
        };
        Ok(
            match synth::register_synthesized_module(&mut self.rt.modules, req, &builtin_patterns()) {
                Ok(desc) => Ok(describe_module(&desc)),
                Err(e) => Err(self.rt.redact(e.to_string())),
            },
        )
    }

    fn call_agent(
        &mut self,
        agent_type: &ArgValue,
        name: &ArgValue,
        message: &ArgValue,
    ) -> Result<Result<String, String>, RuntimeFault> {
        let (t, n) = match (self.text(agent_type), self.text(name)) {
            (Ok(t), Ok(n)) => (t, n),
            (Err(e), _) | (_, Err(e)) => return Ok(Err(e)),
        };
        self.rt.call(self.node, t.trim(), n.trim(), message)
    }

    fn tool_call(&mut self, action: &ParsedAction) -> Result<Result<String, String>, RuntimeFault> {
        self.rt.tool_call(self.node, action)
    }
}
