//! Shared data model: messages, agent specs, tree nodes and context snapshots.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::clock::Millis;
use crate::variables::{Payload, VariableStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u64);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MessageId(pub u64);

/// The parties of a conversation as seen from inside one agent.
///
/// `ToolFeedback` and `SystemNote` records stay inside the owning agent's
/// history and are never forwarded to its caller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    System,
    Caller,
    Assistant,
    ToolFeedback,
    SystemNote,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::Caller => "caller",
            Role::Assistant => "assistant",
            Role::ToolFeedback => "tool-feedback",
            Role::SystemNote => "system-note",
        }
    }

    pub fn parse(s: &str) -> Option<Role> {
        Some(match s {
            "system" => Role::System,
            "caller" => Role::Caller,
            "assistant" => Role::Assistant,
            "tool-feedback" => Role::ToolFeedback,
            "system-note" => Role::SystemNote,
            _ => return None,
        })
    }

    /// Private records are visible only to the agent that owns them.
    pub fn is_private(self) -> bool {
        matches!(self, Role::ToolFeedback | Role::SystemNote)
    }
}

/// One unit of the rich-text protocol.
///
/// `created_at` is informational and ignored by `PartialEq`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Message {
    pub id: MessageId,
    pub role: Role,
    pub sender: String,
    pub body: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attachments: Vec<Payload>,
    pub created_at: Millis,
    /// Set on caller messages that came from a runtime intervention.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub intervention: bool,
}

impl PartialEq for Message {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
            && self.role == other.role
            && self.sender == other.sender
            && self.body == other.body
            && self.attachments == other.attachments
            && self.intervention == other.intervention
    }
}

impl Eq for Message {}

impl Message {
    pub fn new(id: MessageId, role: Role, sender: impl Into<String>, body: impl Into<String>, at: Millis) -> Self {
        Message {
            id,
            role,
            sender: sender.into(),
            body: body.into(),
            attachments: Vec::new(),
            created_at: at,
            intervention: false,
        }
    }
}

/// How a recipient perceives embedded media.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RecipientCapability {
    HumanUi,
    MultimodalModel,
    #[default]
    TextOnlyModel,
}

pub const DEFAULT_CONTEXT_BUDGET: usize = 32_000;
pub const DEFAULT_COMPRESSION_THRESHOLD: f64 = 0.8;
pub const DEFAULT_ITERATION_CAP: usize = 16;

/// Static definition of an agent type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    #[serde(rename = "type")]
    pub type_name: String,
    pub system_prompt: String,
    /// Names of builtin patterns this agent recognizes. CALL is always added.
    #[serde(default = "default_static_patterns")]
    pub static_patterns: Vec<String>,
    #[serde(default = "default_budget")]
    pub context_budget: usize,
    #[serde(default = "default_threshold")]
    pub compression_threshold: f64,
    #[serde(default = "default_cap")]
    pub iteration_cap: usize,
    #[serde(default)]
    pub capability: RecipientCapability,
}

fn default_static_patterns() -> Vec<String> {
    crate::interpreter::builtin::BUILTIN_NAMES
        .iter()
        .map(|s| s.to_string())
        .collect()
}
fn default_budget() -> usize {
    DEFAULT_CONTEXT_BUDGET
}
fn default_threshold() -> f64 {
    DEFAULT_COMPRESSION_THRESHOLD
}
fn default_cap() -> usize {
    DEFAULT_ITERATION_CAP
}

impl AgentSpec {
    pub fn new(type_name: impl Into<String>, system_prompt: impl Into<String>) -> Self {
        AgentSpec {
            type_name: type_name.into(),
            system_prompt: system_prompt.into(),
            static_patterns: default_static_patterns(),
            context_budget: DEFAULT_CONTEXT_BUDGET,
            compression_threshold: DEFAULT_COMPRESSION_THRESHOLD,
            iteration_cap: DEFAULT_ITERATION_CAP,
            capability: RecipientCapability::TextOnlyModel,
        }
    }

    pub fn with_budget(mut self, tokens: usize, threshold: f64) -> Self {
        self.context_budget = tokens;
        self.compression_threshold = threshold;
        self
    }

    pub fn with_iteration_cap(mut self, cap: usize) -> Self {
        self.iteration_cap = cap;
        self
    }

    pub fn with_capability(mut self, cap: RecipientCapability) -> Self {
        self.capability = cap;
        self
    }

    /// Checks the field ranges an agents file may get wrong.
    pub fn check(&self) -> Result<(), String> {
        if !crate::variables::is_identifier(&self.type_name) {
            return Err(format!("agent type '{}' is not an identifier", self.type_name));
        }
        if self.context_budget == 0 {
            return Err(format!(
                "agent type '{}': context budget must be positive",
                self.type_name
            ));
        }
        if !(self.compression_threshold > 0.0 && self.compression_threshold <= 1.0) {
            return Err(format!(
                "agent type '{}': compression threshold must lie in (0, 1]",
                self.type_name
            ));
        }
        if self.iteration_cap == 0 {
            return Err(format!(
                "agent type '{}': iteration cap must be positive",
                self.type_name
            ));
        }
        Ok(())
    }

    /// The effective static pattern names: the configured set plus CALL.
    pub fn pattern_names(&self) -> Vec<String> {
        let mut names = self.static_patterns.clone();
        if !names.iter().any(|n| n == "CALL") {
            names.push("CALL".to_string());
        }
        names
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeStatus {
    Idle,
    Running,
    WaitingForChild,
    WaitingForCaller,
}

/// One vertex of the call tree.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentNode {
    pub id: NodeId,
    pub name: String,
    pub spec: AgentSpec,
    pub parent: Option<NodeId>,
    pub children: BTreeMap<String, NodeId>,
    pub depth: usize,
    pub history: Vec<Message>,
    pub compression_pointer: usize,
    pub variables: VariableStore,
    pub status: NodeStatus,
    /// Backend invocations made by this node so far.
    pub steps: u64,
}

impl AgentNode {
    pub fn new(id: NodeId, name: impl Into<String>, spec: AgentSpec, parent: Option<NodeId>, depth: usize) -> Self {
        AgentNode {
            id,
            name: name.into(),
            spec,
            parent,
            children: BTreeMap::new(),
            depth,
            history: Vec::new(),
            compression_pointer: 0,
            variables: VariableStore::new(id),
            status: NodeStatus::Idle,
            steps: 0,
        }
    }

    pub fn window(&self) -> &[Message] {
        &self.history[self.compression_pointer.min(self.history.len())..]
    }

    pub fn label(&self) -> String {
        format!("{}#{}", self.name, self.id)
    }
}

/// The per-turn context: static prefix first, volatile content last.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextSnapshot {
    pub system_prompt: String,
    pub history_window: Vec<Message>,
    pub turn_input: Vec<Message>,
    pub dynamic_notes: crate::runtime::notes::DynamicNotes,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TreeViolation {
    NoRoot,
    MultipleRoots(Vec<NodeId>),
    RootMismatch {
        expected: NodeId,
        found: Vec<NodeId>,
    },
    MissingParent {
        node: NodeId,
        parent: NodeId,
    },
    ChildLinkMismatch {
        parent: NodeId,
        child_name: String,
        child: NodeId,
    },
    MissingChild {
        parent: NodeId,
        child: NodeId,
    },
    Cycle(Vec<NodeId>),
    PointerOutOfRange {
        node: NodeId,
        pointer: usize,
        len: usize,
    },
    MultipleRunning(Vec<NodeId>),
}

impl fmt::Display for TreeViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TreeViolation::NoRoot => write!(f, "no root node"),
            TreeViolation::MultipleRoots(ids) => write!(f, "multiple roots: {ids:?}"),
            TreeViolation::RootMismatch { expected, found } => {
                write!(f, "root {expected} is not the parentless node (found {found:?})")
            }
            TreeViolation::MissingParent { node, parent } => {
                write!(f, "node {node} names unknown parent {parent}")
            }
            TreeViolation::ChildLinkMismatch {
                parent,
                child_name,
                child,
            } => write!(
                f,
                "node {parent} lists child '{child_name}' -> {child}, which does not point back"
            ),
            TreeViolation::MissingChild { parent, child } => {
                write!(f, "node {child} claims parent {parent}, which does not list it")
            }
            TreeViolation::Cycle(ids) => write!(f, "cycle through {ids:?}"),
            TreeViolation::PointerOutOfRange { node, pointer, len } => {
                write!(
                    f,
                    "node {node}: compression pointer {pointer} beyond history length {len}"
                )
            }
            TreeViolation::MultipleRunning(ids) => write!(f, "more than one running node: {ids:?}"),
        }
    }
}

/// Checks the tree invariants over a complete node registry.
pub fn validate_tree(root: NodeId, registry: &[AgentNode]) -> Result<(), Vec<TreeViolation>> {
    let mut violations = Vec::new();
    let by_id: HashMap<NodeId, &AgentNode> = registry.iter().map(|n| (n.id, n)).collect();

    let roots: Vec<NodeId> = registry.iter().filter(|n| n.parent.is_none()).map(|n| n.id).collect();
    match roots.as_slice() {
        [] => violations.push(TreeViolation::NoRoot),
        [only] if *only == root => {}
        [_] => violations.push(TreeViolation::RootMismatch {
            expected: root,
            found: roots.clone(),
        }),
        _ => violations.push(TreeViolation::MultipleRoots(roots.clone())),
    }

    for node in registry {
        if let Some(p) = node.parent {
            match by_id.get(&p) {
                None => violations.push(TreeViolation::MissingParent {
                    node: node.id,
                    parent: p,
                }),
                Some(parent) => {
                    if !parent.children.values().any(|c| *c == node.id) {
                        violations.push(TreeViolation::MissingChild {
                            parent: p,
                            child: node.id,
                        });
                    }
                }
            }
        }
        for (name, child) in &node.children {
            let back = by_id.get(child).and_then(|c| c.parent);
            if back != Some(node.id) {
                violations.push(TreeViolation::ChildLinkMismatch {
                    parent: node.id,
                    child_name: name.clone(),
                    child: *child,
                });
            }
        }
        if node.compression_pointer > node.history.len() {
            violations.push(TreeViolation::PointerOutOfRange {
                node: node.id,
                pointer: node.compression_pointer,
                len: node.history.len(),
            });
        }
    }

    // Walk parent links from every node; revisiting a node on the same walk is a cycle.
    let mut reported: HashSet<NodeId> = HashSet::new();
    for node in registry {
        let mut seen = Vec::new();
        let mut cur = Some(node.id);
        while let Some(id) = cur {
            if let Some(pos) = seen.iter().position(|s| *s == id) {
                let mut cycle: Vec<NodeId> = seen[pos..].to_vec();
                cycle.sort();
                if cycle.iter().all(|c| reported.insert(*c)) {
                    violations.push(TreeViolation::Cycle(cycle));
                }
                break;
            }
            seen.push(id);
            cur = by_id.get(&id).and_then(|n| n.parent);
        }
    }

    let running: Vec<NodeId> = registry
        .iter()
        .filter(|n| n.status == NodeStatus::Running)
        .map(|n| n.id)
        .collect();
    if running.len() > 1 {
        violations.push(TreeViolation::MultipleRunning(running));
    }

    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}
