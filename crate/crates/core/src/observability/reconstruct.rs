//! Rebuilds the call tree and per-node transcripts from an event log.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::event::{EventBody, EventRecord};
use crate::types::{AgentNode, Message, NodeId};

/// Structure of one node, comparable between the live registry and a log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeShape {
    pub id: NodeId,
    pub name: String,
    pub agent_type: String,
    pub parent: Option<NodeId>,
    pub children: BTreeMap<String, NodeId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TreeShape {
    pub root: Option<NodeId>,
    pub nodes: Vec<NodeShape>,
}

impl TreeShape {
    pub fn from_registry(registry: &[AgentNode]) -> TreeShape {
        let mut nodes: Vec<NodeShape> = registry
            .iter()
            .map(|n| NodeShape {
                id: n.id,
                name: n.name.clone(),
                agent_type: n.spec.type_name.clone(),
                parent: n.parent,
                children: n.children.clone(),
            })
            .collect();
        nodes.sort_by_key(|n| n.id);
        TreeShape {
            root: registry.iter().find(|n| n.parent.is_none()).map(|n| n.id),
            nodes,
        }
    }

    /// Indented outline, one node per line.
    pub fn outline(&self) -> String {
        let by_id: BTreeMap<NodeId, &NodeShape> = self.nodes.iter().map(|n| (n.id, n)).collect();
        let mut out = String::new();
        fn walk(out: &mut String, by_id: &BTreeMap<NodeId, &NodeShape>, id: NodeId, depth: usize) {
            let Some(n) = by_id.get(&id) else { return };
            out.push_str(&format!(
                "{}{}#{} ({})\n",
                "  ".repeat(depth),
                n.name,
                n.id,
                n.agent_type
            ));
            for child in n.children.values() {
                walk(out, by_id, *child, depth + 1);
            }
        }
        if let Some(r) = self.root {
            walk(&mut out, &by_id, r, 0);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeTranscript {
    pub history: Vec<Message>,
    pub compression_pointer: usize,
}

/// Where reading stopped on a damaged log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cut {
    /// Zero-based line index of the first rejected line.
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Reconstructed {
    pub shape: TreeShape,
    pub transcripts: BTreeMap<NodeId, NodeTranscript>,
    pub events: Vec<EventRecord>,
    pub cut: Option<Cut>,
}

/// Replays `events` (assumed valid) into a tree.
pub fn reconstruct_tree(events: &[EventRecord]) -> Reconstructed {
    let mut nodes: BTreeMap<NodeId, NodeShape> = BTreeMap::new();
    let mut transcripts: BTreeMap<NodeId, NodeTranscript> = BTreeMap::new();
    let mut root = None;
    for e in events {
        match &e.body {
            EventBody::NodeCreated { name, agent_type } => {
                nodes.insert(
                    e.node,
                    NodeShape {
                        id: e.node,
                        name: name.clone(),
                        agent_type: agent_type.clone(),
                        parent: e.parent,
                        children: BTreeMap::new(),
                    },
                );
                match e.parent {
                    None => root = Some(e.node),
                    Some(p) => {
                        if let Some(parent) = nodes.get_mut(&p) {
                            parent.children.insert(name.clone(), e.node);
                        }
                    }
                }
                transcripts.insert(
                    e.node,
                    NodeTranscript {
                        history: Vec::new(),
                        compression_pointer: 0,
                    },
                );
            }
            EventBody::LlmTurn { inputs, output, .. } => {
                if let Some(t) = transcripts.get_mut(&e.node) {
                    t.history.extend(inputs.iter().cloned());
                    t.history.push(output.clone());
                }
            }
            EventBody::Compression { note, pointer, .. } => {
                if let Some(t) = transcripts.get_mut(&e.node) {
                    t.history.push(note.clone());
                    t.compression_pointer = *pointer;
                }
            }
            _ => {}
        }
    }
    Reconstructed {
        shape: TreeShape {
            root,
            nodes: nodes.into_values().collect(),
        },
        transcripts,
        events: events.to_vec(),
        cut: None,
    }
}

/// Parses JSON lines and replays the longest valid prefix. A line that does
/// not parse, or whose seq breaks the 0, 1, 2, ... sequence, ends the prefix.
pub fn reconstruct_from_lines(text: &str) -> Reconstructed {
    let mut events = Vec::new();
    let mut cut = None;
    for (i, line) in text.split_inclusive('\n').enumerate() {
        let complete = line.ends_with('\n');
        let body = line.trim_end_matches('\n');
        if body.trim().is_empty() && complete {
            continue;
        }
        match serde_json::from_str::<EventRecord>(body) {
            Ok(e) if e.seq == events.len() as u64 && complete => events.push(e),
            Ok(e) if !complete => {
                let _ = e;
                cut = Some(Cut {
                    line: i,
                    reason: "last line is not newline-terminated".into(),
                });
                break;
            }
            Ok(e) => {
                cut = Some(Cut {
                    line: i,
                    reason: format!("expected seq {}, found {}", events.len(), e.seq),
                });
                break;
            }
            Err(err) => {
                cut = Some(Cut {
                    line: i,
                    reason: format!("unreadable record: {err}"),
                });
                break;
            }
        }
    }
    let mut r = reconstruct_tree(&events);
    r.cut = cut;
    r
}
