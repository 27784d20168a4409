//! Plain-text renderings of node histories, used by `inspect` and golden files.

use super::reconstruct::{NodeTranscript, Reconstructed, TreeShape};
use crate::types::{AgentNode, Message};

fn render_message(out: &mut String, index: usize, m: &Message) {
    let flag = if m.intervention { " (intervention)" } else { "" };
    out.push_str(&format!("--- [{index}] {} from {}{flag}\n", m.role.as_str(), m.sender));
    out.push_str(&m.body);
    if !m.body.ends_with('\n') {
        out.push('\n');
    }
    for a in &m.attachments {
        out.push_str(&format!(
            "    attached: {} ({} bytes, {}, sha256 {})\n",
            a.name,
            a.content.len(),
            a.content.media_type(),
            a.content.digest()
        ));
    }
}

fn render_history(out: &mut String, header: &str, history: &[Message], pointer: usize) {
    out.push_str(&format!("== {header} ==\n"));
    for (i, m) in history.iter().enumerate() {
        if i == pointer && pointer > 0 {
            out.push_str("--- (window starts here)\n");
        }
        render_message(out, i, m);
    }
    out.push('\n');
}

/// Every node's full history, in node-id order.
pub fn render_registry(nodes: &[AgentNode]) -> String {
    let mut out = String::new();
    let mut sorted: Vec<&AgentNode> = nodes.iter().collect();
    sorted.sort_by_key(|n| n.id);
    for n in sorted {
        render_history(
            &mut out,
            &format!("{} ({})", n.label(), n.spec.type_name),
            &n.history,
            n.compression_pointer,
        );
    }
    out
}

/// The same rendering, from a log replay.
pub fn render_reconstructed(r: &Reconstructed) -> String {
    let mut out = String::new();
    for shape in &r.shape.nodes {
        let empty = NodeTranscript {
            history: Vec::new(),
            compression_pointer: 0,
        };
        let t = r.transcripts.get(&shape.id).unwrap_or(&empty);
        render_history(
            &mut out,
            &format!("{}#{} ({})", shape.name, shape.id, shape.agent_type),
            &t.history,
            t.compression_pointer,
        );
    }
    out
}

/// Outline plus transcripts plus a warning when the log was cut.
pub fn inspect_report(r: &Reconstructed) -> String {
    let mut out = String::new();
    if let Some(cut) = &r.cut {
        out.push_str(&format!(
            "warning: log damaged at line {}: {}; showing the {} events before it\n\n",
            cut.line + 1,
            cut.reason,
            r.events.len()
        ));
    }
    out.push_str("# Tree\n");
    let outline = TreeShape::outline(&r.shape);
    out.push_str(if outline.is_empty() { "(empty)\n" } else { &outline });
    out.push_str("\n# Transcripts\n");
    out.push_str(&render_reconstructed(r));
    out
}
