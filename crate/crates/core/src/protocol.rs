//! Extended-markdown message protocol.
//!
//! The dialect is deliberately small: CommonMark fenced code blocks, the
//! polymorphic embed tag `![description](resource-id)`, and the directive
//! grammar handled by [`crate::interpreter`]. Everything else is prose and
//! passes through untouched.

use std::path::Path;

use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::types::{Message, MessageId, RecipientCapability, Role};
use crate::variables::{Content, Origin, Payload, VariableStore};

/// A fenced code block located in a body of text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FencedBlock {
    /// Byte offset of the opening fence (start of its line for CommonMark blocks).
    pub start: usize,
    /// Byte offset just past the closing fence line, or the end of text when unclosed.
    pub end: usize,
    pub info: String,
    pub content: String,
    pub closed: bool,
}

struct Opener<'a> {
    indent: usize,
    ch: u8,
    len: usize,
    info: &'a str,
}

fn line_end(text: &str, from: usize) -> usize {
    text[from..].find('\n').map_or(text.len(), |i| from + i)
}

fn next_line(text: &str, from: usize) -> usize {
    let e = line_end(text, from);
    if e < text.len() {
        e + 1
    } else {
        e
    }
}

/// Recognizes a fence run at the start of `s` (no indentation handling).
fn fence_run(s: &str) -> Option<(u8, usize, &str)> {
    let b = s.as_bytes();
    let ch = *b.first()?;
    if ch != b'`' && ch != b'~' {
        return None;
    }
    let len = b.iter().take_while(|c| **c == ch).count();
    if len < 3 {
        return None;
    }
    let info = &s[len..];
    if ch == b'`' && info.contains('`') {
        return None;
    }
    Some((ch, len, info))
}

fn opener(line: &str) -> Option<Opener<'_>> {
    let indent = line.bytes().take_while(|c| *c == b' ').count();
    if indent > 3 {
        return None;
    }
    let (ch, len, info) = fence_run(&line[indent..])?;
    Some(Opener { indent, ch, len, info })
}

fn is_closer(line: &str, ch: u8, min_len: usize) -> bool {
    let indent = line.bytes().take_while(|c| *c == b' ').count();
    if indent > 3 {
        return false;
    }
    let rest = &line[indent..];
    let run = rest.bytes().take_while(|c| *c == ch).count();
    run >= min_len && rest[run..].bytes().all(|c| c == b' ' || c == b'\t')
}

fn strip_indent(line: &str, n: usize) -> &str {
    let k = line.bytes().take(n).take_while(|c| *c == b' ').count();
    &line[k..]
}

fn finish_block(text: &str, start: usize, body_from: usize, op: &Opener<'_>) -> FencedBlock {
    let mut lines = Vec::new();
    let mut pos = body_from;
    let mut closed = false;
    let mut end = text.len();
    while pos < text.len() {
        let le = line_end(text, pos);
        let line = &text[pos..le];
        if is_closer(line, op.ch, op.len) {
            closed = true;
            end = next_line(text, pos);
            break;
        }
        lines.push(strip_indent(line, op.indent));
        pos = next_line(text, pos);
    }
    FencedBlock {
        start,
        end,
        info: op.info.trim().to_string(),
        content: lines.join("\n"),
        closed,
    }
}

/// Parses a CommonMark fenced block whose opening line starts at `line_start`.
pub fn block_at(text: &str, line_start: usize) -> Option<FencedBlock> {
    let le = line_end(text, line_start);
    let op = opener(&text[line_start..le])?;
    Some(finish_block(text, line_start, next_line(text, line_start), &op))
}

/// Parses a fence whose backtick or tilde run begins exactly at `pos`,
/// which may be in the middle of a line (a directive's trailing body).
pub fn block_inline(text: &str, pos: usize) -> Option<FencedBlock> {
    let le = line_end(text, pos);
    let (ch, len, info) = fence_run(&text[pos..le])?;
    let op = Opener {
        indent: 0,
        ch,
        len,
        info,
    };
    Some(finish_block(text, pos, next_line(text, pos), &op))
}

/// All fenced code blocks of `text`, in document order.
pub fn fenced_blocks(text: &str) -> Vec<FencedBlock> {
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < text.len() {
        if let Some(b) = block_at(text, pos) {
            pos = b.end.max(next_line(text, pos));
            out.push(b);
        } else {
            pos = next_line(text, pos);
        }
    }
    out
}

/// Byte ranges of `text` that lie outside fenced blocks.
pub fn prose_ranges(text: &str) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut cur = 0;
    for b in fenced_blocks(text) {
        if b.start > cur {
            out.push((cur, b.start));
        }
        cur = b.end;
    }
    if cur < text.len() {
        out.push((cur, text.len()));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedTag {
    pub description: String,
    pub resource_id: String,
    pub span: (usize, usize),
}

impl EmbedTag {
    pub fn serialize(&self) -> String {
        format!("![{}]({})", self.description, self.resource_id)
    }
}

fn parse_tag_at(text: &str, at: usize) -> Option<EmbedTag> {
    let rest = &text[at..];
    let after_bang = rest.strip_prefix("![")?;
    let close = after_bang.find(']')?;
    let desc = &after_bang[..close];
    if desc.contains('\n') || desc.contains('[') {
        return None;
    }
    let after = after_bang[close + 1..].strip_prefix('(')?;
    let end = after.find(')')?;
    let id = &after[..end];
    if id.is_empty() || id.chars().any(|c| c.is_whitespace() || c == '(') {
        return None;
    }
    let total = 2 + close + 1 + 1 + end + 1;
    Some(EmbedTag {
        description: desc.to_string(),
        resource_id: id.to_string(),
        span: (at, at + total),
    })
}

/// Well-formed embed tags outside fenced code, in order.
pub fn parse_embeds(text: &str) -> Vec<EmbedTag> {
    let mut out = Vec::new();
    for (from, to) in prose_ranges(text) {
        let region = &text[..to];
        let mut i = from;
        while let Some(off) = region[i..].find("![") {
            let at = i + off;
            match parse_tag_at(region, at) {
                Some(tag) => {
                    i = tag.span.1;
                    out.push(tag);
                }
                None => i = at + 2,
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResourceKind {
    Variable,
    Url,
    Path,
}

fn has_scheme(id: &str) -> bool {
    match id.find("://") {
        Some(i) if i > 0 => {
            let scheme = &id[..i];
            scheme.chars().next().is_some_and(|c| c.is_ascii_alphabetic())
                && scheme
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || matches!(c, '+' | '.' | '-'))
        }
        _ => false,
    }
}

/// Sender namespace first, then `scheme://`, otherwise a workspace path.
pub fn classify(resource_id: &str, is_variable: impl Fn(&str) -> bool) -> ResourceKind {
    if is_variable(resource_id) {
        ResourceKind::Variable
    } else if has_scheme(resource_id) {
        ResourceKind::Url
    } else {
        ResourceKind::Path
    }
}

pub fn media_type_for_path(path: &str) -> &'static str {
    let ext = Path::new(path)
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "png" => "image/png",
        "jpg" | "jpeg" => "image/jpeg",
        "gif" => "image/gif",
        "webp" => "image/webp",
        "svg" => "image/svg+xml",
        "wav" => "audio/wav",
        "mp3" => "audio/mpeg",
        "ogg" => "audio/ogg",
        "mp4" => "video/mp4",
        "webm" => "video/webm",
        "pdf" => "application/pdf",
        "json" => "application/json",
        "md" | "markdown" => "text/markdown",
        "txt" | "log" | "rs" | "py" | "sh" | "toml" | "yaml" | "yml" | "csv" => "text/plain",
        "html" | "htm" => "text/html",
        _ => "application/octet-stream",
    }
}

/// How an embed reaches a particular recipient.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ResolvedEmbed {
    RenderDirective {
        media_type: String,
        handle: String,
        kind: ResourceKind,
        broken: bool,
    },
    MediaPayload {
        content: Content,
    },
    SymbolicReference {
        resource_id: String,
        description: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Resolution {
    pub embed: ResolvedEmbed,
    /// System note for the recipient when something could not be resolved.
    pub note: Option<String>,
}

/// Where embed targets can be looked up.
#[derive(Default, Clone, Copy)]
pub struct EmbedSources<'a> {
    pub variables: Option<&'a VariableStore>,
    pub workspace: Option<&'a Path>,
}

impl EmbedSources<'_> {
    fn is_variable(&self, id: &str) -> bool {
        self.variables.is_some_and(|v| v.contains(id))
    }

    fn load(&self, id: &str, kind: ResourceKind) -> Option<Content> {
        match kind {
            ResourceKind::Variable => self.variables?.get(id).map(|v| v.content.clone()),
            ResourceKind::Path => {
                let root = self.workspace?;
                let rel = Path::new(id);
                if rel.is_absolute() || rel.components().any(|c| matches!(c, std::path::Component::ParentDir)) {
                    return None;
                }
                let bytes = std::fs::read(root.join(rel)).ok()?;
                Some(Content::new(bytes, media_type_for_path(id)))
            }
            ResourceKind::Url => None,
        }
    }

    fn exists(&self, id: &str, kind: ResourceKind) -> bool {
        match kind {
            ResourceKind::Variable => self.is_variable(id),
            ResourceKind::Path => self
                .workspace
                .is_some_and(|w| !Path::new(id).is_absolute() && w.join(id).exists()),
            ResourceKind::Url => true,
        }
    }
}

/// Resolves one tag for a recipient. Total: every input yields a variant.
pub fn resolve_for_recipient(tag: &EmbedTag, cap: RecipientCapability, sources: EmbedSources<'_>) -> Resolution {
    let kind = classify(&tag.resource_id, |id| sources.is_variable(id));
    match cap {
        RecipientCapability::HumanUi => {
            let media_type = match kind {
                ResourceKind::Variable => sources
                    .variables
                    .and_then(|v| v.get(&tag.resource_id))
                    .map(|v| v.content.media_type().to_string())
                    .unwrap_or_else(|| "application/octet-stream".to_string()),
                _ => media_type_for_path(&tag.resource_id).to_string(),
            };
            let prefix = match kind {
                ResourceKind::Variable => "var",
                ResourceKind::Url => "url",
                ResourceKind::Path => "path",
            };
            Resolution {
                embed: ResolvedEmbed::RenderDirective {
                    media_type,
                    handle: format!("{prefix}:{}", tag.resource_id),
                    kind,
                    broken: !sources.exists(&tag.resource_id, kind),
                },
                note: None,
            }
        }
        RecipientCapability::MultimodalModel => match sources.load(&tag.resource_id, kind) {
            Some(content) => Resolution {
                embed: ResolvedEmbed::MediaPayload { content },
                note: None,
            },
            None => Resolution {
                embed: ResolvedEmbed::SymbolicReference {
                    resource_id: tag.resource_id.clone(),
                    description: tag.description.clone(),
                },
                note: Some(format!("unresolved media: {}", tag.serialize())),
            },
        },
        RecipientCapability::TextOnlyModel => Resolution {
            embed: ResolvedEmbed::SymbolicReference {
                resource_id: tag.resource_id.clone(),
                description: tag.description.clone(),
            },
            note: None,
        },
    }
}

/// Terminal rendering of a body for a human: embeds become text placeholders.
pub fn render_for_terminal(body: &str, sources: EmbedSources<'_>) -> String {
    let mut out = String::with_capacity(body.len());
    let mut cur = 0;
    for tag in parse_embeds(body) {
        out.push_str(&body[cur..tag.span.0]);
        match resolve_for_recipient(&tag, RecipientCapability::HumanUi, sources).embed {
            ResolvedEmbed::RenderDirective {
                media_type,
                handle,
                broken,
                ..
            } => {
                let size = sources
                    .variables
                    .and_then(|v| v.get(&tag.resource_id))
                    .map(|v| format!(", {} bytes", v.content.len()))
                    .unwrap_or_default();
                let mark = if broken { " [missing]" } else { "" };
                out.push_str(&format!("[{media_type}: {} <{handle}{size}>{mark}]", tag.description));
            }
            _ => out.push_str(&tag.serialize()),
        }
        cur = tag.span.1;
    }
    out.push_str(&body[cur..]);
    out
}

const ENVELOPE: &str = "---iact-message v1\n";
const ATTACHMENT: &str = "---iact-attachment\n";
const END: &str = "---iact-end\n";

fn quote(s: &str) -> String {
    serde_json::to_string(s).expect("string serialization is infallible")
}

/// Serializes a message into the text envelope. Lengths, not escaping,
/// delimit the body, so any body text round-trips byte-exactly.
pub fn serialize(m: &Message) -> String {
    let mut out = String::new();
    out.push_str(ENVELOPE);
    out.push_str(&format!("id: {}\n", m.id.0));
    out.push_str(&format!("role: {}\n", m.role.as_str()));
    out.push_str(&format!("sender: {}\n", quote(&m.sender)));
    out.push_str(&format!("created-at: {}\n", m.created_at));
    if m.intervention {
        out.push_str("intervention: true\n");
    }
    out.push_str(&format!("attachments: {}\n", m.attachments.len()));
    out.push_str(&format!("body-bytes: {}\n", m.body.len()));
    out.push_str("---\n");
    out.push_str(&m.body);
    out.push('\n');
    for a in &m.attachments {
        out.push_str(ATTACHMENT);
        out.push_str(&format!("name: {}\n", quote(&a.name)));
        out.push_str(&format!("origin: {}\n", origin_str(a.origin)));
        out.push_str(&format!("media-type: {}\n", quote(a.content.media_type())));
        out.push_str(&format!(
            "data: {}\n",
            base64::engine::general_purpose::STANDARD.encode(a.content.bytes())
        ));
    }
    out.push_str(END);
    out
}

fn origin_str(o: Origin) -> &'static str {
    match o {
        Origin::Direct => "direct",
        Origin::MarkdownCapture => "markdown-capture",
        Origin::ToolReturn => "tool-return",
        Origin::AgentReturn => "agent-return",
    }
}

fn parse_origin(s: &str) -> Option<Origin> {
    Some(match s {
        "direct" => Origin::Direct,
        "markdown-capture" => Origin::MarkdownCapture,
        "tool-return" => Origin::ToolReturn,
        "agent-return" => Origin::AgentReturn,
        _ => return None,
    })
}

struct Cursor<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn expect(&mut self, lit: &str) -> Option<()> {
        if self.text[self.pos..].starts_with(lit) {
            self.pos += lit.len();
            Some(())
        } else {
            None
        }
    }

    fn field(&mut self, key: &str) -> Option<&'a str> {
        let rest = &self.text[self.pos..];
        let rest = rest.strip_prefix(key)?.strip_prefix(": ")?;
        let nl = rest.find('\n')?;
        self.pos += key.len() + 2 + nl + 1;
        Some(&rest[..nl])
    }

    fn optional_field(&mut self, key: &str) -> Option<&'a str> {
        let save = self.pos;
        let v = self.field(key);
        if v.is_none() {
            self.pos = save;
        }
        v
    }

    fn take(&mut self, n: usize) -> Option<&'a str> {
        let end = self.pos.checked_add(n)?;
        let s = self.text.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }
}

fn parse_envelope(text: &str) -> Option<Message> {
    let mut c = Cursor { text, pos: 0 };
    c.expect(ENVELOPE)?;
    let id: u64 = c.field("id")?.parse().ok()?;
    let role = Role::parse(c.field("role")?)?;
    let sender: String = serde_json::from_str(c.field("sender")?).ok()?;
    let created_at: i64 = c.field("created-at")?.parse().ok()?;
    let intervention = match c.optional_field("intervention") {
        Some("true") => true,
        Some(_) => return None,
        None => false,
    };
    let n_att: usize = c.field("attachments")?.parse().ok()?;
    let body_len: usize = c.field("body-bytes")?.parse().ok()?;
    c.expect("---\n")?;
    let body = c.take(body_len)?.to_string();
    c.expect("\n")?;
    let mut attachments = Vec::with_capacity(n_att.min(1024));
    for _ in 0..n_att {
        c.expect(ATTACHMENT)?;
        let name: String = serde_json::from_str(c.field("name")?).ok()?;
        let origin = parse_origin(c.field("origin")?)?;
        let media_type: String = serde_json::from_str(c.field("media-type")?).ok()?;
        let data = base64::engine::general_purpose::STANDARD
            .decode(c.field("data")?)
            .ok()?;
        attachments.push(Payload {
            name,
            content: Content::new(data, media_type),
            origin,
        });
    }
    c.expect(END)?;
    if c.pos != text.len() {
        return None;
    }
    Some(Message {
        id: MessageId(id),
        role,
        sender,
        body,
        attachments,
        created_at,
        intervention,
    })
}

/// Parses an envelope. Never fails: anything that is not a well-formed
/// envelope is taken as a prose message from an unnamed caller.
pub fn parse(text: &str) -> Message {
    parse_envelope(text).unwrap_or_else(|| Message::new(MessageId(0), Role::Caller, "", text, 0))
}
