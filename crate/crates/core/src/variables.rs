//! Symbolic variables: named content blobs passed by reference inside the
//! tree and by value across process boundaries.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::{Arc, RwLock};

use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::clock::Millis;
use crate::protocol;
use crate::types::{Message, NodeId};

pub const TEXT_MEDIA_TYPE: &str = "text/plain";
pub const DEFAULT_EXPORT_CAP: usize = 8 * 1024 * 1024;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VariableError {
    #[error("invalid variable name '{0}': names must match [A-Za-z_][A-Za-z0-9_]*")]
    InvalidName(String),
    #[error("unknown variable '{0}'")]
    Unknown(String),
    #[error(
        "variable '{name}' is {size} bytes, above the {cap}-byte transport cap; \
         write it to a file inside the module's own workspace and pass that path instead"
    )]
    Oversize { name: String, size: usize, cap: usize },
    #[error("bad wire payload for '{name}': {reason}")]
    BadPayload { name: String, reason: String },
}

pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Immutable bytes plus media type, addressed by SHA-256.
#[derive(Clone)]
pub struct Content {
    bytes: Arc<[u8]>,
    media_type: String,
    digest: String,
    size: usize,
}

impl Content {
    pub fn new(bytes: impl Into<Vec<u8>>, media_type: impl Into<String>) -> Self {
        let bytes: Vec<u8> = bytes.into();
        let digest = hex::encode(Sha256::digest(&bytes));
        let size = bytes.len();
        Content {
            bytes: bytes.into(),
            media_type: media_type.into(),
            digest,
            size,
        }
    }

    pub fn text(s: impl Into<String>) -> Self {
        Content::new(s.into().into_bytes(), TEXT_MEDIA_TYPE)
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn shared_bytes(&self) -> Arc<[u8]> {
        self.bytes.clone()
    }

    pub fn media_type(&self) -> &str {
        &self.media_type
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    pub fn is_text(&self) -> bool {
        self.media_type.starts_with("text/") && std::str::from_utf8(&self.bytes).is_ok()
    }

    pub fn as_text(&self) -> Option<&str> {
        if self.media_type.starts_with("text/") {
            std::str::from_utf8(&self.bytes).ok()
        } else {
            None
        }
    }

    /// Text content, or a lossy rendering for binary data.
    pub fn to_text_lossy(&self) -> String {
        String::from_utf8_lossy(&self.bytes).into_owned()
    }

    /// True when the bytes were not restored yet (see [`Content::hydrate`]).
    pub fn is_hydrated(&self) -> bool {
        self.bytes.len() == self.size
    }

    /// Restores bytes for a content record deserialized from a session file.
    pub fn hydrate(&mut self, bytes: Arc<[u8]>) -> Result<(), String> {
        let digest = hex::encode(Sha256::digest(&bytes));
        if digest != self.digest {
            return Err(format!("blob digest mismatch: expected {}, got {digest}", self.digest));
        }
        self.bytes = bytes;
        Ok(())
    }

    fn size_label(&self) -> String {
        if self.is_text() {
            format!("{} chars", self.to_text_lossy().chars().count())
        } else {
            format!("{} bytes, {}", self.size, self.media_type)
        }
    }
}

impl PartialEq for Content {
    fn eq(&self, other: &Self) -> bool {
        self.digest == other.digest && self.media_type == other.media_type
    }
}

impl Eq for Content {}

impl fmt::Debug for Content {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Content")
            .field("media_type", &self.media_type)
            .field("size", &self.size)
            .field("digest", &&self.digest[..12.min(self.digest.len())])
            .finish()
    }
}

#[derive(Serialize, Deserialize)]
struct ContentRef {
    media_type: String,
    digest: String,
    size: usize,
}

// Content serializes by reference; bytes live in a content-addressed blob directory.
impl Serialize for Content {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        ContentRef {
            media_type: self.media_type.clone(),
            digest: self.digest.clone(),
            size: self.size,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Content {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = ContentRef::deserialize(d)?;
        Ok(Content {
            bytes: Arc::from(Vec::new()),
            media_type: r.media_type,
            digest: r.digest,
            size: r.size,
        })
    }
}

/// Session-wide content-addressed store: identical bytes are kept once.
#[derive(Clone, Default)]
pub struct ContentStore {
    blobs: Arc<RwLock<HashMap<String, Arc<[u8]>>>>,
}

impl ContentStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns `content` sharing the stored allocation when the bytes are already known.
    pub fn intern(&self, content: Content) -> Content {
        let mut map = self.blobs.write().expect("content store poisoned");
        if let Some(existing) = map.get(&content.digest) {
            Content {
                bytes: existing.clone(),
                ..content
            }
        } else {
            map.insert(content.digest.clone(), content.bytes.clone());
            content
        }
    }

    pub fn get(&self, digest: &str) -> Option<Arc<[u8]>> {
        self.blobs.read().expect("content store poisoned").get(digest).cloned()
    }

    pub fn len(&self) -> usize {
        self.blobs.read().expect("content store poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn digests(&self) -> Vec<String> {
        let mut d: Vec<String> = self
            .blobs
            .read()
            .expect("content store poisoned")
            .keys()
            .cloned()
            .collect();
        d.sort();
        d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Origin {
    Direct,
    MarkdownCapture,
    ToolReturn,
    AgentReturn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub version: u32,
    pub content: Content,
    pub origin: Origin,
    pub owner: NodeId,
    pub created_at: Millis,
}

/// A variable travelling with a message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Payload {
    pub name: String,
    pub content: Content,
    pub origin: Origin,
}

impl From<&Variable> for Payload {
    fn from(v: &Variable) -> Self {
        Payload {
            name: v.name.clone(),
            content: v.content.clone(),
            origin: v.origin,
        }
    }
}

/// Per-node variable namespace. Redefinition appends a new version; older
/// versions stay for audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableStore {
    owner: NodeId,
    versions: BTreeMap<String, Vec<Variable>>,
    capture_seq: u64,
}

impl VariableStore {
    pub fn new(owner: NodeId) -> Self {
        VariableStore {
            owner,
            versions: BTreeMap::new(),
            capture_seq: 0,
        }
    }

    pub fn owner(&self) -> NodeId {
        self.owner
    }

    pub fn define(
        &mut self,
        name: &str,
        content: Content,
        origin: Origin,
        at: Millis,
    ) -> Result<&Variable, VariableError> {
        if !is_identifier(name) {
            return Err(VariableError::InvalidName(name.to_string()));
        }
        let entry = self.versions.entry(name.to_string()).or_default();
        let version = entry.len() as u32 + 1;
        entry.push(Variable {
            name: name.to_string(),
            version,
            content,
            origin,
            owner: self.owner,
            created_at: at,
        });
        Ok(entry.last().expect("just pushed"))
    }

    pub fn get(&self, name: &str) -> Option<&Variable> {
        self.versions.get(name).and_then(|v| v.last())
    }

    pub fn version_count(&self, name: &str) -> usize {
        self.versions.get(name).map_or(0, Vec::len)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.versions.contains_key(name)
    }

    /// Latest version of every variable, ordered by name.
    pub fn latest(&self) -> impl Iterator<Item = &Variable> {
        self.versions.values().filter_map(|v| v.last())
    }

    pub fn names(&self) -> Vec<String> {
        self.versions.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.versions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.versions.is_empty()
    }

    /// One line per variable: names and sizes, never contents.
    pub fn summary(&self) -> String {
        if self.versions.is_empty() {
            return "(none)".to_string();
        }
        self.latest()
            .map(|v| format!("{} ({})", v.name, v.content.size_label()))
            .collect::<Vec<_>>()
            .join(", ")
    }

    pub fn all_versions_mut(&mut self) -> impl Iterator<Item = &mut Variable> {
        self.versions.values_mut().flat_map(|v| v.iter_mut())
    }

    pub fn all_versions(&self) -> impl Iterator<Item = &Variable> {
        self.versions.values().flat_map(|v| v.iter())
    }

    fn next_capture_name(&mut self) -> String {
        self.capture_seq += 1;
        format!("auto_{}_{}", self.owner, self.capture_seq)
    }
}

/// Turns every fenced code block of `message` into a captured variable.
pub fn capture_markdown(message: &Message, store: &mut VariableStore, at: Millis) -> Vec<Variable> {
    let mut captured = Vec::new();
    for block in protocol::fenced_blocks(&message.body) {
        let name = store.next_capture_name();
        let var = store
            .define(&name, Content::text(block.content.clone()), Origin::MarkdownCapture, at)
            .expect("generated names are identifiers")
            .clone();
        captured.push(var);
    }
    captured
}

/// Identifier-shaped tokens of `body`, in order of first occurrence.
pub fn identifier_tokens(body: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let bytes = body.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_alphanumeric() || c == b'_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(&body[start..i]);
        } else {
            i += 1;
        }
    }
    out
}

/// Variables of `store` mentioned in `body` as standalone tokens or embed targets.
pub fn resolve_references(body: &str, store: &VariableStore) -> Vec<Payload> {
    let mut names: Vec<String> = Vec::new();
    for tok in identifier_tokens(body) {
        if store.contains(tok) && !names.iter().any(|n| n == tok) {
            names.push(tok.to_string());
        }
    }
    for tag in protocol::parse_embeds(body) {
        if store.contains(&tag.resource_id) && !names.contains(&tag.resource_id) {
            names.push(tag.resource_id.clone());
        }
    }
    names.iter().filter_map(|n| store.get(n)).map(Payload::from).collect()
}

/// Copies transported payloads into the recipient's namespace.
pub fn materialize(payloads: &[Payload], store: &mut VariableStore, at: Millis) {
    for p in payloads {
        // Skip when the recipient already holds the identical latest version.
        if store.get(&p.name).map(|v| &v.content) == Some(&p.content) {
            continue;
        }
        let _ = store.define(&p.name, p.content.clone(), p.origin, at);
    }
}

/// By-value transport form of a variable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireBlob {
    pub name: String,
    pub media_type: String,
    pub data: String,
}

pub fn export_by_value(name: &str, content: &Content, cap: usize) -> Result<WireBlob, VariableError> {
    if content.len() > cap {
        return Err(VariableError::Oversize {
            name: name.to_string(),
            size: content.len(),
            cap,
        });
    }
    Ok(WireBlob {
        name: name.to_string(),
        media_type: content.media_type().to_string(),
        data: base64::engine::general_purpose::STANDARD.encode(content.bytes()),
    })
}

pub fn import_by_value(blob: &WireBlob) -> Result<Content, VariableError> {
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(blob.data.as_bytes())
        .map_err(|e| VariableError::BadPayload {
            name: blob.name.clone(),
            reason: e.to_string(),
        })?;
    Ok(Content::new(bytes, blob.media_type.clone()))
}
