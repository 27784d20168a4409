//! Session files: a version header, the event log, then a state snapshot.
//!
//! ```text
//! {"format":"iact-session","version":1}
//! {"seq":0,...}            one line per event
//! {"type":"snapshot",...}  registry, memory and counters
//! ```
//!
//! Variable and attachment bytes live next to the file in `<path>.blobs/<sha256>`.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::event::EventRecord;
use crate::hippocampus::MemoryRecord;
use crate::types::{AgentNode, AgentSpec, Message, NodeId};
use crate::variables::Content;

pub const SESSION_FORMAT: &str = "iact-session";
pub const SESSION_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a session file: {0}")]
    NotASession(String),
    #[error(
        "session format version {found} is not supported (expected {SESSION_VERSION}); \
         open it with the release that wrote it and re-run with `inspect` to export the transcript"
    )]
    Version { found: u32 },
    #[error("session file is incomplete: {0}")]
    Partial(String),
    #[error("missing blob {digest} (expected in {dir})")]
    MissingBlob { digest: String, dir: String },
    #[error("corrupt blob: {0}")]
    CorruptBlob(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
}

/// Everything besides the event log that a restart needs.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub root_type: String,
    pub root: Option<NodeId>,
    pub specs: BTreeMap<String, AgentSpec>,
    pub nodes: Vec<AgentNode>,
    /// Inputs a node had not consumed when its turn ended at the iteration cap.
    #[serde(default)]
    pub carry: BTreeMap<NodeId, Vec<Message>>,
    pub memory: Option<Vec<MemoryRecord>>,
    pub next_message: u64,
    #[serde(default)]
    pub file_owners: BTreeMap<String, NodeId>,
    pub event_count: u64,
}

#[derive(Serialize, Deserialize)]
struct SnapshotLine {
    #[serde(rename = "type")]
    kind: String,
    #[serde(flatten)]
    snapshot: SessionSnapshot,
}

pub fn blob_dir(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".blobs");
    PathBuf::from(s)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SessionError + '_ {
    move |source| SessionError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn each_content_mut(snapshot: &mut SessionSnapshot, events: &mut [EventRecord], f: &mut dyn FnMut(&mut Content)) {
    fn msg(m: &mut Message, f: &mut dyn FnMut(&mut Content)) {
        for a in &mut m.attachments {
            f(&mut a.content);
        }
    }
    for n in &mut snapshot.nodes {
        for v in n.variables.all_versions_mut() {
            f(&mut v.content);
        }
        for m in &mut n.history {
            msg(m, f);
        }
    }
    for list in snapshot.carry.values_mut() {
        for m in list {
            msg(m, f);
        }
    }
    for e in events {
        use super::event::EventBody as B;
        match &mut e.body {
            B::Call { message, .. } | B::Return { message, .. } => msg(message, f),
            B::LlmTurn { inputs, output, .. } => {
                for m in inputs {
                    msg(m, f);
                }
                msg(output, f);
            }
            B::Compression { note, .. } => msg(note, f),
            _ => {}
        }
    }
}

/// Writes the session atomically: a temporary file renamed over `path`.
pub fn write_session(path: &Path, snapshot: &SessionSnapshot, events: &[EventRecord]) -> Result<(), SessionError> {
    let blobs = blob_dir(path);
    fs::create_dir_all(&blobs).map_err(io_err(&blobs))?;
    let mut snap = snapshot.clone();
    let mut evs = events.to_vec();
    let mut pending: Vec<Content> = Vec::new();
    each_content_mut(&mut snap, &mut evs, &mut |c| pending.push(c.clone()));
    for c in pending {
        let target = blobs.join(c.digest());
        if target.exists() || !c.is_hydrated() {
            continue;
        }
        let tmp = blobs.join(format!("{}.tmp", c.digest()));
        fs::write(&tmp, c.bytes()).map_err(io_err(&tmp))?;
        fs::rename(&tmp, &target).map_err(io_err(&target))?;
    }

    let mut text = serde_json::to_string(&Header {
        format: SESSION_FORMAT.into(),
        version: SESSION_VERSION,
    })
    .expect("header serializes");
    text.push('\n');
    text.push_str(&super::log::to_lines(events));
    let line = SnapshotLine {
        kind: "snapshot".into(),
        snapshot: SessionSnapshot {
            event_count: events.len() as u64,
            ..snapshot.clone()
        },
    };
    text.push_str(&serde_json::to_string(&line).map_err(|e| SessionError::Partial(e.to_string()))?);
    text.push('\n');

    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(text.as_bytes()).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    drop(f);
    fs::rename(&tmp, path).map_err(io_err(path))?;
    Ok(())
}

/// Reads only the header line; `Ok(false)` means the text is a bare event log.
pub fn check_header(text: &str) -> Result<bool, SessionError> {
    let first = text.lines().next().unwrap_or("");
    match serde_json::from_str::<Header>(first) {
        Ok(h) if h.format == SESSION_FORMAT => {
            if h.version != SESSION_VERSION {
                return Err(SessionError::Version { found: h.version });
            }
            Ok(true)
        }
        _ => Ok(false),
    }
}

/// Reads a complete session, restoring every blob. Anything short of a
/// full, well-formed file is refused.
pub fn read_session(path: &Path) -> Result<(SessionSnapshot, Vec<EventRecord>), SessionError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    if !check_header(&text)? {
        return Err(SessionError::NotASession(path.display().to_string()));
    }
    if !text.ends_with('\n') {
        return Err(SessionError::Partial("last line is not newline-terminated".into()));
    }
    let mut lines = text.lines().skip(1).peekable();
    let mut events = Vec::new();
    let mut snapshot = None;
    while let Some(line) = lines.next() {
        if line.contains("\"type\":\"snapshot\"") && lines.peek().is_none() {
            let s: SnapshotLine =
                serde_json::from_str(line).map_err(|e| SessionError::Partial(format!("snapshot line: {e}")))?;
            snapshot = Some(s.snapshot);
            break;
        }
        let e: EventRecord = serde_json::from_str(line)
            .map_err(|e| SessionError::Partial(format!("event line {}: {e}", events.len() + 1)))?;
        if e.seq != events.len() as u64 {
            return Err(SessionError::Partial(format!(
                "expected seq {}, found {}",
                events.len(),
                e.seq
            )));
        }
        events.push(e);
    }
    let mut snapshot = snapshot.ok_or_else(|| SessionError::Partial("no snapshot record".into()))?;
    if snapshot.event_count != events.len() as u64 {
        return Err(SessionError::Partial(format!(
            "snapshot covers {} events but the file holds {}",
            snapshot.event_count,
            events.len()
        )));
    }

    let dir = blob_dir(path);
    let mut cache: HashMap<String, Arc<[u8]>> = HashMap::new();
    let mut failure: Option<SessionError> = None;
    each_content_mut(&mut snapshot, &mut events, &mut |c| {
        if failure.is_some() || c.is_hydrated() {
            return;
        }
        let digest = c.digest().to_string();
        let bytes = match cache.get(&digest) {
            Some(b) => b.clone(),
            None => match fs::read(dir.join(&digest)) {
                Ok(b) => {
                    let b: Arc<[u8]> = b.into();
                    cache.insert(digest.clone(), b.clone());
                    b
                }
                Err(_) => {
                    failure = Some(SessionError::MissingBlob {
                        digest,
                        dir: dir.display().to_string(),
                    });
                    return;
                }
            },
        };
        if let Err(e) = c.hydrate(bytes) {
            failure = Some(SessionError::CorruptBlob(e));
        }
    });
    match failure {
        Some(e) => Err(e),
        None => Ok((snapshot, events)),
    }
}

/// Event lines of a session file or a bare log, for offline inspection.
/// Tolerates damage: the caller reconstructs the valid prefix.
pub fn event_lines(text: &str) -> Result<String, SessionError> {
    let body = if check_header(text)? {
        text.split_once('\n').map(|x| x.1).unwrap_or("")
    } else {
        text
    };
    let mut out = String::with_capacity(body.len());
    for line in body.split_inclusive('\n') {
        if line.starts_with("{\"type\":\"snapshot\"") {
            break;
        }
        out.push_str(line);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observability::event::EventBody;
    use crate::variables::Origin;

    fn sample() -> (SessionSnapshot, Vec<EventRecord>) {
        let spec = AgentSpec::new("root", "p");
        let mut node = AgentNode::new(NodeId(0), "root", spec.clone(), None, 0);
        node.variables
            .define(
                "blob",
                Content::new(vec![0u8, 1, 2, 255], "application/octet-stream"),
                Origin::Direct,
                0,
            )
            .unwrap();
        let snap = SessionSnapshot {
            root_type: "root".into(),
            root: Some(NodeId(0)),
            specs: [("root".to_string(), spec)].into(),
            nodes: vec![node],
            next_message: 3,
            ..Default::default()
        };
        let events = vec![EventRecord {
            seq: 0,
            node: NodeId(0),
            parent: None,
            at: 0,
            body: EventBody::NodeCreated {
                name: "root".into(),
                agent_type: "root".into(),
            },
        }];
        (snap, events)
    }

    #[test]
    fn round_trip_restores_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.iact");
        let (snap, events) = sample();
        write_session(&p, &snap, &events).unwrap();
        let (back, evs) = read_session(&p).unwrap();
        assert_eq!(evs, events);
        assert_eq!(
            back.nodes[0].variables.get("blob").unwrap().content.bytes(),
            &[0u8, 1, 2, 255]
        );
        assert_eq!(back.event_count, 1);
    }

    #[test]
    fn truncated_and_versioned_files_are_refused() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.iact");
        let (snap, events) = sample();
        write_session(&p, &snap, &events).unwrap();
        let full = fs::read_to_string(&p).unwrap();

        let cut = dir.path().join("cut.iact");
        fs::write(&cut, &full[..full.len() - 10]).unwrap();
        assert!(matches!(read_session(&cut), Err(SessionError::Partial(_))));
        let cut2 = dir.path().join("cut2.iact");
        let without_snapshot: String = full.lines().take(2).map(|l| format!("{l}\n")).collect();
        fs::write(&cut2, without_snapshot).unwrap();
        assert!(matches!(read_session(&cut2), Err(SessionError::Partial(_))));

        let old = dir.path().join("old.iact");
        fs::write(&old, full.replacen("\"version\":1", "\"version\":0", 1)).unwrap();
        let err = read_session(&old).unwrap_err();
        assert!(matches!(err, SessionError::Version { found: 0 }));
        assert!(err.to_string().contains("inspect"));
    }

    #[test]
    fn missing_blob_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.iact");
        let (snap, events) = sample();
        write_session(&p, &snap, &events).unwrap();
        fs::remove_dir_all(blob_dir(&p)).unwrap();
        assert!(matches!(read_session(&p), Err(SessionError::MissingBlob { .. })));
    }

    #[test]
    fn event_lines_strip_header_and_snapshot() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.iact");
        let (snap, events) = sample();
        write_session(&p, &snap, &events).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(event_lines(&text).unwrap(), super::super::log::to_lines(&events));
    }
}
