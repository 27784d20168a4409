use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use thiserror::Error;

use super::event::{EventBody, EventRecord};
use crate::clock::Millis;
use crate::types::NodeId;

#[derive(Debug, Error)]
#[error("event log storage failed: {0}")]
pub struct LogError(pub String);

#[derive(Default)]
struct Inner {
    events: Vec<EventRecord>,
    sink: Option<BufWriter<File>>,
}

/// Append-only, shared event log. Clones share the same log.
#[derive(Clone, Default)]
pub struct EventLog {
    inner: Arc<(Mutex<Inner>, Condvar)>,
}

impl std::fmt::Debug for EventLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EventLog").field("len", &self.len()).finish()
    }
}

impl EventLog {
    pub fn new() -> Self {
        EventLog::default()
    }

    /// A log pre-filled with `events` (as read back from a session file).
    pub fn from_events(events: Vec<EventRecord>) -> Self {
        let log = EventLog::new();
        log.lock().events = events;
        log
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.0.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Mirrors every future append to `path` as JSON lines, flushed per event.
    pub fn write_ahead_to(&self, path: &Path) -> Result<(), LogError> {
        let file = File::options()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| LogError(format!("{}: {e}", path.display())))?;
        self.lock().sink = Some(BufWriter::new(file));
        Ok(())
    }

    /// Like [`EventLog::write_ahead_to`] but empties the file first; used once
    /// a session file has captured everything the old mirror held.
    pub fn restart_write_ahead(&self, path: &Path) -> Result<(), LogError> {
        let file = File::create(path).map_err(|e| LogError(format!("{}: {e}", path.display())))?;
        self.lock().sink = Some(BufWriter::new(file));
        Ok(())
    }

    pub fn append(&self, node: NodeId, parent: Option<NodeId>, at: Millis, body: EventBody) -> Result<u64, LogError> {
        let mut inner = self.lock();
        let seq = inner.events.len() as u64;
        let rec = EventRecord {
            seq,
            node,
            parent,
            at,
            body,
        };
        if let Some(sink) = inner.sink.as_mut() {
            let line = serde_json::to_string(&rec).map_err(|e| LogError(e.to_string()))?;
            sink.write_all(line.as_bytes())
                .and_then(|_| sink.write_all(b"\n"))
                .and_then(|_| sink.flush())
                .map_err(|e| LogError(e.to_string()))?;
        }
        inner.events.push(rec);
        drop(inner);
        self.inner.1.notify_all();
        Ok(seq)
    }

    pub fn len(&self) -> usize {
        self.lock().events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn snapshot(&self) -> Vec<EventRecord> {
        self.lock().events.clone()
    }

    pub fn since(&self, from: u64) -> Vec<EventRecord> {
        let inner = self.lock();
        inner.events.get(from as usize..).map(<[_]>::to_vec).unwrap_or_default()
    }

    /// Blocks until events past `from` exist or `timeout` passes.
    pub fn wait_since(&self, from: u64, timeout: Duration) -> Vec<EventRecord> {
        let guard = self.lock();
        let (guard, _) = self
            .inner
            .1
            .wait_timeout_while(guard, timeout, |i| i.events.len() as u64 <= from)
            .unwrap_or_else(|p| p.into_inner());
        guard.events.get(from as usize..).map(<[_]>::to_vec).unwrap_or_default()
    }

    /// The log as JSON lines.
    pub fn to_lines(&self) -> String {
        to_lines(&self.lock().events)
    }
}

pub fn to_lines(events: &[EventRecord]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&serde_json::to_string(e).expect("events serialize"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn note(t: &str) -> EventBody {
        EventBody::Notification { text: t.into() }
    }

    #[test]
    fn seq_is_gap_free() {
        let log = EventLog::new();
        for i in 0..5 {
            assert_eq!(log.append(NodeId(0), None, 0, note("x")).unwrap(), i);
        }
        let seqs: Vec<u64> = log.snapshot().iter().map(|e| e.seq).collect();
        assert_eq!(seqs, [0, 1, 2, 3, 4]);
        assert_eq!(log.since(3).len(), 2);
        assert!(log.since(9).is_empty());
    }

    #[test]
    fn write_ahead_mirror_and_failure() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("wal.jsonl");
        let log = EventLog::new();
        log.write_ahead_to(&p).unwrap();
        log.append(NodeId(0), None, 7, note("a")).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text, log.to_lines());
        assert!(text.starts_with(r#"{"seq":0,"node":0,"parent":null,"at":7,"kind":"notification","text":"a"}"#));

        if Path::new("/dev/full").exists() {
            let bad = EventLog::new();
            bad.write_ahead_to(Path::new("/dev/full")).unwrap();
            assert!(bad.append(NodeId(0), None, 0, note("x")).is_err());
            assert!(bad.is_empty());
        }
    }

    #[test]
    fn waiting_reader_wakes() {
        let log = EventLog::new();
        let l2 = log.clone();
        let h = std::thread::spawn(move || l2.wait_since(0, Duration::from_secs(5)));
        std::thread::sleep(Duration::from_millis(20));
        log.append(NodeId(0), None, 0, note("x")).unwrap();
        assert_eq!(h.join().unwrap().len(), 1);
    }
}
