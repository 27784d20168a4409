//! Cross-thread control surface: pause, resume and message injection.
//! Everything here is observed by the scheduler only between steps.

use std::collections::{BTreeMap, VecDeque};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::clock::Millis;
use crate::types::{NodeId, NodeStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Target {
    Active,
    Node(NodeId),
}

impl Target {
    /// `active` or a node id.
    pub fn parse(s: &str) -> Option<Target> {
        let s = s.trim();
        if s == "active" || s.is_empty() {
            Some(Target::Active)
        } else {
            s.trim_start_matches('#').parse().ok().map(|n| Target::Node(NodeId(n)))
        }
    }
}

impl std::fmt::Display for Target {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Target::Active => f.write_str("active"),
            Target::Node(n) => write!(f, "{n}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterventionRequest {
    pub target: Target,
    pub body: String,
    pub issued_at: Millis,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub queued: bool,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ControlStatus {
    pub paused: bool,
    /// The scheduler is parked at a between-steps boundary.
    pub blocked: bool,
    pub running: bool,
    pub active: Option<NodeId>,
    pub queued: usize,
    pub statuses: BTreeMap<NodeId, NodeStatus>,
}

#[derive(Debug, Default)]
struct State {
    paused: bool,
    blocked: bool,
    running: bool,
    active: Option<NodeId>,
    queue: VecDeque<InterventionRequest>,
    statuses: BTreeMap<NodeId, NodeStatus>,
}

#[derive(Debug, Clone, Default)]
pub struct ControlHandle {
    inner: Arc<(Mutex<State>, Condvar)>,
}

impl ControlHandle {
    pub fn new() -> Self {
        ControlHandle::default()
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.inner.0.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn status_of(s: &State) -> ControlStatus {
        ControlStatus {
            paused: s.paused,
            blocked: s.blocked,
            running: s.running,
            active: s.active,
            queued: s.queue.len(),
            statuses: s.statuses.clone(),
        }
    }

    pub fn status(&self) -> ControlStatus {
        Self::status_of(&self.lock())
    }

    /// Takes effect at the next between-steps boundary. Idempotent.
    pub fn pause(&self) -> ControlStatus {
        let mut s = self.lock();
        s.paused = true;
        let st = Self::status_of(&s);
        drop(s);
        self.inner.1.notify_all();
        st
    }

    /// No-op when not paused.
    pub fn resume(&self) -> ControlStatus {
        let mut s = self.lock();
        s.paused = false;
        let st = Self::status_of(&s);
        drop(s);
        self.inner.1.notify_all();
        st
    }

    pub fn is_paused(&self) -> bool {
        self.lock().paused
    }

    pub fn inject(&self, target: Target, body: impl Into<String>, at: Millis) -> Ack {
        let mut s = self.lock();
        let known = match target {
            Target::Active => true,
            Target::Node(n) => s.statuses.contains_key(&n),
        };
        s.queue.push_back(InterventionRequest {
            target,
            body: body.into(),
            issued_at: at,
        });
        drop(s);
        self.inner.1.notify_all();
        Ack {
            queued: true,
            status: if known {
                "queued".into()
            } else {
                "deferred: unknown node".into()
            },
        }
    }

    /// Waits until the scheduler parks at a boundary or `timeout` passes.
    pub fn wait_until_blocked(&self, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        let mut s = self.lock();
        while !s.blocked {
            let now = Instant::now();
            if now >= deadline {
                return false;
            }
            s = self
                .inner
                .1
                .wait_timeout(s, deadline - now)
                .unwrap_or_else(|p| p.into_inner())
                .0;
        }
        true
    }

    /// Scheduler side: blocks while paused.
    pub(crate) fn checkpoint(&self) {
        let mut s = self.lock();
        if !s.paused {
            return;
        }
        s.blocked = true;
        self.inner.1.notify_all();
        while s.paused {
            s = self.inner.1.wait(s).unwrap_or_else(|p| p.into_inner());
        }
        s.blocked = false;
        self.inner.1.notify_all();
    }

    /// Scheduler side: removes the requests addressed to `node`, in FIFO order.
    pub(crate) fn take_for(&self, node: NodeId) -> Vec<InterventionRequest> {
        let mut s = self.lock();
        let mut taken = Vec::new();
        let mut kept = VecDeque::new();
        while let Some(r) = s.queue.pop_front() {
            if r.target == Target::Active || r.target == Target::Node(node) {
                taken.push(r);
            } else {
                kept.push_back(r);
            }
        }
        s.queue = kept;
        taken
    }

    /// Scheduler side: drops requests whose target node does not exist.
    pub(crate) fn drop_unknown(&self) -> Vec<InterventionRequest> {
        let mut s = self.lock();
        let statuses = s.statuses.clone();
        let (keep, dropped): (VecDeque<_>, VecDeque<_>) = s.queue.drain(..).partition(|r| match r.target {
            Target::Active => true,
            Target::Node(n) => statuses.contains_key(&n),
        });
        s.queue = keep;
        dropped.into_iter().collect()
    }

    pub(crate) fn publish(&self, statuses: BTreeMap<NodeId, NodeStatus>, active: Option<NodeId>, running: bool) {
        let mut s = self.lock();
        s.statuses = statuses;
        s.active = active;
        s.running = running;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pause_blocks_until_resume() {
        let c = ControlHandle::new();
        c.pause();
        c.pause();
        assert!(c.is_paused());
        let c2 = c.clone();
        let h = std::thread::spawn(move || c2.checkpoint());
        assert!(c.wait_until_blocked(Duration::from_secs(5)));
        c.resume();
        h.join().unwrap();
        assert!(!c.status().blocked);
        // Resume when not paused is a no-op.
        assert!(!c.resume().paused);
    }

    #[test]
    fn fifo_per_target() {
        let c = ControlHandle::new();
        c.publish(
            [(NodeId(0), NodeStatus::Idle), (NodeId(1), NodeStatus::Idle)].into(),
            None,
            false,
        );
        c.inject(Target::Node(NodeId(1)), "x", 0);
        c.inject(Target::Active, "first", 0);
        c.inject(Target::Active, "second", 0);
        assert_eq!(
            c.inject(Target::Node(NodeId(7)), "?", 0).status,
            "deferred: unknown node"
        );
        let got: Vec<String> = c.take_for(NodeId(0)).into_iter().map(|r| r.body).collect();
        assert_eq!(got, ["first", "second"]);
        assert_eq!(c.drop_unknown().len(), 1);
        assert_eq!(c.take_for(NodeId(1)).len(), 1);
    }

    #[test]
    fn target_parsing() {
        assert_eq!(Target::parse("active"), Some(Target::Active));
        assert_eq!(Target::parse("#3"), Some(Target::Node(NodeId(3))));
        assert_eq!(Target::parse("x"), None);
    }
}
