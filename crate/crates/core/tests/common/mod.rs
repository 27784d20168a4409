#![allow(dead_code)]

pub mod gen;

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use iact::backend::{Backend, BackendError, BackendRequest, Scenario, ScriptedBackend};
use iact::clock::FrozenClock;
use iact::extmod::docbrowser::DocBrowser;
use iact::extmod::scripter::{Scripter, ScripterConfig};
use iact::extmod::server::ModuleServer;
use iact::extmod::Address;
use iact::observability::{EventBody, EventRecord};
use iact::types::{ContextSnapshot, Message, NodeId};
use iact::{Runtime, RuntimeConfig};

pub fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn scenario_path(name: &str) -> PathBuf {
    manifest_dir().join("scenarios").join(format!("{name}.toml"))
}

pub fn scenario(name: &str) -> Scenario {
    Scenario::load(&scenario_path(name)).unwrap()
}

pub fn corpus_dir() -> PathBuf {
    manifest_dir().join("fixtures").join("corpus")
}

pub const SCENARIOS: &[&str] = &[
    "hello",
    "sibling_delegation",
    "escalation",
    "compression",
    "lazy_eval",
    "intervention",
    "tunnel_vision",
    "docbrowser",
    "bash_steps",
];

pub type Requests = Arc<Mutex<Vec<BackendRequest>>>;
pub type Snapshots = Arc<Mutex<Vec<(NodeId, ContextSnapshot)>>>;

/// Scripted backend that keeps a copy of every request.
pub struct Recording {
    inner: ScriptedBackend,
    seen: Requests,
}

impl Recording {
    pub fn new(scenario: Scenario) -> (Recording, Requests) {
        let seen = Requests::default();
        (
            Recording {
                inner: ScriptedBackend::new(scenario),
                seen: seen.clone(),
            },
            seen,
        )
    }
}

impl Backend for Recording {
    fn complete(&mut self, request: &BackendRequest) -> Result<String, BackendError> {
        self.seen.lock().unwrap().push(request.clone());
        self.inner.complete(request)
    }
}

pub struct Harness {
    pub rt: Runtime,
    pub scenario: Scenario,
    pub requests: Requests,
    pub snapshots: Snapshots,
    pub clock: Arc<FrozenClock>,
    pub workspace: Option<tempfile::TempDir>,
    pub servers: Vec<ModuleServer>,
}

pub fn config_for(s: &Scenario) -> RuntimeConfig {
    RuntimeConfig {
        hippocampus: s.hippocampus,
        ..RuntimeConfig::default()
    }
}

impl Harness {
    pub fn new(name: &str) -> Harness {
        let s = scenario(name);
        let cfg = config_for(&s);
        Harness::with(s, cfg)
    }

    pub fn with(scenario: Scenario, config: RuntimeConfig) -> Harness {
        let (backend, requests) = Recording::new(scenario.clone());
        let root = scenario
            .root
            .clone()
            .unwrap_or_else(|| scenario.agents[0].type_name.clone());
        let clock = Arc::new(FrozenClock::at(1_700_000_000_000));
        let mut rt = Runtime::new(scenario.agents.clone(), root, Box::new(backend), config)
            .unwrap()
            .with_clock(clock.clone());
        let snapshots = Snapshots::default();
        let sink = snapshots.clone();
        rt.on_snapshot(move |id, snap| sink.lock().unwrap().push((id, snap.clone())));
        let mut h = Harness {
            rt,
            scenario,
            requests,
            snapshots,
            clock,
            workspace: None,
            servers: Vec::new(),
        };
        for m in h.scenario.modules.clone() {
            match m.as_str() {
                "scripter" => h.load_scripter(),
                "docbrowser" => h.load_docbrowser(),
                other => panic!("unknown bundled module {other}"),
            }
        }
        h
    }

    pub fn load_scripter(&mut self) {
        let ws = tempfile::tempdir().unwrap();
        let server = ModuleServer::spawn(
            &Address::parse("127.0.0.1:0"),
            Scripter::new(ScripterConfig::new(ws.path())).unwrap(),
        )
        .unwrap();
        self.rt.preload_module(&server.address).unwrap();
        self.servers.push(server);
        self.workspace = Some(ws);
    }

    pub fn load_docbrowser(&mut self) {
        let server = ModuleServer::spawn(&Address::parse("127.0.0.1:0"), DocBrowser::new(corpus_dir())).unwrap();
        self.rt.preload_module(&server.address).unwrap();
        self.servers.push(server);
    }

    pub fn workspace_path(&self) -> &Path {
        self.workspace.as_ref().expect("scripter loaded").path()
    }

    /// Sends every scenario input to the root and returns the replies.
    pub fn run_inputs(&mut self) -> Vec<Message> {
        let inputs = self.scenario.inputs.clone();
        inputs.iter().map(|i| self.rt.run_root(i).unwrap()).collect()
    }

    pub fn events(&self) -> Vec<EventRecord> {
        self.rt.log().snapshot()
    }

    pub fn requests(&self) -> Vec<BackendRequest> {
        self.requests.lock().unwrap().clone()
    }

    pub fn snapshots(&self) -> Vec<(NodeId, ContextSnapshot)> {
        self.snapshots.lock().unwrap().clone()
    }
}

pub fn node_created(events: &[EventRecord]) -> usize {
    events
        .iter()
        .filter(|e| matches!(e.body, EventBody::NodeCreated { .. }))
        .count()
}

/// (caller, child name) of every Call event, in order.
pub fn calls(events: &[EventRecord]) -> Vec<(NodeId, String)> {
    events
        .iter()
        .filter_map(|e| match &e.body {
            EventBody::Call { child_name, .. } => Some((e.node, child_name.clone())),
            _ => None,
        })
        .collect()
}

/// Independent token estimate: four characters per token, rounded up.
pub fn chars_over_four(chars: usize) -> usize {
    chars.div_ceil(4)
}

/// Usage of a snapshot recomputed from its parts; dynamic notes are not counted.
pub fn snapshot_usage(s: &ContextSnapshot) -> usize {
    let chars = s.system_prompt.chars().count()
        + s.history_window.iter().map(|m| m.body.chars().count()).sum::<usize>()
        + s.turn_input.iter().map(|m| m.body.chars().count()).sum::<usize>();
    chars_over_four(chars)
}
