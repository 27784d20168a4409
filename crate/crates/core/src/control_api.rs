//! Local HTTP control surface for supervision tools.
//!
//! | method | path                | body / answer                                   |
//! |--------|---------------------|-------------------------------------------------|
//! | GET    | /tree               | tree shape rebuilt from the log, plus statuses  |
//! | GET    | /log?from=N         | JSON lines from seq N; `&follow=1` keeps going  |
//! | GET    | /status             | pause flag, active node, queue length           |
//! | POST   | /pause, /resume     | status                                          |
//! | POST   | /inject             | `{"target": "active" or id, "body": "..."}`     |
//! | GET    | /blobs/<sha256>     | raw bytes of a stored variable                  |

use std::io::{self, Read};
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tiny_http::{Header, Method, Request, Response, Server};

use crate::clock::Clock;
use crate::observability::{reconstruct_tree, EventLog, NodeShape};
use crate::runtime::control::{ControlHandle, ControlStatus, Target};
use crate::types::{NodeId, NodeStatus};
use crate::variables::ContentStore;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    #[serde(flatten)]
    pub shape: NodeShape,
    pub status: Option<NodeStatus>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeView {
    pub root: Option<NodeId>,
    pub nodes: Vec<TreeNode>,
    pub outline: String,
    pub paused: bool,
    pub active: Option<NodeId>,
    pub events: usize,
}

#[derive(Debug, Clone, Deserialize)]
struct InjectBody {
    #[serde(default)]
    target: Option<serde_json::Value>,
    body: String,
}

/// The data a control server reads; all of it is shared with the scheduler.
#[derive(Clone)]
pub struct ControlContext {
    pub control: ControlHandle,
    pub log: EventLog,
    pub blobs: ContentStore,
    pub clock: Arc<dyn Clock>,
}

pub fn tree_view(ctx: &ControlContext) -> TreeView {
    let events = ctx.log.snapshot();
    let rebuilt = reconstruct_tree(&events);
    let status = ctx.control.status();
    TreeView {
        root: rebuilt.shape.root,
        outline: rebuilt.shape.outline(),
        nodes: rebuilt
            .shape
            .nodes
            .into_iter()
            .map(|shape| TreeNode {
                status: status.statuses.get(&shape.id).copied(),
                shape,
            })
            .collect(),
        paused: status.paused,
        active: status.active,
        events: events.len(),
    }
}

pub struct ControlServer {
    addr: SocketAddr,
    server: Arc<Server>,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl ControlServer {
    /// Binds `bind` (port 0 picks a free port) and serves in the background.
    pub fn spawn(bind: &str, ctx: ControlContext) -> io::Result<ControlServer> {
        let server = Arc::new(Server::http(bind).map_err(|e| io::Error::other(e.to_string()))?);
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| io::Error::other("control API needs a TCP address"))?;
        let stop = Arc::new(AtomicBool::new(false));
        let (srv, flag) = (server.clone(), stop.clone());
        let thread = thread::spawn(move || {
            while !flag.load(Ordering::SeqCst) {
                match srv.recv_timeout(Duration::from_millis(100)) {
                    Ok(Some(req)) => {
                        let ctx = ctx.clone();
                        let flag = flag.clone();
                        thread::spawn(move || handle(req, &ctx, &flag));
                    }
                    Ok(None) => {}
                    Err(_) => break,
                }
            }
        });
        Ok(ControlServer {
            addr,
            server,
            stop,
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for ControlServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        self.server.unblock();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

fn json_header() -> Header {
    Header::from_bytes("Content-Type", "application/json").expect("static header")
}

fn json<T: Serialize>(value: &T) -> Response<io::Cursor<Vec<u8>>> {
    Response::from_data(serde_json::to_vec(value).expect("serializable")).with_header(json_header())
}

fn error(code: u16, message: &str) -> Response<io::Cursor<Vec<u8>>> {
    json(&serde_json::json!({ "error": message })).with_status_code(code)
}

fn query_param<'a>(url: &'a str, key: &str) -> Option<&'a str> {
    let (_, q) = url.split_once('?')?;
    q.split('&').find_map(|kv| {
        let (k, v) = kv.split_once('=').unwrap_or((kv, ""));
        (k == key).then_some(v)
    })
}

/// Streams log lines as they are appended until the server stops or the
/// client goes away.
struct Follow {
    log: EventLog,
    next: u64,
    buf: Vec<u8>,
    pos: usize,
    stop: Arc<AtomicBool>,
}

impl Read for Follow {
    fn read(&mut self, out: &mut [u8]) -> io::Result<usize> {
        while self.pos >= self.buf.len() {
            if self.stop.load(Ordering::SeqCst) {
                return Ok(0);
            }
            let batch = self.log.wait_since(self.next, Duration::from_millis(200));
            if batch.is_empty() {
                continue;
            }
            self.next += batch.len() as u64;
            self.buf = crate::observability::log::to_lines(&batch).into_bytes();
            self.pos = 0;
        }
        let n = out.len().min(self.buf.len() - self.pos);
        out[..n].copy_from_slice(&self.buf[self.pos..self.pos + n]);
        self.pos += n;
        Ok(n)
    }
}

fn status_json(s: &ControlStatus) -> Response<io::Cursor<Vec<u8>>> {
    json(s)
}

fn handle(mut req: Request, ctx: &ControlContext, stop: &Arc<AtomicBool>) {
    let url = req.url().to_string();
    let path = url.split('?').next().unwrap_or("").to_string();
    let method = req.method().clone();
    let response = match (method, path.as_str()) {
        (Method::Get, "/tree") => json(&tree_view(ctx)),
        (Method::Get, "/status") => status_json(&ctx.control.status()),
        (Method::Get, "/log") => {
            let from: u64 = query_param(&url, "from").and_then(|v| v.parse().ok()).unwrap_or(0);
            if query_param(&url, "follow").is_some_and(|v| v == "1" || v == "true") {
                let body = Follow {
                    log: ctx.log.clone(),
                    next: from,
                    buf: Vec::new(),
                    pos: 0,
                    stop: stop.clone(),
                };
                let resp = Response::new(
                    200.into(),
                    vec![Header::from_bytes("Content-Type", "application/x-ndjson").expect("static header")],
                    body,
                    None,
                    None,
                );
                let _ = req.respond(resp);
                return;
            }
            let lines = crate::observability::log::to_lines(&ctx.log.since(from));
            Response::from_data(lines.into_bytes())
                .with_header(Header::from_bytes("Content-Type", "application/x-ndjson").expect("static header"))
        }
        (Method::Post, "/pause") => status_json(&ctx.control.pause()),
        (Method::Post, "/resume") => status_json(&ctx.control.resume()),
        (Method::Post, "/inject") => {
            let mut text = String::new();
            if req.as_reader().read_to_string(&mut text).is_err() {
                error(400, "unreadable body")
            } else {
                match serde_json::from_str::<InjectBody>(&text) {
                    Err(e) => error(
                        400,
                        &format!("expected {{\"target\": \"active\", \"body\": \"...\"}}: {e}"),
                    ),
                    Ok(b) => {
                        let target = match &b.target {
                            None => Some(Target::Active),
                            Some(serde_json::Value::String(s)) => Target::parse(s),
                            Some(serde_json::Value::Number(n)) => n.as_u64().map(|n| Target::Node(NodeId(n))),
                            Some(_) => None,
                        };
                        match target {
                            None => error(400, "target must be \"active\" or a node id"),
                            Some(_) if b.body.trim().is_empty() => error(400, "body must not be empty"),
                            Some(t) => json(&ctx.control.inject(t, b.body, ctx.clock.now_ms())),
                        }
                    }
                }
            }
        }
        (Method::Get, p) if p.starts_with("/blobs/") => {
            let digest = &p["/blobs/".len()..];
            match ctx.blobs.get(digest) {
                Some(bytes) => Response::from_data(bytes.to_vec()),
                None => error(404, "unknown blob"),
            }
        }
        _ => error(404, "no such endpoint"),
    };
    let _ = req.respond(response);
}
