//! Generic module server: accepts connections and dispatches framed
//! requests to a [`ModuleHandler`].

use std::collections::BTreeMap;
use std::io::{self, Write};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};

use super::transport::{Address, Listener, Stream};
use super::wire::{self, FunctionDoc, Op, Request, Response, WireArg, WireError, PROTOCOL_VERSION};
use crate::variables::WireBlob;

/// Successful function result.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Outcome {
    pub text: String,
    pub blobs: Vec<WireBlob>,
    /// Workspace-relative paths written by the call.
    pub written: Vec<String>,
}

impl Outcome {
    pub fn text(t: impl Into<String>) -> Self {
        Outcome {
            text: t.into(),
            ..Outcome::default()
        }
    }
}

pub trait ModuleHandler: Send + 'static {
    fn name(&self) -> &str;
    fn functions(&self) -> Vec<FunctionDoc>;
    /// Current state name for state-machine modules; `None` when stateless.
    fn state(&self) -> Option<String> {
        None
    }
    fn invoke(
        &mut self,
        function: &str,
        args: &BTreeMap<String, WireArg>,
        blobs: &[WireBlob],
    ) -> Result<Outcome, String>;
    /// Free-form status text answered to `state` requests.
    fn report(&mut self) -> String {
        String::new()
    }
}

fn visible_names(h: &dyn ModuleHandler) -> Vec<String> {
    let state = h.state();
    h.functions()
        .into_iter()
        .filter(|f| f.visible_in(state.as_deref()))
        .map(|f| f.name)
        .collect()
}

/// Builds the response for one request.
pub fn handle_request(h: &mut dyn ModuleHandler, req: Request) -> Response {
    match req.op {
        Op::Describe => Response {
            state: h.state(),
            functions: Some(h.functions()),
            protocol_version: Some(PROTOCOL_VERSION),
            module: Some(h.name().to_string()),
            ..Response::ok(req.id, "")
        },
        Op::State => Response {
            state: h.state(),
            functions: Some(h.functions()),
            ..Response::ok(req.id, h.report())
        },
        Op::Invoke => {
            let Some(function) = req.function.as_deref() else {
                return Response::err(req.id, "invoke without a function name");
            };
            if !h.functions().iter().any(|f| f.name == function) {
                return Response::err(req.id, format!("unknown function {function}"));
            }
            let visible = visible_names(h);
            if !visible.iter().any(|v| v == function) {
                let state = h.state().unwrap_or_default();
                return Response {
                    state: Some(state.clone()),
                    functions: Some(h.functions()),
                    ..Response::err(
                        req.id,
                        format!(
                            "{function} is not available in state {state}; available: {}",
                            visible.join(", ")
                        ),
                    )
                };
            }
            let stateful = h.state().is_some();
            let mut resp = match h.invoke(function, &req.args, &req.blobs) {
                Ok(out) => Response {
                    blobs: out.blobs,
                    written: out.written,
                    ..Response::ok(req.id, out.text)
                },
                Err(e) => Response::err(req.id, e),
            };
            if stateful {
                resp.state = h.state();
                resp.functions = Some(h.functions());
            }
            resp
        }
    }
}

fn serve_connection(mut stream: Stream, handler: Arc<Mutex<dyn ModuleHandler>>) {
    loop {
        let payload = match wire::read_frame(&mut stream) {
            Ok(p) => p,
            Err(_) => return,
        };
        let resp = match wire::decode::<Request>(&payload) {
            Ok(req) => {
                let mut h = handler.lock().unwrap_or_else(|p| p.into_inner());
                handle_request(&mut *h, req)
            }
            Err(e) => Response::err(0, format!("bad request: {e}")),
        };
        if wire::write_frame(&mut stream, &resp).is_err() {
            return;
        }
    }
}

/// A running module server.
pub struct ModuleServer {
    pub address: Address,
    _accept: JoinHandle<()>,
}

impl ModuleServer {
    /// Binds `addr` and serves `handler` on background threads.
    pub fn spawn<H: ModuleHandler>(addr: &Address, handler: H) -> io::Result<ModuleServer> {
        let listener = Listener::bind(addr)?;
        let address = listener.local_address()?;
        let handler: Arc<Mutex<dyn ModuleHandler>> = Arc::new(Mutex::new(handler));
        let accept = thread::spawn(move || accept_loop(listener, handler));
        Ok(ModuleServer {
            address,
            _accept: accept,
        })
    }
}

fn accept_loop(listener: Listener, handler: Arc<Mutex<dyn ModuleHandler>>) {
    loop {
        match listener.accept() {
            Ok(stream) => {
                let h = handler.clone();
                thread::spawn(move || serve_connection(stream, h));
            }
            Err(_) => return,
        }
    }
}

/// Serves in the current thread forever, announcing `LISTEN <addr>` on
/// stdout first. This is the launch contract for module processes.
pub fn serve_forever<H: ModuleHandler>(addr: &Address, handler: H) -> Result<(), WireError> {
    let listener = Listener::bind(addr)?;
    let bound = listener.local_address()?;
    let mut out = io::stdout();
    writeln!(out, "LISTEN {bound}")?;
    out.flush()?;
    accept_loop(listener, Arc::new(Mutex::new(handler)));
    Ok(())
}
