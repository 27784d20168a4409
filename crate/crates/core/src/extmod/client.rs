//! Client side of the module protocol.

use std::collections::BTreeMap;
use std::process::Child;
use std::time::Duration;

use thiserror::Error;

use super::transport::{Address, Stream};
use super::wire::{self, FunctionDoc, Op, Request, Response, WireArg, WireError, PROTOCOL_VERSION};
use crate::interpreter::is_pattern_name;
use crate::variables::WireBlob;

pub const DEFAULT_CALL_TIMEOUT: Duration = Duration::from_secs(120);
const CONNECT_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Error)]
pub enum ModuleError {
    #[error("cannot connect to module at {address}: {reason}")]
    Connect { address: String, reason: String },
    #[error("protocol version mismatch: module speaks {found:?}, core speaks {PROTOCOL_VERSION}")]
    VersionMismatch { found: Option<u32> },
    #[error("malformed descriptor from {address}: {reason}")]
    MalformedDescriptor { address: String, reason: String },
    #[error("transport failure talking to module {module}: {reason}")]
    Transport { module: String, reason: String },
    #[error("module {module} did not answer {function} within {secs} s; connection reset")]
    Timeout {
        module: String,
        function: String,
        secs: u64,
    },
    #[error("{function} is not available in state {state}; available: {}", available.join(", "))]
    NotAvailable {
        function: String,
        state: String,
        available: Vec<String>,
    },
    #[error("module {module} reported an error: {message}")]
    Remote { module: String, message: String },
    #[error("failed to launch module program: {0}")]
    Spawn(String),
    #[error("module program did not announce a listening address within {0} s")]
    HandshakeTimeout(u64),
    #[error("module advertises [{}] but the manifest declares [{}]", advertised.join(", "), manifest.join(", "))]
    ManifestMismatch {
        advertised: Vec<String>,
        manifest: Vec<String>,
    },
    #[error(transparent)]
    Oversize(#[from] crate::variables::VariableError),
}

/// What the core knows about one loaded module.
#[derive(Debug, Clone, PartialEq)]
pub struct ModuleDescriptor {
    pub module_name: String,
    pub address: Address,
    pub functions: Vec<FunctionDoc>,
    pub current_state: Option<String>,
    pub process_id: Option<u32>,
}

impl ModuleDescriptor {
    /// Functions visible in the current state.
    pub fn visible(&self) -> Vec<&FunctionDoc> {
        self.functions
            .iter()
            .filter(|f| f.visible_in(self.current_state.as_deref()))
            .collect()
    }

    pub fn visible_names(&self) -> Vec<String> {
        self.visible().into_iter().map(|f| f.name.clone()).collect()
    }

    pub fn function(&self, name: &str) -> Option<&FunctionDoc> {
        self.functions.iter().find(|f| f.name == name)
    }
}

/// Result of a successful invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct InvokeResult {
    pub text: String,
    pub blobs: Vec<WireBlob>,
    pub written: Vec<String>,
}

pub struct ModuleClient {
    descriptor: ModuleDescriptor,
    conn: Option<Stream>,
    next_id: u64,
    pub timeout: Duration,
    process: Option<Child>,
}

impl std::fmt::Debug for ModuleClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModuleClient")
            .field("descriptor", &self.descriptor)
            .field("connected", &self.conn.is_some())
            .finish()
    }
}

fn connect(address: &Address) -> Result<Stream, ModuleError> {
    Stream::connect(address, CONNECT_TIMEOUT).map_err(|e| ModuleError::Connect {
        address: address.to_string(),
        reason: e.to_string(),
    })
}

fn check_descriptor(address: &Address, resp: &Response) -> Result<(String, Vec<FunctionDoc>), ModuleError> {
    let malformed = |reason: String| ModuleError::MalformedDescriptor {
        address: address.to_string(),
        reason,
    };
    if resp.protocol_version != Some(PROTOCOL_VERSION) {
        return Err(ModuleError::VersionMismatch {
            found: resp.protocol_version,
        });
    }
    if !resp.ok {
        return Err(malformed(
            resp.error.clone().unwrap_or_else(|| "describe failed".into()),
        ));
    }
    let name = resp
        .module
        .clone()
        .ok_or_else(|| malformed("missing module name".into()))?;
    if !crate::variables::is_identifier(&name) {
        return Err(malformed(format!("module name '{name}' is not an identifier")));
    }
    let functions = resp
        .functions
        .clone()
        .ok_or_else(|| malformed("missing function list".into()))?;
    let mut seen = std::collections::HashSet::new();
    for f in &functions {
        if !is_pattern_name(&f.name) {
            return Err(malformed(format!(
                "function name '{}' is not an uppercase identifier",
                f.name
            )));
        }
        if !seen.insert(f.name.as_str()) {
            return Err(malformed(format!("function {} listed twice", f.name)));
        }
    }
    Ok((name, functions))
}

impl ModuleClient {
    /// Connects and performs the `describe` handshake.
    pub fn load(address: &Address) -> Result<ModuleClient, ModuleError> {
        let mut stream = connect(address)?;
        stream.set_read_timeout(Some(CONNECT_TIMEOUT)).ok();
        let malformed = |reason: String| ModuleError::MalformedDescriptor {
            address: address.to_string(),
            reason,
        };
        wire::write_frame(&mut stream, &Request::describe(0)).map_err(|e| malformed(e.to_string()))?;
        let resp: Response = wire::read_message(&mut stream).map_err(|e| malformed(e.to_string()))?;
        let (module_name, functions) = check_descriptor(address, &resp)?;
        Ok(ModuleClient {
            descriptor: ModuleDescriptor {
                module_name,
                address: address.clone(),
                functions,
                current_state: resp.state,
                process_id: None,
            },
            conn: Some(stream),
            next_id: 1,
            timeout: DEFAULT_CALL_TIMEOUT,
            process: None,
        })
    }

    pub fn descriptor(&self) -> &ModuleDescriptor {
        &self.descriptor
    }

    pub fn name(&self) -> &str {
        &self.descriptor.module_name
    }

    /// Attaches a locally spawned process; it is killed when the client drops.
    pub fn adopt_process(&mut self, child: Child) {
        self.descriptor.process_id = Some(child.id());
        self.process = Some(child);
    }

    pub(crate) fn take_process(&mut self) -> Option<Child> {
        self.process.take()
    }

    fn reset(&mut self) {
        if let Some(c) = self.conn.take() {
            c.shutdown();
        }
    }

    fn roundtrip(&mut self, req: &Request, label: &str, timeout: Duration) -> Result<Response, ModuleError> {
        if self.conn.is_none() {
            self.conn = Some(connect(&self.descriptor.address).map_err(|e| ModuleError::Transport {
                module: self.descriptor.module_name.clone(),
                reason: e.to_string(),
            })?);
        }
        let stream = self.conn.as_mut().expect("connected above");
        stream.set_read_timeout(Some(timeout)).ok();
        stream.set_write_timeout(Some(timeout)).ok();
        let result = wire::write_frame(stream, req).and_then(|_| wire::read_message::<_, Response>(stream));
        match result {
            Ok(resp) if resp.id == req.id => Ok(resp),
            Ok(resp) => {
                self.reset();
                Err(ModuleError::Transport {
                    module: self.descriptor.module_name.clone(),
                    reason: format!("response id {} does not match request id {}", resp.id, req.id),
                })
            }
            Err(WireError::Io(e))
                if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) =>
            {
                self.reset();
                Err(ModuleError::Timeout {
                    module: self.descriptor.module_name.clone(),
                    function: label.to_string(),
                    secs: timeout.as_secs(),
                })
            }
            Err(e) => {
                self.reset();
                Err(ModuleError::Transport {
                    module: self.descriptor.module_name.clone(),
                    reason: e.to_string(),
                })
            }
        }
    }

    fn absorb_state(&mut self, resp: &Response) {
        if resp.state.is_some() || self.descriptor.current_state.is_some() {
            self.descriptor.current_state = resp.state.clone();
        }
        if let Some(f) = &resp.functions {
            self.descriptor.functions = f.clone();
        }
    }

    /// Invokes `function`, refusing locally when it is hidden in the current state.
    pub fn invoke(
        &mut self,
        function: &str,
        args: BTreeMap<String, WireArg>,
        blobs: Vec<WireBlob>,
        timeout: Option<Duration>,
    ) -> Result<InvokeResult, ModuleError> {
        let visible = self.descriptor.visible_names();
        if !visible.iter().any(|v| v == function) {
            return Err(ModuleError::NotAvailable {
                function: function.to_string(),
                state: self.descriptor.current_state.clone().unwrap_or_default(),
                available: visible,
            });
        }
        let id = self.next_id;
        self.next_id += 1;
        let req = Request {
            id,
            op: Op::Invoke,
            function: Some(function.to_string()),
            args,
            blobs,
        };
        let resp = self.roundtrip(&req, function, timeout.unwrap_or(self.timeout))?;
        self.absorb_state(&resp);
        if resp.ok {
            Ok(InvokeResult {
                text: resp.result.unwrap_or_default(),
                blobs: resp.blobs,
                written: resp.written,
            })
        } else {
            Err(ModuleError::Remote {
                module: self.descriptor.module_name.clone(),
                message: resp.error.unwrap_or_else(|| "unspecified error".into()),
            })
        }
    }

    /// Queries the module's free-form state report.
    pub fn state_report(&mut self) -> Result<String, ModuleError> {
        let id = self.next_id;
        self.next_id += 1;
        let resp = self.roundtrip(&Request::state(id), "state", CONNECT_TIMEOUT)?;
        self.absorb_state(&resp);
        Ok(resp.result.unwrap_or_default())
    }

    /// True when a spawned module process has exited.
    pub fn process_exited(&mut self) -> bool {
        match &mut self.process {
            Some(c) => !matches!(c.try_wait(), Ok(None)),
            None => false,
        }
    }
}

impl Drop for ModuleClient {
    fn drop(&mut self) {
        self.reset();
        if let Some(mut c) = self.process.take() {
            let _ = c.kill();
            let _ = c.wait();
        }
    }
}
