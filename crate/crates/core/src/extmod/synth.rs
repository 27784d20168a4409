//! Runtime registration of agent-written module programs.

use std::io::{BufRead, BufReader};
use std::os::unix::fs::PermissionsExt;
use std::path::PathBuf;
use std::process::{Child, Command, Stdio};
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use sha2::{Digest, Sha256};

use super::client::{ModuleClient, ModuleDescriptor, ModuleError};
use super::registry::{LoadError, ModuleRegistry};
use super::transport::Address;
use super::wire::FunctionDoc;
use crate::interpreter::PatternSet;

pub const DEFAULT_HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(10);
/// Environment variable telling a module program where to listen.
pub const LISTEN_ENV: &str = "IACT_MODULE_LISTEN";

pub struct SynthRequest<'a> {
    pub program: &'a str,
    pub manifest: &'a [FunctionDoc],
    /// Extra environment for the module process (credentials live only here).
    pub env: &'a [(String, String)],
    pub handshake_timeout: Duration,
}

/// Starts a module program with `IACT_MODULE_LISTEN` set to an ephemeral
/// port and waits for its `LISTEN <address>` line.
pub fn spawn_listening(mut cmd: Command, timeout: Duration) -> Result<(Child, Address), ModuleError> {
    let mut child = cmd
        .env(LISTEN_ENV, "127.0.0.1:0")
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .spawn()
        .map_err(|e| ModuleError::Spawn(format!("{:?}: {e}", cmd.get_program())))?;

    let stdout = child.stdout.take().expect("piped");
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let mut line = String::new();
        let mut reader = BufReader::new(stdout);
        let _ = reader.read_line(&mut line);
        let _ = tx.send(line);
        // Keep draining so the program never blocks on a full pipe.
        let mut sink = String::new();
        while matches!(reader.read_line(&mut sink), Ok(n) if n > 0) {
            sink.clear();
        }
    });

    let kill = |mut child: Child, e: ModuleError| {
        let _ = child.kill();
        let _ = child.wait();
        Err(e)
    };
    let line = match rx.recv_timeout(timeout) {
        Ok(l) => l,
        Err(_) => return kill(child, ModuleError::HandshakeTimeout(timeout.as_secs())),
    };
    match line.trim().strip_prefix("LISTEN ") {
        Some(addr) => Ok((child, Address::parse(addr.trim()))),
        None => kill(
            child,
            ModuleError::Spawn(format!(
                "expected 'LISTEN <address>' as the first output line, got {:?}",
                line.trim()
            )),
        ),
    }
}

/// Parses the manifest argument of REGISTER_MODULE: a JSON list of function docs.
pub fn parse_manifest(text: &str) -> Result<Vec<FunctionDoc>, String> {
    serde_json::from_str(text).map_err(|e| {
        format!("manifest must be a JSON list like [{{\"name\": \"REVERSE\", \"params\": [{{\"name\": \"text\", \"kind\": \"string\"}}], \"documentation\": \"...\"}}]: {e}")
    })
}

/// Writes `program` into the scripter workspace, launches it and loads it.
pub fn register_synthesized_module(
    registry: &mut ModuleRegistry,
    req: SynthRequest<'_>,
    reserved: &PatternSet,
) -> Result<ModuleDescriptor, LoadError> {
    let workspace = registry
        .scripter_workspace()
        .ok_or_else(|| ModuleError::Spawn("the scripter module must be loaded to register programs".into()))?;
    let dir = workspace.join(".iact").join("modules");
    std::fs::create_dir_all(&dir).map_err(|e| ModuleError::Spawn(e.to_string()))?;
    let tag = &hex::encode(Sha256::digest(req.program.as_bytes()))[..12];
    let path: PathBuf = dir.join(format!("module_{tag}"));
    std::fs::write(&path, req.program).map_err(|e| ModuleError::Spawn(e.to_string()))?;
    std::fs::set_permissions(&path, std::fs::Permissions::from_mode(0o755))
        .map_err(|e| ModuleError::Spawn(e.to_string()))?;
    let log =
        std::fs::File::create(dir.join(format!("module_{tag}.log"))).map_err(|e| ModuleError::Spawn(e.to_string()))?;

    let mut cmd = Command::new(&path);
    cmd.current_dir(&workspace)
        .envs(req.env.iter().map(|(k, v)| (k.as_str(), v.as_str())))
        .stderr(Stdio::from(log));
    let (child, address) = spawn_listening(cmd, req.handshake_timeout).map_err(|e| match e {
        ModuleError::Spawn(m) => ModuleError::Spawn(format!("{m} (does the program start with a #! line?)")),
        other => other,
    })?;
    let fail = |mut child: Child, e: ModuleError| {
        let _ = child.kill();
        let _ = child.wait();
        Err(LoadError::Module(e))
    };
    let mut client = match ModuleClient::load(&address) {
        Ok(c) => c,
        Err(e) => return fail(child, e),
    };
    let mut advertised: Vec<String> = client.descriptor().functions.iter().map(|f| f.name.clone()).collect();
    let mut declared: Vec<String> = req.manifest.iter().map(|f| f.name.clone()).collect();
    advertised.sort();
    declared.sort();
    if advertised != declared {
        drop(client);
        return fail(
            child,
            ModuleError::ManifestMismatch {
                advertised,
                manifest: declared,
            },
        );
    }
    client.adopt_process(child);
    registry.install(client, reserved)
}
