//! Registering a module program written in another language at runtime.
//! Needs `python3` on the path.

use std::time::Duration;

use iact::backend::Scenario;
use iact::extmod::scripter::{Scripter, ScripterConfig};
use iact::extmod::server::ModuleServer;
use iact::extmod::synth::{register_synthesized_module, SynthRequest};
use iact::extmod::{Address, FunctionDoc, WireArg};
use iact::interpreter::builtin::builtin_patterns;
use iact::interpreter::{Param, ParamKind};
use iact::{Runtime, RuntimeConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let program = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/echo_module.py"))?;
    let scenario = Scenario::load(concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/hello.toml").as_ref())?;
    let mut rt = Runtime::from_scenario(scenario, RuntimeConfig::default())?;

    // The program is written into the scripter's workspace and started there.
    let workspace = tempfile::tempdir()?;
    let server = ModuleServer::spawn(
        &Address::parse("127.0.0.1:0"),
        Scripter::new(ScripterConfig::new(workspace.path()))?,
    )?;
    rt.preload_module(&server.address)?;

    let manifest = vec![FunctionDoc {
        name: "REVERSE".into(),
        params: vec![Param::new("text", ParamKind::String)],
        documentation: "Reverses the characters of a text.".into(),
        visible_in_states: None,
    }];
    let desc = register_synthesized_module(
        rt.modules_mut(),
        SynthRequest {
            program: &program,
            manifest: &manifest,
            env: &[],
            handshake_timeout: Duration::from_secs(10),
        },
        &builtin_patterns(),
    )?;
    println!("registered {} at {}", desc.module_name, desc.address);
    let args = [("text".to_string(), WireArg::Text("stressed".into()))]
        .into_iter()
        .collect();
    let (_, out) = rt.modules_mut().invoke("REVERSE", args, Vec::new())?;
    println!("REVERSE(\"stressed\") = {}", out.text);
    Ok(())
}
