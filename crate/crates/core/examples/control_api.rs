//! Watching a run through the HTTP control API.

use iact::backend::Scenario;
use iact::control_api::ControlServer;
use iact::{Runtime, RuntimeConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scenario = Scenario::load(concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/sibling_delegation.toml").as_ref())?;
    let inputs = scenario.inputs.clone();
    let mut rt = Runtime::from_scenario(scenario, RuntimeConfig::default())?;
    let server = ControlServer::spawn("127.0.0.1:0", rt.control_context())?;
    println!("control API on {}", server.url());
    for input in &inputs {
        rt.run_root(input)?;
    }
    let tree: serde_json::Value = ureq::get(&format!("{}/tree", server.url())).call()?.into_json()?;
    print!("{}", tree["outline"].as_str().unwrap_or(""));
    println!("{} events", tree["events"]);
    let status = ureq::get(&format!("{}/status", server.url())).call()?.into_string()?;
    println!("status: {status}");
    let tail = ureq::get(&format!("{}/log?from={}", server.url(), rt.log().len() - 2))
        .call()?
        .into_string()?;
    print!("last events:\n{tail}");
    Ok(())
}
