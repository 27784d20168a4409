//! Saving a session between turns and picking it up in a fresh runtime.

use iact::backend::Scenario;
use iact::observability::transcript::render_registry;
use iact::{Runtime, RuntimeConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/escalation.toml");
    let scenario = Scenario::load(path.as_ref())?;
    let inputs = scenario.inputs.clone();
    let dir = tempfile::tempdir()?;
    let session = dir.path().join("poem.iact");

    let mut rt = Runtime::from_scenario(scenario.clone(), RuntimeConfig::default())?;
    println!("{}\n", rt.run_root(&inputs[0])?.body);
    rt.persist(&session)?;
    drop(rt);
    println!(
        "saved {} bytes to {}",
        std::fs::metadata(&session)?.len(),
        session.display()
    );

    let mut rt = Runtime::restore_scenario(&session, scenario, RuntimeConfig::default())?;
    println!("restored {} nodes\n", rt.nodes().len());
    println!("{}\n", rt.run_root(&inputs[1])?.body);
    print!("{}", render_registry(rt.nodes()));
    Ok(())
}
