//! A lead agent talks to two children; repeat calls reuse the same child.

use iact::backend::Scenario;
use iact::observability::{EventBody, TreeShape};
use iact::{Runtime, RuntimeConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scenario = Scenario::load(concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/sibling_delegation.toml").as_ref())?;
    let inputs = scenario.inputs.clone();
    let mut rt = Runtime::from_scenario(scenario, RuntimeConfig::default())?;
    for input in &inputs {
        println!("> {input}\n{}\n", rt.run_root(input)?.body);
    }
    for e in rt.log().snapshot() {
        match e.body {
            EventBody::NodeCreated { name, .. } => println!("created {name}"),
            EventBody::Call { child_name, .. } => println!("  call -> {child_name}"),
            _ => {}
        }
    }
    print!("\n{}", TreeShape::from_registry(rt.nodes()).outline());
    Ok(())
}
