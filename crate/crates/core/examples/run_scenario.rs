//! Runs a scripted scenario file and prints the replies and the transcript.
//!
//! ```text
//! cargo run --example run_scenario -- scenarios/escalation.toml
//! ```

use std::path::PathBuf;

use iact::backend::Scenario;
use iact::observability::transcript::render_registry;
use iact::{Runtime, RuntimeConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios/hello.toml"));
    let scenario = Scenario::load(&path)?;
    let inputs = scenario.inputs.clone();
    let config = RuntimeConfig {
        hippocampus: scenario.hippocampus,
        ..RuntimeConfig::default()
    };
    let mut rt = Runtime::from_scenario(scenario, config)?;
    for input in &inputs {
        let reply = rt.run_root(input)?;
        println!("> {input}\n{}\n", reply.body);
    }
    print!("{}", render_registry(rt.nodes()));
    Ok(())
}
