//! Rebuilding the tree and every transcript from the event log alone.

use iact::backend::Scenario;
use iact::observability::transcript::inspect_report;
use iact::observability::{dyck_check, reconstruct_from_lines, TreeShape};
use iact::{Runtime, RuntimeConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scenario = Scenario::load(concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/escalation.toml").as_ref())?;
    let inputs = scenario.inputs.clone();
    let mut rt = Runtime::from_scenario(scenario, RuntimeConfig::default())?;
    for input in &inputs {
        rt.run_root(input)?;
    }
    let lines = rt.log().to_lines();
    let rebuilt = reconstruct_from_lines(&lines);
    println!(
        "{} events, balanced: {}",
        rebuilt.events.len(),
        dyck_check(&rebuilt.events).is_ok()
    );
    println!(
        "matches the live tree: {}\n",
        rebuilt.shape == TreeShape::from_registry(rt.nodes())
    );
    print!("{}", inspect_report(&rebuilt));
    Ok(())
}
