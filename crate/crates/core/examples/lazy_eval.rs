//! A compiler agent appends a child's segments to a file without ever
//! holding the whole story in its own context.

use iact::backend::Scenario;
use iact::extmod::scripter::{Scripter, ScripterConfig};
use iact::extmod::server::ModuleServer;
use iact::extmod::Address;
use iact::observability::EventBody;
use iact::{Runtime, RuntimeConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scenario = Scenario::load(concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/lazy_eval.toml").as_ref())?;
    let input = scenario.inputs[0].clone();
    let budget = scenario
        .agents
        .iter()
        .find(|a| a.type_name == "compiler")
        .map(|a| a.context_budget)
        .unwrap_or(0);
    let mut rt = Runtime::from_scenario(scenario, RuntimeConfig::default())?;

    let workspace = tempfile::tempdir()?;
    let server = ModuleServer::spawn(
        &Address::parse("127.0.0.1:0"),
        Scripter::new(ScripterConfig::new(workspace.path()))?,
    )?;
    rt.preload_module(&server.address)?;

    println!("{}", rt.run_root(&input)?.body);
    let story = std::fs::read_to_string(workspace.path().join("story.md"))?;
    let root = rt.root().unwrap();
    let peak = rt
        .log()
        .snapshot()
        .iter()
        .filter(|e| e.node == root)
        .filter_map(|e| match e.body {
            EventBody::LlmTurn { usage, .. } => Some(usage),
            _ => None,
        })
        .max()
        .unwrap_or(0);
    println!(
        "story.md: {} chars (about {} tokens)",
        story.len(),
        story.len().div_ceil(4)
    );
    println!("root budget {budget}, root peak usage {peak}");
    Ok(())
}
