//! An agent with a tiny budget receives an overflow warning and compresses
//! its own history.

use std::sync::{Arc, Mutex};

use iact::backend::Scenario;
use iact::runtime::notes::NoteTag;
use iact::{Runtime, RuntimeConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scenario = Scenario::load(concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/compression.toml").as_ref())?;
    let input = scenario.inputs[0].clone();
    let mut rt = Runtime::from_scenario(scenario, RuntimeConfig::default())?;
    let seen = Arc::new(Mutex::new(Vec::new()));
    let sink = seen.clone();
    rt.on_snapshot(move |_, snap| {
        let warning = snap.dynamic_notes.get(NoteTag::OverflowWarning).map(|b| b.body.clone());
        sink.lock().unwrap().push((snap.history_window.len(), warning));
    });
    println!("{}\n", rt.run_root(&input)?.body);
    for (step, (window, warning)) in seen.lock().unwrap().iter().enumerate() {
        println!("step {step}: {window} messages in view");
        if let Some(w) = warning {
            println!("  warning: {}", w.lines().next().unwrap_or(""));
        }
    }
    Ok(())
}
