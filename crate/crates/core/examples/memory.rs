//! Associative memory carries a constraint from the user to a deep leaf
//! that never saw the original message.

use std::sync::Arc;

use iact::backend::Scenario;
use iact::clock::FrozenClock;
use iact::runtime::notes::NoteTag;
use iact::{Runtime, RuntimeConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scenario = Scenario::load(concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/tunnel_vision.toml").as_ref())?;
    let inputs = scenario.inputs.clone();
    for hippocampus in [false, true] {
        let clock = Arc::new(FrozenClock::at(1_700_000_000_000));
        let config = RuntimeConfig {
            hippocampus,
            ..RuntimeConfig::default()
        };
        let mut rt = Runtime::from_scenario(scenario.clone(), config)?.with_clock(clock.clone());
        rt.on_snapshot(|_, snap| {
            if let Some(b) = snap.dynamic_notes.get(NoteTag::MemoryFragment) {
                if snap.turn_input.iter().any(|m| m.body.contains("convert")) {
                    println!("memory fragments for the calculator:\n{}", b.body);
                }
            }
        });
        for input in &inputs {
            clock.advance(60_000);
            rt.run_root(input)?;
        }
        let k1 = rt.find(&["a1", "e1", "k1"]).expect("calculator node");
        let answer = &rt.node(k1).unwrap().history.last().unwrap().body;
        println!(
            "memory {}: calculator answered {answer:?}\n",
            if hippocampus { "on" } else { "off" }
        );
    }
    Ok(())
}
