//! Pausing a running tree from another thread and slipping in a message.

use std::thread;
use std::time::Duration;

use iact::backend::Scenario;
use iact::runtime::control::Target;
use iact::{Runtime, RuntimeConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scenario = Scenario::load(concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/intervention.toml").as_ref())?;
    let input = scenario.inputs[0].clone();
    let mut rt = Runtime::from_scenario(scenario, RuntimeConfig::default())?;
    rt.on_snapshot(|id, snap| {
        for m in snap.turn_input.iter().filter(|m| m.intervention) {
            println!("node {id} sees operator message: {}", m.body);
        }
    });
    let control = rt.control();
    control.pause();
    let worker = thread::spawn(move || rt.run_root(&input).map(|m| m.body));

    if control.wait_until_blocked(Duration::from_secs(5)) {
        let ack = control.inject(Target::Active, "mention which variables you created", 0);
        println!("inject: {}", ack.status);
        control.resume();
    }
    let reply = worker.join().expect("scheduler thread")?;
    println!("reply: {reply}");
    Ok(())
}
