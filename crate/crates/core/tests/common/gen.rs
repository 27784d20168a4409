//! Random call-tree scenarios for structural tests.
//!
//! Every node gets a script keyed by agent type, node name and turn index.
//! A child's next activation is written at the moment its caller emits the
//! CALL, so the script always matches the order the runtime will run in.

use iact::backend::scripted::Rule;
use iact::backend::Scenario;
use iact::types::AgentSpec;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

const TYPES: &[&str] = &["alpha", "beta", "gamma"];
pub const MAX_GEN_DEPTH: usize = 3;
pub const MAX_GEN_CHILDREN: usize = 3;

struct GenNode {
    name: String,
    agent_type: String,
    depth: usize,
    turns: u64,
    children: Vec<usize>,
}

pub struct Generated {
    pub scenario: Scenario,
    /// Nodes the script will create, root included.
    pub expected_nodes: usize,
    pub expected_calls: usize,
}

struct Gen {
    rng: StdRng,
    nodes: Vec<GenNode>,
    rules: Vec<Rule>,
    calls: usize,
}

impl Gen {
    fn next_turn(&mut self, node: usize) -> u64 {
        let t = self.nodes[node].turns;
        self.nodes[node].turns += 1;
        t
    }

    fn push(&mut self, node: usize, turn: u64, output: String) {
        let n = &self.nodes[node];
        self.rules.push(Rule {
            agent: n.agent_type.clone(),
            name: Some(n.name.clone()),
            turn: Some(turn),
            trigger: None,
            output,
        });
    }

    fn pick_child(&mut self, node: usize) -> Option<usize> {
        if self.nodes[node].depth >= MAX_GEN_DEPTH {
            return None;
        }
        let existing = self.nodes[node].children.clone();
        let reuse = !existing.is_empty() && (existing.len() >= MAX_GEN_CHILDREN || self.rng.gen_bool(0.5));
        if reuse {
            return Some(existing[self.rng.gen_range(0..existing.len())]);
        }
        let id = self.nodes.len();
        let agent_type = TYPES[self.rng.gen_range(0..TYPES.len())].to_string();
        self.nodes.push(GenNode {
            name: format!("n{id}"),
            agent_type,
            depth: self.nodes[node].depth + 1,
            turns: 0,
            children: Vec::new(),
        });
        self.nodes[node].children.push(id);
        Some(id)
    }

    /// One activation of `node`: a few acting steps, then a plain reply.
    fn activation(&mut self, node: usize) {
        let steps = self.rng.gen_range(0..=3);
        for _ in 0..steps {
            let turn = self.next_turn(node);
            let kind = self.rng.gen_range(0..3);
            let define = format!("@DEFINE(v{turn}, \"value {turn}\")");
            let output = match (kind, self.pick_child_if(kind != 0, node)) {
                (_, None) => define,
                (k, Some(child)) => {
                    let (name, ty) = (self.nodes[child].name.clone(), self.nodes[child].agent_type.clone());
                    self.calls += 1;
                    self.activation(child);
                    let call = format!("@CALL(\"{ty}\", \"{name}\")\n```\ntask {turn} for {name}\n```");
                    if k == 2 {
                        format!("{define}\n{call}")
                    } else {
                        call
                    }
                }
            };
            self.push(node, turn, output);
        }
        let turn = self.next_turn(node);
        let name = self.nodes[node].name.clone();
        self.push(node, turn, format!("{name} finished turn {turn}"));
    }

    fn pick_child_if(&mut self, want: bool, node: usize) -> Option<usize> {
        if want {
            self.pick_child(node)
        } else {
            None
        }
    }
}

/// A random scenario with one to three operator inputs.
pub fn random_scenario(seed: u64) -> Generated {
    let mut g = Gen {
        rng: StdRng::seed_from_u64(seed),
        nodes: vec![GenNode {
            name: "root".into(),
            agent_type: "alpha".into(),
            depth: 0,
            turns: 0,
            children: Vec::new(),
        }],
        rules: Vec::new(),
        calls: 0,
    };
    let inputs = g.rng.gen_range(1..=3);
    for _ in 0..inputs {
        g.activation(0);
    }
    let agents = TYPES
        .iter()
        .map(|t| toml::from_str::<AgentSpec>(&format!("type = \"{t}\"\nsystem_prompt = \"You are {t}.\"\n")).unwrap())
        .collect();
    Generated {
        expected_nodes: g.nodes.len(),
        expected_calls: g.calls,
        scenario: Scenario {
            root: Some("alpha".into()),
            agents,
            rules: g.rules,
            default: None,
            inputs: (0..inputs).map(|i| format!("request {i}")).collect(),
            modules: Vec::new(),
            hippocampus: false,
        },
    }
}
