//! Deterministic rule-based backend driven by a scenario file.
//!
//! ````toml
//! root = "coordinator"
//! inputs = ["write fib"]
//!
//! [[agent]]
//! type = "coordinator"
//! system_prompt = "You coordinate."
//!
//! [[rule]]
//! agent = "coordinator"
//! turn = 0
//! output = '''
//! @CALL("coder", "c1")
//! ```
//! write fib
//! ```
//! '''
//!
//! [[rule]]
//! agent = "coder"
//! trigger = "which style?"
//! output = "functional"
//! ````
//!
//! The first matching rule wins. `trigger` is a substring searched in the
//! volatile part of the request: the turn input and the dynamic notes.
//! `{{turn}}` in an output is replaced by the turn index.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, BackendRequest};
use crate::types::AgentSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rule {
    pub agent: String,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub turn: Option<u64>,
    #[serde(default)]
    pub trigger: Option<String>,
    pub output: String,
}

impl Rule {
    fn matches(&self, req: &BackendRequest, volatile: &str) -> bool {
        self.agent == req.meta.agent_type
            && self.name.as_ref().is_none_or(|n| *n == req.meta.node_name)
            && self.turn.is_none_or(|t| t == req.meta.turn_index)
            && self.trigger.as_ref().is_none_or(|t| volatile.contains(t.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    /// Agent type of the root node.
    #[serde(default)]
    pub root: Option<String>,
    #[serde(default, rename = "agent")]
    pub agents: Vec<AgentSpec>,
    #[serde(default, rename = "rule")]
    pub rules: Vec<Rule>,
    #[serde(default)]
    pub default: Option<String>,
    /// Operator messages that drive the scenario, in order.
    #[serde(default)]
    pub inputs: Vec<String>,
    /// Bundled modules the scenario expects to be loaded: "scripter", "docbrowser".
    #[serde(default)]
    pub modules: Vec<String>,
    /// Whether the scenario expects the associative memory to be on.
    #[serde(default)]
    pub hippocampus: bool,
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Scenario, String> {
        let s: Scenario = toml::from_str(text).map_err(|e| e.to_string())?;
        for a in &s.agents {
            a.check()?;
        }
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Scenario, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Scenario::parse(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    /// The output for `req`, as a pure function of the request.
    pub fn respond(&self, req: &BackendRequest) -> Result<String, BackendError> {
        let volatile: String = req
            .volatile()
            .iter()
            .map(|m| m.text.as_str())
            .collect::<Vec<_>>()
            .join("\n");
        let out = self
            .rules
            .iter()
            .find(|r| r.matches(req, &volatile))
            .map(|r| r.output.as_str())
            .or(self.default.as_deref())
            .ok_or_else(|| BackendError::ScenarioExhausted {
                agent: req.meta.agent_type.clone(),
                name: req.meta.node_name.clone(),
                turn: req.meta.turn_index,
            })?;
        Ok(out.replace("{{turn}}", &req.meta.turn_index.to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    scenario: Scenario,
    /// Every request seen, in order; handy for inspecting renders in tests.
    pub requests: Vec<BackendRequest>,
    pub record: bool,
}

impl ScriptedBackend {
    pub fn new(scenario: Scenario) -> Self {
        ScriptedBackend {
            scenario,
            requests: Vec::new(),
            record: false,
        }
    }

    /// Keeps a copy of every request in `requests`.
    pub fn recording(mut self) -> Self {
        self.record = true;
        self
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }
}

impl Backend for ScriptedBackend {
    fn complete(&mut self, request: &BackendRequest) -> Result<String, BackendError> {
        if request.messages.is_empty() {
            return Err(BackendError::EmptyRequest);
        }
        if self.record {
            self.requests.push(request.clone());
        }
        self.scenario.respond(request)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{RenderedMessage, RequestMeta};
    use crate::types::NodeId;

    fn req(agent: &str, turn: u64, input: &str) -> BackendRequest {
        BackendRequest {
            messages: vec![
                RenderedMessage {
                    role: "system".into(),
                    text: "p".into(),
                },
                RenderedMessage {
                    role: "user".into(),
                    text: input.into(),
                },
            ],
            stable_len: 1,
            meta: RequestMeta {
                agent_type: agent.into(),
                node_name: "c1".into(),
                node_id: NodeId(1),
                turn_index: turn,
            },
            max_tokens: 10,
            temperature: 0.0,
        }
    }

    const SCENARIO: &str = r#"
[[rule]]
agent = "coder"
turn = 0
output = "@BASH(\"ls\")"

[[rule]]
agent = "coder"
trigger = "which style?"
output = "functional"

[[rule]]
agent = "coder"
output = "done {{turn}}"
"#;

    #[test]
    fn first_match_wins() {
        let s = Scenario::parse(SCENARIO).unwrap();
        assert_eq!(s.respond(&req("coder", 0, "which style?")).unwrap(), "@BASH(\"ls\")");
        // Turn 5 skips the turn-0 rule; the trigger fires regardless of turn.
        assert_eq!(s.respond(&req("coder", 5, "so, which style?")).unwrap(), "functional");
        assert_eq!(s.respond(&req("coder", 5, "go")).unwrap(), "done 5");
        assert_eq!(
            s.respond(&req("coder", 5, "go")).unwrap(),
            s.respond(&req("coder", 5, "go")).unwrap()
        );
    }

    #[test]
    fn trigger_ignores_the_stable_prefix() {
        let s = Scenario::parse("[[rule]]\nagent = \"a\"\ntrigger = \"p\"\noutput = \"x\"\n").unwrap();
        assert!(matches!(
            s.respond(&req("a", 0, "q")),
            Err(BackendError::ScenarioExhausted { .. })
        ));
    }

    #[test]
    fn exhausted_without_default() {
        let s = Scenario::parse(SCENARIO).unwrap();
        let err = s.respond(&req("writer", 0, "x")).unwrap_err();
        assert!(err.to_string().starts_with("scenario exhausted"));
    }
}
