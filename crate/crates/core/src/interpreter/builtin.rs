//! Statically linked patterns every agent recognizes.

use super::{ActionKind, Param, ParamKind, PatternSet, Provider, SyntaxPattern};

pub const CALL: &str = "CALL";
pub const DEFINE: &str = "DEFINE";
pub const COMPRESS: &str = "COMPRESS";
pub const LOAD_MODULE: &str = "LOAD_MODULE";
pub const REGISTER_MODULE: &str = "REGISTER_MODULE";

pub const BUILTIN_NAMES: &[&str] = &[CALL, DEFINE, COMPRESS, LOAD_MODULE, REGISTER_MODULE];

fn builtin(name: &str, params: Vec<Param>, kind: ActionKind, doc: &str) -> SyntaxPattern {
    SyntaxPattern {
        name: name.to_string(),
        params,
        action_kind: kind,
        documentation: doc.to_string(),
        provider: Provider::Builtin,
    }
}

pub fn call() -> SyntaxPattern {
    builtin(
        CALL,
        vec![
            Param::new("agent_type", ParamKind::String),
            Param::new("name", ParamKind::String),
            Param::new("message", ParamKind::HeredocBody),
        ],
        ActionKind::AgentCall,
        "Send a message to the child agent called `name`, creating it with type `agent_type` on first use. \
         Your turn resumes with the child's reply. Mention variable names to pass their content along.",
    )
}

pub fn define() -> SyntaxPattern {
    builtin(
        DEFINE,
        vec![
            Param::new("name", ParamKind::Identifier),
            Param::new("content", ParamKind::HeredocBody),
        ],
        ActionKind::Internal,
        "Store the body as a variable. Refer to it later by name instead of repeating its content.",
    )
}

pub fn compress() -> SyntaxPattern {
    builtin(
        COMPRESS,
        vec![Param::new("summary", ParamKind::HeredocBody)],
        ActionKind::Internal,
        "Replace your visible history with the given summary of progress so far. Variables are kept.",
    )
}

pub fn load_module() -> SyntaxPattern {
    builtin(
        LOAD_MODULE,
        vec![Param::new("address", ParamKind::String)],
        ActionKind::Internal,
        "Connect to a tool module at host:port or a local socket path and make its functions available.",
    )
}

pub fn register_module() -> SyntaxPattern {
    builtin(
        REGISTER_MODULE,
        vec![
            Param::new("manifest", ParamKind::String),
            Param::new("program", ParamKind::HeredocBody),
        ],
        ActionKind::Internal,
        "Launch the program as a new tool module. `manifest` is a JSON list of function docs the program \
         must advertise; its functions become callable like any other module's.",
    )
}

pub fn builtin_patterns() -> PatternSet {
    let mut set = PatternSet::new();
    for p in [call(), define(), compress(), load_module(), register_module()] {
        set.register(p).expect("builtin patterns are consistent");
    }
    set
}

/// The builtin subset named by an agent spec.
pub fn builtin_subset(names: &[String]) -> PatternSet {
    let all = builtin_patterns();
    let mut set = PatternSet::new();
    for n in names {
        if let Some(p) = all.get(n) {
            set.register(p.clone()).expect("builtin patterns are consistent");
        }
    }
    set
}
