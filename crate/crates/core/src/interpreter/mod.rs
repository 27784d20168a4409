//! Pattern-action interpreter.
//!
//! Model output is scanned for directives of the form
//! `@NAME("text", reference, 42)` optionally followed by a fenced block
//! bound to the pattern's body parameter. See `docs/directive-grammar.md`.

pub mod builtin;
pub mod execute;
mod scan;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use scan::{scan, ArgValue, MalformedDirective, ParsedAction, ScanOutput};

/// Version of the directive grammar documented in `docs/directive-grammar.md`.
pub const GRAMMAR_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamKind {
    String,
    Number,
    Identifier,
    HeredocBody,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub kind: ParamKind,
}

impl Param {
    pub fn new(name: &str, kind: ParamKind) -> Self {
        Param {
            name: name.to_string(),
            kind,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActionKind {
    Internal,
    AgentCall,
    ToolCall,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provider {
    Builtin,
    Module(String),
}

impl fmt::Display for Provider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provider::Builtin => f.write_str("builtin"),
            Provider::Module(m) => write!(f, "module {m}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntaxPattern {
    pub name: String,
    pub params: Vec<Param>,
    pub action_kind: ActionKind,
    pub documentation: String,
    pub provider: Provider,
}

impl SyntaxPattern {
    pub fn signature(&self) -> String {
        let params: Vec<String> = self
            .params
            .iter()
            .map(|p| match p.kind {
                ParamKind::HeredocBody => format!("{}: body", p.name),
                ParamKind::String => format!("{}: string", p.name),
                ParamKind::Number => format!("{}: number", p.name),
                ParamKind::Identifier => format!("{}: identifier", p.name),
            })
            .collect();
        format!("@{}({})", self.name, params.join(", "))
    }

    fn same_schema(&self, other: &SyntaxPattern) -> bool {
        self.params == other.params && self.action_kind == other.action_kind && self.provider == other.provider
    }

    pub fn heredoc_param(&self) -> Option<&Param> {
        self.params.last().filter(|p| p.kind == ParamKind::HeredocBody)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PatternError {
    #[error("invalid pattern name '{0}': names are uppercase identifiers ([A-Z][A-Z0-9_]*)")]
    InvalidName(String),
    #[error("pattern {name}: invalid parameter name '{param}'")]
    InvalidParam { name: String, param: String },
    #[error("pattern {0}: at most one body parameter is allowed and it must be last")]
    BodyNotLast(String),
    #[error("schema conflict for {name}: existing {existing} ({existing_provider}) vs new {new} ({new_provider})")]
    SchemaConflict {
        name: String,
        existing: String,
        existing_provider: String,
        new: String,
        new_provider: String,
    },
}

pub fn is_pattern_name(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_uppercase())
        && chars.all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || c == '_')
}

/// A named collection of syntax patterns.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PatternSet {
    patterns: BTreeMap<String, SyntaxPattern>,
}

impl PatternSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `p`. Registering an identical schema again is a no-op.
    pub fn register(&mut self, p: SyntaxPattern) -> Result<(), PatternError> {
        if !is_pattern_name(&p.name) {
            return Err(PatternError::InvalidName(p.name));
        }
        if let Some(bad) = p.params.iter().find(|q| !crate::variables::is_identifier(&q.name)) {
            return Err(PatternError::InvalidParam {
                name: p.name.clone(),
                param: bad.name.clone(),
            });
        }
        let bodies = p.params.iter().filter(|q| q.kind == ParamKind::HeredocBody).count();
        if bodies > 1 || (bodies == 1 && p.heredoc_param().is_none()) {
            return Err(PatternError::BodyNotLast(p.name));
        }
        match self.patterns.get(&p.name) {
            Some(existing) if existing.same_schema(&p) => Ok(()),
            Some(existing) => Err(PatternError::SchemaConflict {
                name: p.name.clone(),
                existing: existing.signature(),
                existing_provider: existing.provider.to_string(),
                new: p.signature(),
                new_provider: p.provider.to_string(),
            }),
            None => {
                self.patterns.insert(p.name.clone(), p);
                Ok(())
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&SyntaxPattern> {
        self.patterns.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.patterns.contains_key(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<SyntaxPattern> {
        self.patterns.remove(name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.patterns.keys().map(String::as_str).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &SyntaxPattern> {
        self.patterns.values()
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    /// Union with `other`; on a name clash the existing entry wins.
    pub fn merged(&self, other: &PatternSet) -> PatternSet {
        let mut out = self.clone();
        for p in other.iter() {
            out.patterns.entry(p.name.clone()).or_insert_with(|| p.clone());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(params: Vec<Param>) -> SyntaxPattern {
        SyntaxPattern {
            name: "CALL".into(),
            params,
            action_kind: ActionKind::AgentCall,
            documentation: String::new(),
            provider: Provider::Builtin,
        }
    }

    fn call3() -> SyntaxPattern {
        call(vec![
            Param::new("agent_type", ParamKind::String),
            Param::new("name", ParamKind::String),
            Param::new("message", ParamKind::HeredocBody),
        ])
    }

    #[test]
    fn register_and_idempotence() {
        let mut set = PatternSet::new();
        set.register(call3()).unwrap();
        assert!(set.contains("CALL"));
        let before = set.clone();
        set.register(call3()).unwrap();
        assert_eq!(set, before);
    }

    #[test]
    fn conflicting_arity_is_rejected_with_both_definitions() {
        let mut set = PatternSet::new();
        set.register(call3()).unwrap();
        let err = set
            .register(call(vec![Param::new("agent_type", ParamKind::String)]))
            .unwrap_err();
        let text = err.to_string();
        assert!(text.starts_with("schema conflict"), "{text}");
        assert!(text.contains("@CALL(agent_type: string, name: string, message: body)"));
        assert!(text.contains("@CALL(agent_type: string)"));
    }

    #[test]
    fn body_must_be_last_and_unique() {
        let mut set = PatternSet::new();
        let bad = call(vec![
            Param::new("message", ParamKind::HeredocBody),
            Param::new("name", ParamKind::String),
        ]);
        assert!(matches!(set.register(bad), Err(PatternError::BodyNotLast(_))));
        let mut lower = call3();
        lower.name = "call".into();
        assert!(matches!(set.register(lower), Err(PatternError::InvalidName(_))));
    }
}
