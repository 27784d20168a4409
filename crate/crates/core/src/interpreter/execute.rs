//! Executes scanned actions in document order and builds the feedback text.

use super::builtin::{CALL, COMPRESS, DEFINE, LOAD_MODULE, REGISTER_MODULE};
use super::{ActionKind, ArgValue, ParsedAction, PatternSet, ScanOutput};

/// Grammar reminder appended to malformed-directive feedback.
pub const GRAMMAR_HINT: &str =
    "Directives look like @NAME(\"text\", variable_name, 42); a body goes in a fenced block \
starting right after the closing parenthesis or on the next line.";

/// Runtime services the interpreter dispatches to. Ordinary failures are
/// `Ok(Err(text))` and become feedback; `Err(fault)` aborts the turn.
pub trait ActionEnv {
    type Fault;

    fn define(&mut self, name: &str, content: &ArgValue) -> Result<Result<String, String>, Self::Fault>;
    fn compress(&mut self, summary: &ArgValue) -> Result<Result<String, String>, Self::Fault>;
    fn load_module(&mut self, address: &ArgValue) -> Result<Result<String, String>, Self::Fault>;
    fn register_module(
        &mut self,
        manifest: &ArgValue,
        program: &ArgValue,
    ) -> Result<Result<String, String>, Self::Fault>;
    fn call_agent(
        &mut self,
        agent_type: &ArgValue,
        name: &ArgValue,
        message: &ArgValue,
    ) -> Result<Result<String, String>, Self::Fault>;
    fn tool_call(&mut self, action: &ParsedAction) -> Result<Result<String, String>, Self::Fault>;
}

pub fn banner(pattern: &str) -> String {
    format!("[system note: result of @{pattern}, generated by the runtime and visible only to you]")
}

pub fn error_banner(pattern: &str) -> String {
    format!("[system note: @{pattern} failed; generated by the runtime and visible only to you]")
}

pub fn malformed_banner(pattern: &str) -> String {
    format!("[system note: malformed @{pattern} directive, nothing was executed]")
}

fn arg<'a>(a: &'a ParsedAction, name: &str) -> &'a ArgValue {
    a.arg(name).expect("scan binds every parameter")
}

fn dispatch<E: ActionEnv + ?Sized>(
    a: &ParsedAction,
    active: &PatternSet,
    env: &mut E,
) -> Result<Result<String, String>, E::Fault> {
    let kind = active.get(&a.pattern).map(|p| p.action_kind);
    match (a.pattern.as_str(), kind) {
        (_, Some(ActionKind::ToolCall)) => env.tool_call(a),
        (CALL, _) => env.call_agent(arg(a, "agent_type"), arg(a, "name"), arg(a, "message")),
        (DEFINE, _) => env.define(
            match arg(a, "name") {
                ArgValue::Name(n) => n,
                _ => return Ok(Err("DEFINE needs an identifier name".into())),
            },
            arg(a, "content"),
        ),
        (COMPRESS, _) => env.compress(arg(a, "summary")),
        (LOAD_MODULE, _) => env.load_module(arg(a, "address")),
        (REGISTER_MODULE, _) => env.register_module(arg(a, "manifest"), arg(a, "program")),
        (other, _) => Ok(Err(format!("no handler for @{other}"))),
    }
}

/// Runs the actions of `scanned` and returns the feedback text. Empty output
/// means the scan found nothing, which hands control back to the caller.
pub fn execute<E: ActionEnv + ?Sized>(
    scanned: &ScanOutput,
    active: &PatternSet,
    env: &mut E,
) -> Result<String, E::Fault> {
    enum Item<'a> {
        Action(&'a ParsedAction),
        Bad(&'a super::MalformedDirective),
    }
    let mut items: Vec<(usize, Item<'_>)> = scanned
        .actions
        .iter()
        .map(|a| (a.span.0, Item::Action(a)))
        .chain(scanned.malformed.iter().map(|m| (m.span.0, Item::Bad(m))))
        .collect();
    items.sort_by_key(|(start, _)| *start);

    let mut blocks = Vec::with_capacity(items.len());
    for (_, item) in items {
        let block = match item {
            Item::Action(a) => match dispatch(a, active, env)? {
                Ok(text) => format!("{}\n{text}", banner(&a.pattern)),
                Err(text) => format!("{}\n{text}", error_banner(&a.pattern)),
            },
            Item::Bad(m) => format!("{}\n{}\n{GRAMMAR_HINT}", malformed_banner(&m.pattern), m.reason),
        };
        blocks.push(block);
    }
    Ok(blocks.join("\n\n"))
}
