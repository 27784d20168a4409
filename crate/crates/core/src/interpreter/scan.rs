use serde::{Deserialize, Serialize};

use super::{ParamKind, PatternSet, SyntaxPattern};
use crate::protocol::{block_at, block_inline};
use crate::variables::is_identifier;

/// A bound argument value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArgValue {
    Text(String),
    Number(f64),
    /// A literal identifier (for identifier-kind parameters).
    Name(String),
    /// A variable reference, resolved at execution time.
    Ref(String),
    /// Several body fragments to concatenate in order.
    Parts(Vec<ArgValue>),
}

impl ArgValue {
    /// Variable names referenced by this value, in order.
    pub fn references(&self) -> Vec<&str> {
        match self {
            ArgValue::Ref(n) => vec![n.as_str()],
            ArgValue::Parts(p) => p.iter().flat_map(ArgValue::references).collect(),
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedAction {
    pub pattern: String,
    pub arguments: Vec<(String, ArgValue)>,
    pub span: (usize, usize),
}

impl ParsedAction {
    pub fn arg(&self, name: &str) -> Option<&ArgValue> {
        self.arguments.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MalformedDirective {
    pub pattern: String,
    pub span: (usize, usize),
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScanOutput {
    pub actions: Vec<ParsedAction>,
    pub malformed: Vec<MalformedDirective>,
}

impl ScanOutput {
    /// True when the output carries nothing for the interpreter to act on.
    pub fn is_empty(&self) -> bool {
        self.actions.is_empty() && self.malformed.is_empty()
    }
}

enum Raw {
    Str(String),
    Num(f64),
    Ident(String),
}

struct Failure {
    reason: String,
    at: usize,
}

fn is_word(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_'
}

fn line_end(text: &str, from: usize) -> usize {
    text[from..].find('\n').map_or(text.len(), |i| from + i)
}

fn skip_ws(b: &[u8], mut i: usize) -> usize {
    while i < b.len() && matches!(b[i], b' ' | b'\t' | b'\n' | b'\r') {
        i += 1;
    }
    i
}

fn parse_string(text: &str, start: usize) -> Result<(String, usize), Failure> {
    // `start` points at the opening quote.
    let mut out = String::new();
    let mut chars = text[start + 1..].char_indices();
    while let Some((off, c)) = chars.next() {
        match c {
            '"' => return Ok((out, start + 1 + off + 1)),
            '\\' => match chars.next() {
                Some((_, '"')) => out.push('"'),
                Some((_, '\\')) => out.push('\\'),
                Some((_, 'n')) => out.push('\n'),
                Some((_, 't')) => out.push('\t'),
                Some((_, 'r')) => out.push('\r'),
                Some((o, other)) => {
                    return Err(Failure {
                        reason: format!("bad escape '\\{other}' (allowed: \\\" \\\\ \\n \\t \\r)"),
                        at: start + 1 + o,
                    })
                }
                None => break,
            },
            _ => out.push(c),
        }
    }
    Err(Failure {
        reason: "unterminated string".to_string(),
        at: text.len(),
    })
}

fn parse_args(text: &str, open: usize) -> Result<(Vec<Raw>, usize), Failure> {
    // `open` is just past '('. Returns the args and the offset just past ')'.
    let b = text.as_bytes();
    let mut args = Vec::new();
    let mut i = skip_ws(b, open);
    if i < b.len() && b[i] == b')' {
        return Ok((args, i + 1));
    }
    loop {
        if i >= b.len() {
            return Err(Failure {
                reason: "unbalanced parentheses: missing ')'".into(),
                at: i,
            });
        }
        match b[i] {
            b'"' => {
                let (s, next) = parse_string(text, i)?;
                args.push(Raw::Str(s));
                i = next;
            }
            b'-' | b'0'..=b'9' => {
                let start = i;
                if b[i] == b'-' {
                    i += 1;
                }
                let digits = i;
                while i < b.len() && b[i].is_ascii_digit() {
                    i += 1;
                }
                if i < b.len() && b[i] == b'.' {
                    i += 1;
                    while i < b.len() && b[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                let lit = &text[start..i];
                match lit.parse::<f64>() {
                    Ok(v) if i > digits => args.push(Raw::Num(v)),
                    _ => {
                        return Err(Failure {
                            reason: format!("bad number '{lit}'"),
                            at: start,
                        })
                    }
                }
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let start = i;
                while i < b.len() && is_word(b[i]) {
                    i += 1;
                }
                args.push(Raw::Ident(text[start..i].to_string()));
            }
            b'(' => {
                return Err(Failure {
                    reason: "nested parentheses are not allowed in arguments".into(),
                    at: i,
                })
            }
            _ => {
                let c = text[i..].chars().next().unwrap_or(' ');
                return Err(Failure {
                    reason: format!("unexpected '{c}' in arguments; expected a quoted string, number or identifier"),
                    at: i,
                });
            }
        }
        i = skip_ws(b, i);
        match b.get(i) {
            Some(b',') => i = skip_ws(b, i + 1),
            Some(b')') => return Ok((args, i + 1)),
            Some(_) => {
                let c = text[i..].chars().next().unwrap_or(' ');
                return Err(Failure {
                    reason: format!("expected ',' or ')' but found '{c}'"),
                    at: i,
                });
            }
            None => {
                return Err(Failure {
                    reason: "unbalanced parentheses: missing ')'".into(),
                    at: i,
                })
            }
        }
    }
}

fn convert(raw: Raw, kind: ParamKind, param: &str) -> Result<ArgValue, String> {
    match (kind, raw) {
        (ParamKind::String, Raw::Str(s)) => Ok(ArgValue::Text(s)),
        (ParamKind::String, Raw::Ident(n)) => Ok(ArgValue::Ref(n)),
        (ParamKind::String, Raw::Num(v)) => Ok(ArgValue::Text(number_text(v))),
        (ParamKind::Number, Raw::Num(v)) => Ok(ArgValue::Number(v)),
        (ParamKind::Identifier, Raw::Ident(n)) => Ok(ArgValue::Name(n)),
        (ParamKind::Identifier, Raw::Str(s)) if is_identifier(&s) => Ok(ArgValue::Name(s)),
        (ParamKind::HeredocBody, Raw::Str(s)) => Ok(ArgValue::Text(s)),
        (ParamKind::HeredocBody, Raw::Ident(n)) => Ok(ArgValue::Ref(n)),
        (ParamKind::HeredocBody, Raw::Num(v)) => Ok(ArgValue::Number(v)),
        (kind, _) => Err(format!("argument '{param}' expects {}", kind_label(kind))),
    }
}

fn number_text(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

fn kind_label(k: ParamKind) -> &'static str {
    match k {
        ParamKind::String => "a quoted string or a variable name",
        ParamKind::Number => "a number",
        ParamKind::Identifier => "an identifier",
        ParamKind::HeredocBody => "body text",
    }
}

fn bind(p: &SyntaxPattern, args: Vec<Raw>, fence: Option<String>) -> Result<Vec<(String, ArgValue)>, String> {
    let body = p.heredoc_param();
    let fixed = &p.params[..p.params.len() - usize::from(body.is_some())];
    let mut args = args.into_iter();
    let mut out = Vec::new();
    let given = args.len();
    match (body, &fence) {
        (None, _) if given != fixed.len() => {
            return Err(format!(
                "{} takes {} argument(s), got {given}; usage: {}",
                p.name,
                fixed.len(),
                p.signature()
            ))
        }
        (Some(_), Some(_)) if given > fixed.len() => {
            return Err(format!(
                "{} body given both inline and as a fenced block; usage: {}",
                p.name,
                p.signature()
            ))
        }
        (Some(_), Some(_)) if given < fixed.len() => {
            return Err(format!(
                "{} takes {} argument(s) before its body, got {given}; usage: {}",
                p.name,
                fixed.len(),
                p.signature()
            ))
        }
        (Some(_), None) if given <= fixed.len() => {
            return Err(format!(
                "{} is missing its body: add a fenced block right after the directive; usage: {}",
                p.name,
                p.signature()
            ))
        }
        _ => {}
    }
    for param in fixed {
        let raw = args.next().expect("arity checked");
        out.push((param.name.clone(), convert(raw, param.kind, &param.name)?));
    }
    if let Some(bp) = body {
        let value = match fence {
            Some(content) => ArgValue::Text(content),
            None => {
                let mut parts: Vec<ArgValue> = args
                    .map(|r| convert(r, ParamKind::HeredocBody, &bp.name))
                    .collect::<Result<_, _>>()?;
                if parts.len() == 1 {
                    parts.pop().expect("one part")
                } else {
                    ArgValue::Parts(parts)
                }
            }
        };
        out.push((bp.name.clone(), value));
    }
    Ok(out)
}

/// Looks for a body fence right after a directive: on the same line after
/// optional blanks, or at the start of the next line.
fn trailing_fence(text: &str, after: usize) -> Option<crate::protocol::FencedBlock> {
    let b = text.as_bytes();
    let mut j = after;
    while j < b.len() && (b[j] == b' ' || b[j] == b'\t') {
        j += 1;
    }
    if j < b.len() && (b[j] == b'`' || b[j] == b'~') {
        return block_inline(text, j);
    }
    if j < b.len() && b[j] == b'\n' {
        return block_at(text, j + 1);
    }
    None
}

enum Directive {
    Ok(ParsedAction),
    Bad(MalformedDirective),
}

fn parse_directive(text: &str, at: usize, name: &str, pattern: &SyntaxPattern) -> (Directive, usize) {
    let open = at + 1 + name.len() + 1;
    let (raw, close) = match parse_args(text, open) {
        Ok(v) => v,
        Err(f) => {
            let end = line_end(text, f.at.min(text.len()).max(at));
            return (
                Directive::Bad(MalformedDirective {
                    pattern: name.to_string(),
                    span: (at, end),
                    reason: f.reason,
                }),
                end,
            );
        }
    };
    let fence = pattern.heredoc_param().and_then(|_| trailing_fence(text, close));
    let end = fence.as_ref().map_or(close, |f| f.end);
    let span = (at, end);
    match bind(pattern, raw, fence.map(|f| f.content)) {
        Ok(arguments) => (
            Directive::Ok(ParsedAction {
                pattern: name.to_string(),
                arguments,
                span,
            }),
            end,
        ),
        Err(reason) => (
            Directive::Bad(MalformedDirective {
                pattern: name.to_string(),
                span,
                reason,
            }),
            end,
        ),
    }
}

/// Finds every directive of the active set in `output`, in document order.
///
/// Fenced code blocks are data and never scanned. Directives whose name is
/// not in `active` are ordinary prose.
pub fn scan(output: &str, active: &PatternSet) -> ScanOutput {
    let b = output.as_bytes();
    let mut out = ScanOutput::default();
    let mut pos = 0;
    let mut line_start = true;
    while pos < b.len() {
        if line_start {
            if let Some(block) = block_at(output, pos) {
                pos = block.end;
                continue;
            }
            line_start = false;
        }
        match b[pos] {
            b'\n' => {
                pos += 1;
                line_start = true;
                continue;
            }
            b'@' if pos == 0 || !is_word(b[pos - 1]) => {
                let name_start = pos + 1;
                let mut k = name_start;
                while k < b.len() && (b[k].is_ascii_uppercase() || b[k].is_ascii_digit() || b[k] == b'_') {
                    k += 1;
                }
                let name = &output[name_start..k];
                if k < b.len() && b[k] == b'(' && !name.is_empty() {
                    if let Some(p) = active.get(name) {
                        let (d, end) = parse_directive(output, pos, name, p);
                        match d {
                            Directive::Ok(a) => out.actions.push(a),
                            Directive::Bad(m) => out.malformed.push(m),
                        }
                        pos = end.max(pos + 1);
                        line_start = pos > 0 && b[pos - 1] == b'\n';
                        continue;
                    }
                }
                pos += 1;
            }
            _ => pos += 1,
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interpreter::builtin::builtin_patterns;
    use crate::interpreter::{ActionKind, Param, Provider};

    fn active() -> PatternSet {
        let mut set = builtin_patterns();
        set.register(SyntaxPattern {
            name: "BASH".into(),
            params: vec![Param::new("script", ParamKind::HeredocBody)],
            action_kind: ActionKind::ToolCall,
            documentation: String::new(),
            provider: Provider::Module("scripter".into()),
        })
        .unwrap();
        set
    }

    #[test]
    fn single_call_with_fenced_body() {
        let text = "Plan done.\n@CALL(\"coder\", \"c1\")\n```\nwrite unit tests\n```";
        let out = scan(text, &active());
        assert!(out.malformed.is_empty());
        assert_eq!(out.actions.len(), 1);
        let a = &out.actions[0];
        assert_eq!(a.pattern, "CALL");
        assert_eq!(a.arg("agent_type"), Some(&ArgValue::Text("coder".into())));
        assert_eq!(a.arg("name"), Some(&ArgValue::Text("c1".into())));
        assert_eq!(a.arg("message"), Some(&ArgValue::Text("write unit tests".into())));
        assert_eq!(a.span, (11, text.len()));
    }

    #[test]
    fn prose_only() {
        assert!(scan("just prose, no directives", &active()).is_empty());
    }

    #[test]
    fn inline_fence_right_after_paren() {
        let out = scan("@DEFINE(x)```\nhi\n```", &active());
        assert_eq!(out.actions.len(), 1);
        assert_eq!(out.actions[0].arg("content"), Some(&ArgValue::Text("hi".into())));
        assert_eq!(out.actions[0].arg("name"), Some(&ArgValue::Name("x".into())));
    }

    #[test]
    fn unknown_directive_is_prose() {
        let out = scan("relay this: @LAUNCH(\"x\") and @CALL(", &PatternSet::new());
        assert!(out.is_empty());
    }

    #[test]
    fn directives_inside_fences_are_data() {
        let text = "```\n@BASH(\"rm -rf /\")\n```\n";
        assert!(scan(text, &active()).is_empty());
    }

    #[test]
    fn malformed_directives_are_reported() {
        let out = scan("@BASH(\"unterminated\n", &active());
        assert_eq!(out.malformed.len(), 1);
        assert!(out.malformed[0].reason.contains("unterminated"));

        let out = scan("@CALL(\"coder\" \"c1\")\n", &active());
        assert_eq!(out.malformed.len(), 1);
        assert!(out.malformed[0].reason.contains("expected ','"));

        let out = scan("@BASH(\"a\\q\")", &active());
        assert!(out.malformed[0].reason.contains("bad escape"));

        let out = scan("@COMPRESS()\nno body", &active());
        assert!(out.malformed[0].reason.contains("missing its body"));

        let out = scan("@BASH(\"x\"\nnext line @DEFINE(y)```\nz\n```", &active());
        assert_eq!(out.malformed.len(), 1, "{out:?}");
        assert!(out.malformed[0].reason.contains("unbalanced") || out.malformed[0].reason.contains("expected"));
    }

    #[test]
    fn parts_and_references() {
        let out = scan("@BASH(\"ls \", workdir)", &active());
        assert_eq!(
            out.actions[0].arg("script"),
            Some(&ArgValue::Parts(vec![
                ArgValue::Text("ls ".into()),
                ArgValue::Ref("workdir".into())
            ]))
        );
        assert_eq!(out.actions[0].arg("script").unwrap().references(), ["workdir"]);
    }

    #[test]
    fn escapes_are_decoded() {
        let out = scan(r#"@BASH("echo \"a\\b\"\n")"#, &active());
        assert_eq!(
            out.actions[0].arg("script"),
            Some(&ArgValue::Text("echo \"a\\b\"\n".into()))
        );
    }

    #[test]
    fn at_sign_inside_word_is_not_a_directive() {
        assert!(scan("mail me at admin@CALL(\"x\")", &active()).is_empty());
    }
}
