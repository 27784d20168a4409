//! Bundled state-machine module: a browser over a directory of markdown
//! documents. Only the functions that make sense in the current state are
//! visible.
//!
//! ```text
//! Start --BROWSE--> PageLoaded --INPUT--> InputFilled
//!                      ^                      |
//!                      +------CLICK(submit)---+
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::server::{ModuleHandler, Outcome};
use super::wire::{FunctionDoc, WireArg};
use crate::interpreter::{Param, ParamKind};
use crate::variables::WireBlob;

pub const START: &str = "Start";
pub const PAGE_LOADED: &str = "PageLoaded";
pub const INPUT_FILLED: &str = "InputFilled";
const PAGE_LINES: usize = 20;
const SEARCH_FIELD: &str = "search";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BrowserState {
    Start,
    PageLoaded,
    InputFilled,
}

impl BrowserState {
    pub fn name(self) -> &'static str {
        match self {
            BrowserState::Start => START,
            BrowserState::PageLoaded => PAGE_LOADED,
            BrowserState::InputFilled => INPUT_FILLED,
        }
    }
}

#[derive(Debug, Clone)]
struct Link {
    text: String,
    target: String,
}

#[derive(Debug, Clone)]
struct Page {
    title: String,
    lines: Vec<String>,
    links: Vec<Link>,
}

#[derive(Debug)]
pub struct DocBrowser {
    corpus: PathBuf,
    state: BrowserState,
    page: Option<Page>,
    offset: usize,
    input: Option<(String, String)>,
}

fn states(names: &[&str]) -> Option<Vec<String>> {
    Some(names.iter().map(|s| s.to_string()).collect())
}

fn parse_links(text: &str) -> Vec<Link> {
    let mut links = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find('[') {
        let after = &rest[open + 1..];
        let Some(close) = after.find("](") else { break };
        let label = &after[..close];
        let tail = &after[close + 2..];
        let Some(end) = tail.find(')') else { break };
        let is_embed = open > 0 && rest.as_bytes()[open - 1] == b'!';
        if !is_embed && !label.contains('\n') && !label.contains('[') {
            links.push(Link {
                text: label.to_string(),
                target: tail[..end].to_string(),
            });
        }
        rest = &tail[end + 1..];
    }
    links
}

impl DocBrowser {
    pub fn new(corpus: impl Into<PathBuf>) -> Self {
        DocBrowser {
            corpus: corpus.into(),
            state: BrowserState::Start,
            page: None,
            offset: 0,
            input: None,
        }
    }

    pub fn current(&self) -> BrowserState {
        self.state
    }

    fn resolve(&self, target: &str) -> Result<PathBuf, String> {
        let rel = Path::new(target);
        if rel.is_absolute() || rel.components().any(|c| matches!(c, std::path::Component::ParentDir)) {
            return Err(format!("'{target}' is outside the document corpus"));
        }
        for candidate in [self.corpus.join(target), self.corpus.join(format!("{target}.md"))] {
            if candidate.is_file() {
                return Ok(candidate);
            }
        }
        Err(format!(
            "no document '{target}'; documents: {}",
            self.documents().join(", ")
        ))
    }

    fn documents(&self) -> Vec<String> {
        let mut docs: Vec<String> = fs::read_dir(&self.corpus)
            .map(|rd| {
                rd.filter_map(Result::ok)
                    .filter_map(|e| {
                        let n = e.file_name().to_string_lossy().into_owned();
                        n.strip_suffix(".md").map(str::to_string)
                    })
                    .collect()
            })
            .unwrap_or_default();
        docs.sort();
        docs
    }

    fn load(&mut self, target: &str) -> Result<(), String> {
        let path = self.resolve(target)?;
        let text = fs::read_to_string(&path).map_err(|e| format!("cannot read '{target}': {e}"))?;
        self.page = Some(Page {
            title: target.trim_end_matches(".md").to_string(),
            lines: text.lines().map(str::to_string).collect(),
            links: parse_links(&text),
        });
        self.offset = 0;
        self.input = None;
        self.state = BrowserState::PageLoaded;
        Ok(())
    }

    fn search(&mut self, query: &str) {
        let words: Vec<String> = query.split_whitespace().map(str::to_lowercase).collect();
        let mut hits = Vec::new();
        for doc in self.documents() {
            let text = fs::read_to_string(self.corpus.join(format!("{doc}.md")))
                .unwrap_or_default()
                .to_lowercase();
            if !words.is_empty() && words.iter().all(|w| text.contains(w.as_str())) {
                hits.push(doc);
            }
        }
        let mut lines = vec![format!("# Search results for \"{query}\""), String::new()];
        if hits.is_empty() {
            lines.push("No matching documents.".into());
        }
        let links: Vec<Link> = hits
            .iter()
            .map(|h| Link {
                text: h.clone(),
                target: h.clone(),
            })
            .collect();
        for h in &hits {
            lines.push(format!("- [{h}]({h})"));
        }
        self.page = Some(Page {
            title: "search".into(),
            lines,
            links,
        });
        self.offset = 0;
        self.input = None;
        self.state = BrowserState::PageLoaded;
    }

    fn available(&self) -> String {
        let funcs = self.functions();
        let visible: Vec<String> = funcs
            .iter()
            .filter(|f| f.visible_in(Some(self.state.name())))
            .map(|f| {
                if self.state == BrowserState::InputFilled && f.name == "CLICK" {
                    "CLICK(submit)".to_string()
                } else {
                    f.name.clone()
                }
            })
            .collect();
        visible.join(", ")
    }

    fn render(&self) -> String {
        let mut out = String::new();
        match (&self.page, self.state) {
            (_, BrowserState::Start) => out.push_str("Content: (no page loaded)\n"),
            (Some(p), BrowserState::InputFilled) => {
                let (field, text) = self.input.as_ref().expect("input state carries input");
                out.push_str(&format!("Content: [Input] {field} = \"{text}\" on page {}\n", p.title));
            }
            (Some(p), _) => {
                let end = (self.offset + PAGE_LINES).min(p.lines.len());
                out.push_str(&format!(
                    "Content: {} (lines {}-{} of {})\n",
                    p.title,
                    if p.lines.is_empty() { 0 } else { self.offset + 1 },
                    end,
                    p.lines.len()
                ));
                for l in &p.lines[self.offset.min(end)..end] {
                    out.push_str(l);
                    out.push('\n');
                }
                if !p.links.is_empty() {
                    out.push_str("Links:");
                    for (i, l) in p.links.iter().enumerate() {
                        out.push_str(&format!(" [{}] {}", i + 1, l.text));
                    }
                    out.push('\n');
                }
                out.push_str(&format!("Fields: {SEARCH_FIELD}\n"));
            }
            (None, _) => out.push_str("Content: (empty)\n"),
        }
        out.push_str(&format!("Available: {}", self.available()));
        out
    }

    fn text_arg(args: &BTreeMap<String, WireArg>, blobs: &[WireBlob], name: &str) -> Result<String, String> {
        args.get(name)
            .ok_or_else(|| format!("missing argument '{name}'"))?
            .to_text(blobs)
    }
}

impl ModuleHandler for DocBrowser {
    fn name(&self) -> &str {
        "docbrowser"
    }

    fn functions(&self) -> Vec<FunctionDoc> {
        vec![
            FunctionDoc {
                name: "BROWSE".into(),
                params: vec![Param::new("target", ParamKind::String)],
                documentation: "Open a document of the local corpus by name and show its first page.".into(),
                visible_in_states: states(&[START]),
            },
            FunctionDoc {
                name: "SCROLL".into(),
                params: vec![Param::new("direction", ParamKind::String)],
                documentation: "Scroll the loaded document \"up\" or \"down\" by one page.".into(),
                visible_in_states: states(&[PAGE_LOADED]),
            },
            FunctionDoc {
                name: "CLICK".into(),
                params: vec![Param::new("link_id", ParamKind::String)],
                documentation: "Follow a numbered link on the page, or \"submit\" the filled search field.".into(),
                visible_in_states: states(&[PAGE_LOADED, INPUT_FILLED]),
            },
            FunctionDoc {
                name: "INPUT".into(),
                params: vec![
                    Param::new("field", ParamKind::String),
                    Param::new("text", ParamKind::HeredocBody),
                ],
                documentation: "Type text into a form field of the page, such as the search field.".into(),
                visible_in_states: states(&[PAGE_LOADED]),
            },
        ]
    }

    fn state(&self) -> Option<String> {
        Some(self.state.name().to_string())
    }

    fn invoke(
        &mut self,
        function: &str,
        args: &BTreeMap<String, WireArg>,
        blobs: &[WireBlob],
    ) -> Result<Outcome, String> {
        match (function, self.state) {
            ("BROWSE", BrowserState::Start) => {
                let target = Self::text_arg(args, blobs, "target")?;
                self.load(&target)?;
            }
            ("SCROLL", BrowserState::PageLoaded) => {
                let dir = Self::text_arg(args, blobs, "direction")?;
                let len = self.page.as_ref().map_or(0, |p| p.lines.len());
                match dir.as_str() {
                    "down" => {
                        if self.offset + PAGE_LINES < len {
                            self.offset += PAGE_LINES;
                        }
                    }
                    "up" => self.offset = self.offset.saturating_sub(PAGE_LINES),
                    other => return Err(format!("direction must be \"up\" or \"down\", not \"{other}\"")),
                }
            }
            ("INPUT", BrowserState::PageLoaded) => {
                let field = Self::text_arg(args, blobs, "field")?;
                if field != SEARCH_FIELD {
                    return Err(format!("no field '{field}' on this page; fields: {SEARCH_FIELD}"));
                }
                let text = Self::text_arg(args, blobs, "text")?;
                self.input = Some((field, text));
                self.state = BrowserState::InputFilled;
            }
            ("CLICK", BrowserState::InputFilled) => {
                let id = Self::text_arg(args, blobs, "link_id")?;
                if id != "submit" {
                    return Err(format!(
                        "only CLICK(\"submit\") is possible while a field is filled, not \"{id}\""
                    ));
                }
                let (_, query) = self.input.clone().expect("input state carries input");
                self.search(&query);
            }
            ("CLICK", BrowserState::PageLoaded) => {
                let id = Self::text_arg(args, blobs, "link_id")?;
                let links = self.page.as_ref().map(|p| p.links.clone()).unwrap_or_default();
                let link = id
                    .parse::<usize>()
                    .ok()
                    .and_then(|n| n.checked_sub(1))
                    .and_then(|n| links.get(n))
                    .ok_or_else(|| format!("no link [{id}] on this page ({} links)", links.len()))?;
                self.load(&link.target.clone())?;
            }
            (f, s) => return Err(format!("{f} is not available in state {}", s.name())),
        }
        Ok(Outcome::text(self.render()))
    }

    fn report(&mut self) -> String {
        self.render()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus() -> tempfile::TempDir {
        let d = tempfile::tempdir().unwrap();
        fs::write(
            d.path().join("doc1.md"),
            "# Doc one\nSee [the second](doc2).\nrust is fun\n",
        )
        .unwrap();
        fs::write(d.path().join("doc2.md"), "# Doc two\nabout rust crates\n").unwrap();
        d
    }

    fn arg(pairs: &[(&str, &str)]) -> BTreeMap<String, WireArg> {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), WireArg::Text(v.to_string())))
            .collect()
    }

    #[test]
    fn follows_links_and_searches() {
        let d = corpus();
        let mut b = DocBrowser::new(d.path());
        let out = b.invoke("BROWSE", &arg(&[("target", "doc1")]), &[]).unwrap();
        assert!(out.text.contains("Links: [1] the second"), "{}", out.text);
        assert!(out.text.ends_with("Available: SCROLL, CLICK, INPUT"));
        let out = b.invoke("CLICK", &arg(&[("link_id", "1")]), &[]).unwrap();
        assert!(out.text.contains("about rust crates"));
        b.invoke("INPUT", &arg(&[("field", "search"), ("text", "rust")]), &[])
            .unwrap();
        assert_eq!(b.current(), BrowserState::InputFilled);
        assert!(b.invoke("CLICK", &arg(&[("link_id", "1")]), &[]).is_err());
        let out = b.invoke("CLICK", &arg(&[("link_id", "submit")]), &[]).unwrap();
        assert!(out.text.contains("[1] doc1 [2] doc2"), "{}", out.text);
        assert_eq!(b.current(), BrowserState::PageLoaded);
    }

    #[test]
    fn embeds_are_not_links() {
        let links = parse_links("![img](a.png) and [x](y)");
        assert_eq!(links.len(), 1);
        assert_eq!(links[0].target, "y");
    }
}
