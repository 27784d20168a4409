//! Serving a tool module written in Rust and letting an agent call it.

use std::collections::BTreeMap;

use iact::backend::Scenario;
use iact::extmod::server::{ModuleHandler, ModuleServer, Outcome};
use iact::extmod::{Address, FunctionDoc, WireArg};
use iact::interpreter::{Param, ParamKind};
use iact::variables::WireBlob;
use iact::{Runtime, RuntimeConfig};

struct WordCount;

impl ModuleHandler for WordCount {
    fn name(&self) -> &str {
        "words"
    }

    fn functions(&self) -> Vec<FunctionDoc> {
        vec![FunctionDoc {
            name: "COUNT_WORDS".into(),
            params: vec![Param::new("text", ParamKind::HeredocBody)],
            documentation: "Count the words in a text.".into(),
            visible_in_states: None,
        }]
    }

    fn invoke(&mut self, _: &str, args: &BTreeMap<String, WireArg>, _: &[WireBlob]) -> Result<Outcome, String> {
        let text = match args.get("text") {
            Some(WireArg::Text(t)) => t.clone(),
            other => return Err(format!("expected text, got {other:?}")),
        };
        Ok(Outcome {
            text: format!("{} words", text.split_whitespace().count()),
            blobs: Vec::new(),
            written: Vec::new(),
        })
    }
}

const SCENARIO: &str = r#"
root = "editor"

[[agent]]
type = "editor"
system_prompt = "You edit prose."

[[rule]]
agent = "editor"
turn = 0
output = '''
@COUNT_WORDS()
```
the quick brown fox jumps over the lazy dog
```'''

[[rule]]
agent = "editor"
output = "The sentence is short enough."
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let server = ModuleServer::spawn(&Address::parse("127.0.0.1:0"), WordCount)?;
    let mut rt = Runtime::from_scenario(Scenario::parse(SCENARIO)?, RuntimeConfig::default())?;
    let desc = rt.preload_module(&server.address)?;
    println!("loaded {} with {:?}", desc.module_name, desc.visible_names());
    println!("{}", rt.run_root("is this sentence too long?")?.body);
    let root = rt.node(rt.root().unwrap()).unwrap();
    let result = root.variables.get("count_words_result").unwrap();
    println!("count_words_result = {}", result.content.to_text_lossy());
    Ok(())
}
