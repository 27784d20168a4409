//! The document browser exposes different functions in different states.

use std::collections::BTreeMap;

use iact::extmod::docbrowser::DocBrowser;
use iact::extmod::server::ModuleServer;
use iact::extmod::{Address, ModuleClient, WireArg};

fn args(pairs: &[(&str, &str)]) -> BTreeMap<String, WireArg> {
    pairs
        .iter()
        .map(|(k, v)| (k.to_string(), WireArg::Text(v.to_string())))
        .collect()
}

fn show(client: &ModuleClient) {
    println!(
        "state {:?}: {:?}",
        client.descriptor().current_state.as_deref().unwrap_or("-"),
        client.descriptor().visible_names()
    );
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/corpus");
    let server = ModuleServer::spawn(&Address::parse("127.0.0.1:0"), DocBrowser::new(corpus))?;
    let mut client = ModuleClient::load(&server.address)?;
    show(&client);
    if let Err(e) = client.invoke("SCROLL", args(&[("direction", "down")]), Vec::new(), None) {
        println!("SCROLL refused: {e}");
    }
    let page = client.invoke("BROWSE", args(&[("target", "guide")]), Vec::new(), None)?;
    println!("{}", page.text);
    show(&client);
    client.invoke(
        "INPUT",
        args(&[("field", "search"), ("text", "retry")]),
        Vec::new(),
        None,
    )?;
    show(&client);
    let hits = client.invoke("CLICK", args(&[("link_id", "submit")]), Vec::new(), None)?;
    println!("{}", hits.text);
    show(&client);
    Ok(())
}
